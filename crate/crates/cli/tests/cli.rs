use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aircombat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aircombat")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "iterations = 2\neval_opponents = 2\nno_mcts = true\n[ppo]\nbatch_size = 256\n";

fn tiny_run(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    let o = aircombat(&["train", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = aircombat(&["train", "--seed", "1", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn missing_subcommand_exits_1() {
    assert_eq!(aircombat(&[]).status.code(), Some(1));
}

#[test]
fn selfcheck_passes() {
    let o = aircombat(&["selfcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "iterations = 2\nbatchsize = 3\n").unwrap();
    let o = aircombat(&["train", "--config", bad.to_str().unwrap(), "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("batchsize"));

    fs::write(&bad, "[ppo]\nclip_epsilon = 2.0\n").unwrap();
    let o = aircombat(&["train", "--config", bad.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));

    let missing = dir.path().join("absent.toml");
    let o = aircombat(&["train", "--config", missing.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_replay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_run(dir.path());

    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["iter"], (i + 1) as u64);
        let games = v["wins"].as_u64().unwrap() + v["losses"].as_u64().unwrap() + v["draws"].as_u64().unwrap();
        // One past agent at iteration 1, two at iteration 2.
        assert_eq!(games, 3 * (i as u64 + 1));
        for key in ["surrogate", "value_loss", "entropy", "clip_fraction", "seconds"] {
            assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
        }
    }
    let mut ckpts: Vec<_> = fs::read_dir(out.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    ckpts.sort();
    assert_eq!(ckpts.len(), 2);
    assert_eq!(fs::read_to_string(out.join("matches.jsonl")).unwrap().lines().count(), 9);

    let (a, b) = (ckpts[1].to_str().unwrap(), ckpts[0].to_str().unwrap());
    let o = aircombat(&["eval", "--a", a, "--b", b, "--games", "3", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let results = stdout(&o);
    assert_eq!(results.lines().count(), 3);
    for l in results.lines() {
        let outcome = l.rsplit(' ').next().unwrap();
        assert!(["Win", "Loss", "Draw"].contains(&outcome), "{l}");
    }
    let again = aircombat(&["eval", "--a", a, "--b", b, "--games", "3", "--seed", "5"]);
    assert_eq!(stdout(&again), results);

    let o = aircombat(&["eval", "--a", a, "--b", b, "--games", "1", "--seed", "5", "--mcts-a", "--mcts-b"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let traj = dir.path().join("traj.csv");
    let o = aircombat(&["replay", "--ckpt-a", a, "--ckpt-b", b, "--seed", "2", "--traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&traj).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next().unwrap(), "t,side,x,y,z,v,gamma,phi,missile_x,missile_y,missile_z,outcome");
    let body: Vec<&str> = rows.collect();
    assert!(body.len() >= 2 && body.len().is_multiple_of(2));
    assert!(body[0].starts_with("0.0000000000000000e0,blue,"));
    assert!(body[1].contains(",red,"));
    let last = body.last().unwrap();
    assert!(["BlueWin", "RedWin", "Draw"].iter().any(|o| last.ends_with(o)), "{last}");
}

#[test]
fn unreadable_checkpoints_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_run(dir.path());
    let good = out.join("checkpoints").join("iter_0001.dgft");
    let bad = dir.path().join("bad.dgft");
    let mut bytes = fs::read(&good).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&bad, &bytes).unwrap();
    let o = aircombat(&["eval", "--a", good.to_str().unwrap(), "--b", bad.to_str().unwrap(), "--games", "1", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"));

    let missing = dir.path().join("none.dgft");
    let o = aircombat(&["eval", "--a", good.to_str().unwrap(), "--b", missing.to_str().unwrap(), "--games", "1", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
