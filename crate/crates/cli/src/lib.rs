//! Command-line front end: `train`, `eval`, `replay` and `selfcheck`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use aircombat::harness::checkpoint::{load_checkpoint, save_checkpoint};
use aircombat::harness::config::RunConfig;
use aircombat::harness::output::{MetricsWriter, TrajectoryWriter};
use aircombat::harness::selfcheck;
use aircombat::selfplay::{play_match, train_loop, GameResult, MatchOptions};
use aircombat::Side;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aircombat", about = "Air-combat self-play with PPO and tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the self-play training loop.
    Train(TrainArgs),
    /// Play two checkpoints against each other.
    Eval(EvalArgs),
    /// Play one engagement and write its trajectory as CSV.
    Replay(ReplayArgs),
    /// Run the built-in invariant checks.
    Selfcheck,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output directory (default: runs/seed-<n>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train on raw policy samples instead of searched actions.
    #[arg(long)]
    no_mcts: bool,
    /// 10 iterations, batch 256, 4 evaluation opponents.
    #[arg(long)]
    smoke: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    games: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    mcts_a: bool,
    #[arg(long)]
    mcts_b: bool,
    /// Scenario and search settings (defaults if absent).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    ckpt_a: PathBuf,
    #[arg(long)]
    ckpt_b: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    mcts_a: bool,
    #[arg(long)]
    mcts_b: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprintln!("{}", e.render());
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
        Command::Selfcheck => run_selfcheck(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

#[derive(Serialize)]
struct TimingLine {
    iter: u64,
    wall_seconds: f64,
    episodes: usize,
    transitions: usize,
    approx_kl: f64,
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if args.smoke {
        config = config.into_smoke();
    }
    config.seed = args.seed;
    config.no_mcts |= args.no_mcts;
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;

    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("runs/seed-{}", args.seed)));
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| runtime(format!("{}: {e}", ckpt_dir.display())))?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, config.to_toml()).map_err(|e| runtime(format!("{}: {e}", cfg_path.display())))?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.jsonl")).map_err(runtime)?;
    let mut matches = MetricsWriter::create(&out.join("matches.jsonl")).map_err(runtime)?;
    let mut timing = MetricsWriter::create(&out.join("timing.jsonl")).map_err(runtime)?;

    train_loop(&config, |report| {
        let m = report.metrics;
        let path = ckpt_dir.join(format!("iter_{:04}.dgft", report.checkpoint.iteration));
        save_checkpoint(&path, report.checkpoint).map_err(|e| e.to_string())?;
        metrics.write_metrics(m).map_err(|e| e.to_string())?;
        for r in report.records {
            matches.write(r).map_err(|e| e.to_string())?;
        }
        timing
            .write(&TimingLine {
                iter: m.iter,
                wall_seconds: m.wall_seconds,
                episodes: m.episodes,
                transitions: m.transitions,
                approx_kl: m.ppo.approx_kl,
            })
            .map_err(|e| e.to_string())?;
        eprintln!(
            "iter {:>3}  W {:>3}  L {:>3}  D {:>3}  surrogate {:+.4}  value {:.4}  {:.1}s",
            m.iter, m.wins, m.losses, m.draws, m.ppo.surrogate, m.ppo.value_loss, m.wall_seconds
        );
        Ok(())
    })
    .map_err(runtime)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    if args.games == 0 {
        return Err(Failure::Config("--games must be positive".into()));
    }
    let a = load_checkpoint(&args.a).map_err(|e| runtime(format!("{}: {e}", args.a.display())))?;
    let b = load_checkpoint(&args.b).map_err(|e| runtime(format!("{}: {e}", args.b.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut results = Vec::new();
    for game in 0..args.games {
        let seed: u64 = rng.gen();
        let side = if game % 2 == 0 { Side::Blue } else { Side::Red };
        let opts = MatchOptions { mcts_a: args.mcts_a, mcts_b: args.mcts_b, a_side: side, ..Default::default() };
        let r = play_match(&a, &b, seed, &opts, &config.scenario, &config.search).map_err(runtime)?;
        println!("game {game} seed {seed} a_side {} length {} result {}", side.as_str(), r.length, r.result_a.as_str());
        results.push(r.result_a);
    }
    let count = |g: GameResult| results.iter().filter(|&&r| r == g).count();
    eprintln!("a: {} wins, {} losses, {} draws", count(GameResult::Win), count(GameResult::Loss), count(GameResult::Draw));
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let a = load_checkpoint(&args.ckpt_a).map_err(|e| runtime(format!("{}: {e}", args.ckpt_a.display())))?;
    let b = load_checkpoint(&args.ckpt_b).map_err(|e| runtime(format!("{}: {e}", args.ckpt_b.display())))?;
    let opts = MatchOptions { mcts_a: args.mcts_a, mcts_b: args.mcts_b, record_trajectory: true, ..Default::default() };
    let r = play_match(&a, &b, args.seed, &opts, &config.scenario, &config.search).map_err(runtime)?;
    let mut w = TrajectoryWriter::create(&args.traj).map_err(runtime)?;
    w.write_rows(&r.trajectory).map_err(runtime)?;
    println!("outcome {} length {} rows {}", r.outcome.as_str(), r.length, r.trajectory.len());
    Ok(())
}

fn run_selfcheck() -> Result<(), Failure> {
    let results = selfcheck::run_all();
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} check(s) failed")));
    }
    Ok(())
}
