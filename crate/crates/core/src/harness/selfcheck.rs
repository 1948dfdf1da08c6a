//! Quick invariant suite behind the `selfcheck` command.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{rk4_step, AircraftState, ControlInput, PHYSICS_DT};
use crate::environment::{reset, ScenarioConfig};
use crate::mcts::{search_action, SearchConfig};
use crate::missile::{drag_of, fly_against_constant_target, thrust_at, MissileParams, MissileStatus};
use crate::nn::{Actor, Critic, ParamTensors};
use crate::ppo::{actor_loss_and_grad, value_loss_and_grad, Minibatch, TrainConfig, Transition};
use crate::Side;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every parameter,
/// using central differences with step `h`.
pub fn max_gradient_error<P: ParamTensors + Clone>(params: &P, grad: &P, h: f64, loss: impl Fn(&P) -> f64) -> f64 {
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut worst = 0.0f64;
    let mut flat = 0;
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][k] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max((analytic[flat] - numeric).abs() / numeric.abs().max(1.0));
            flat += 1;
        }
    }
    worst
}

/// Reduced 13→8→8→4 actor, 13→8→8→1 critic and a batch whose probability
/// ratios sit away from the clip kinks, some inside and some outside.
pub fn gradient_check_batch(seed: u64) -> (Actor, Critic, Minibatch) {
    let mut actor = Actor::with_sizes(seed, &[13, 8, 8, 4]);
    actor.log_std = vec![0.1, -0.2, 0.3, -0.4];
    let critic = Critic::with_sizes(seed + 1, &[13, 8, 8, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = [0.05, -0.1, 0.4, -0.5];
    let ts: Vec<Transition> = (0..16)
        .map(|i| {
            let obs: Vec<f64> = (0..13).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (a, lp) = actor.sample_and_logprob(&obs, &mut rng).expect("13-dim obs");
            let mut t = Transition::new(obs, a, lp - offsets[i % 4], 0.0, 0.0, true);
            t.advantage = rng.gen_range(-2.0..2.0);
            t.value_target = rng.gen_range(-1.0..1.0);
            t
        })
        .collect();
    let idx: Vec<usize> = (0..ts.len()).collect();
    (actor, critic, Minibatch::gather(&ts, &idx))
}

/// Worst relative finite-difference error for the surrogate, entropy and
/// value losses, in that order.
pub fn gradient_errors(seed: u64) -> [f64; 3] {
    let h = 1e-5;
    let (actor, critic, mb) = gradient_check_batch(seed);
    let surrogate_cfg = TrainConfig { entropy_coeff: 0.0, ..Default::default() };
    let (_, g) = actor_loss_and_grad(&actor, &mb, &surrogate_cfg).expect("finite batch");
    let surrogate = max_gradient_error(&actor, &g, h, |a| actor_loss_and_grad(a, &mb, &surrogate_cfg).unwrap().0.loss);

    let mut flat = mb.clone();
    flat.advantages.iter_mut().for_each(|a| *a = 0.0);
    let entropy_cfg = TrainConfig { entropy_coeff: 1.0, ..Default::default() };
    let (_, g) = actor_loss_and_grad(&actor, &flat, &entropy_cfg).expect("finite batch");
    let entropy = max_gradient_error(&actor, &g, h, |a| actor_loss_and_grad(a, &flat, &entropy_cfg).unwrap().0.loss);

    let (_, g) = value_loss_and_grad(&critic, &mb).expect("finite batch");
    let value = max_gradient_error(&critic, &g, h, |c| value_loss_and_grad(c, &mb).unwrap().0);
    [surrogate, entropy, value]
}

fn integrate(s: &AircraftState, c: &ControlInput, dt: f64, t: f64) -> AircraftState {
    let n = (t / dt).round() as usize;
    (0..n).fold(*s, |s, _| rk4_step(&s, c, dt).expect("well-posed flight"))
}

/// Error ratio between step sizes `dt` and `dt/2` for a climbing,
/// accelerating banked turn over 20 s, against a `dt/64` reference. At the
/// physics step itself the truncation error is already down at rounding
/// level, so the ratio is only meaningful for somewhat larger steps.
pub fn rk4_halving_factor(dt: f64) -> f64 {
    let s = AircraftState::new(0.0, 0.0, 5000.0, 250.0, 0.0, 0.3);
    let c = ControlInput { nx: 0.5, nz: 4.0, mu: 1.2 };
    let t = 20.0;
    let reference = integrate(&s, &c, dt / 64.0, t);
    let err = |h: f64| {
        let e = integrate(&s, &c, h, t);
        (e.position() - reference.position()).norm() + (e.v - reference.v).abs()
    };
    err(dt) / err(dt / 2.0)
}

/// Altitude and speed drift after `seconds` of trimmed level flight.
pub fn trim_drift(seconds: f64) -> (f64, f64) {
    let s0 = AircraftState::new(0.0, 0.0, 5000.0, 300.0, 0.0, 0.7);
    let s = integrate(&s0, &ControlInput::TRIM, PHYSICS_DT, seconds);
    ((s.z - s0.z).abs(), (s.v - s0.v).abs())
}

pub fn head_on_intercept() -> (MissileStatus, f64, f64) {
    let shooter = AircraftState::new(0.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
    let target = AircraftState::new(5000.0, 0.0, 5000.0, 300.0, 0.0, PI);
    let m = fly_against_constant_target(&shooter, &target, &MissileParams::default(), PHYSICS_DT).expect("valid launch");
    (m.status, m.closest_approach, m.t_since_launch)
}

pub fn crossing_intercept() -> (MissileStatus, f64, f64) {
    let shooter = AircraftState::new(0.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
    let target = AircraftState::new(4000.0, 0.0, 5000.0, 300.0, 0.0, FRAC_PI_2);
    let m = fly_against_constant_target(&shooter, &target, &MissileParams::default(), PHYSICS_DT).expect("valid launch");
    (m.status, m.closest_approach, m.t_since_launch)
}

pub fn run_all() -> Vec<CheckResult> {
    let mut out = Vec::new();

    let (dz, dv) = trim_drift(100.0);
    out.push(CheckResult::new("trim drift", dz < 1e-6 && dv < 1e-6, format!("|dz| = {dz:.3e}, |dv| = {dv:.3e}")));

    let f = rk4_halving_factor(4.0 * PHYSICS_DT);
    out.push(CheckResult::new("rk4 step halving", f >= 8.0, format!("error ratio {f:.2}")));

    let p = MissileParams::default();
    let q = drag_of(&p, 900.0);
    let rel = (q - 7168.5486).abs() / 7168.5486;
    out.push(CheckResult::new("missile drag", rel < 1e-9, format!("Qm(900) = {q:.6}")));

    let cut = thrust_at(&p, 12.0).ok() == Some(2000.0) && thrust_at(&p, 12.0 + 1e-9).ok() == Some(0.0);
    out.push(CheckResult::new("thrust cutoff", cut, "burn ends at 12 s".into()));

    let (status, miss, t) = head_on_intercept();
    out.push(CheckResult::new(
        "head-on intercept",
        status == MissileStatus::Hit && miss < 30.0,
        format!("{status:?} at {t:.2} s, miss {miss:.2} m"),
    ));
    let (status, miss, t) = crossing_intercept();
    out.push(CheckResult::new(
        "crossing intercept",
        status == MissileStatus::Hit,
        format!("{status:?} at {t:.2} s, miss {miss:.2} m"),
    ));

    let names = ["surrogate gradient", "entropy gradient", "value gradient"];
    for (name, err) in names.into_iter().zip(gradient_errors(11)) {
        out.push(CheckResult::new(name, err < 1e-4, format!("max relative error {err:.2e}")));
    }

    let scenario = ScenarioConfig::default();
    let search = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let searched = reset(0, &scenario).map_err(|e| e.to_string()).and_then(|s| {
        let (a, c) = (Actor::init(1), Critic::init(2));
        search_action(&s, Side::Blue, &a, &c, &a, &scenario, &search, &mut rng).map_err(|e| e.to_string())
    });
    match searched {
        Ok(r) => {
            let visits: u32 = r.trace.visits.iter().sum();
            let prior: f64 = r.trace.priors.iter().sum();
            out.push(CheckResult::new(
                "search statistics",
                visits as usize == search.num_simulations && (prior - 1.0).abs() < 1e-9,
                format!("root visits {visits}, prior mass {prior:.12}"),
            ));
        }
        Err(e) => out.push(CheckResult::new("search statistics", false, e)),
    }
    out
}
