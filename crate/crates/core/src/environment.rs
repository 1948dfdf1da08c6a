//! Two-aircraft engagement world.
//!
//! One decision step holds both sides' commands for `decision_dt` seconds
//! and integrates aircraft and missiles at [`PHYSICS_DT`]. Rewards are
//! terminal only: +1 to the winner, −1 to the loser, 0 on a draw.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    clamp_controls, rk4_step, wrap_angle, AircraftState, ControlInput, DynamicsError, PHYSICS_DT,
};
use crate::missile::{missile_step, MissileError, MissileParams, MissileState, MissileStatus};
use crate::Side;

pub const OBS_DIM: usize = 13;
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Missile(#[from] MissileError),
    #[error("decision step {0} s is not a positive multiple of the physics step")]
    BadDecisionDt(f64),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
}

/// Bounds and rules of an engagement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub speed: [f64; 2],
    pub altitude: [f64; 2],
    pub separation: [f64; 2],
    pub decision_dt: f64,
    pub max_time: f64,
    /// Flying below this altitude loses the engagement.
    pub ground_floor: f64,
    pub launch_range: f64,
    /// Largest angle between own velocity and the line of sight at launch.
    pub launch_off_boresight: f64,
    pub missile: MissileParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            speed: [250.0, 400.0],
            altitude: [3000.0, 8000.0],
            separation: [5000.0, 15000.0],
            decision_dt: 0.5,
            max_time: 200.0,
            ground_floor: 100.0,
            launch_range: 12_000.0,
            launch_off_boresight: FRAC_PI_3,
            missile: MissileParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::BadScenario(msg));
        for (name, [lo, hi]) in
            [("speed", self.speed), ("altitude", self.altitude), ("separation", self.separation)]
        {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} bounds [{lo}, {hi}]"));
            }
        }
        if self.speed[0] <= 0.0 {
            return bad(format!("speed lower bound {} must be positive", self.speed[0]));
        }
        if self.separation[0] <= 0.0 {
            return bad(format!("separation lower bound {} must be positive", self.separation[0]));
        }
        if self.altitude[0] <= self.ground_floor {
            return bad(format!("altitude {} at or below ground floor", self.altitude[0]));
        }
        if !(self.max_time > 0.0 && self.launch_range > 0.0 && self.launch_off_boresight > 0.0) {
            return bad("max_time, launch_range and launch_off_boresight must be positive".into());
        }
        substeps(self.decision_dt)?;
        self.missile.validate()?;
        Ok(())
    }
}

/// Number of physics sub-steps in one decision step.
pub fn substeps(decision_dt: f64) -> Result<usize, EnvError> {
    let n = (decision_dt / PHYSICS_DT).round();
    if !(decision_dt > 0.0) || n < 1.0 || (n * PHYSICS_DT - decision_dt).abs() > 1e-9 {
        return Err(EnvError::BadDecisionDt(decision_dt));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Ongoing,
    BlueWin,
    RedWin,
    Draw,
}

impl Outcome {
    /// Terminal result from `side`'s point of view: +1, −1 or 0.
    pub fn value_for(self, side: Side) -> f64 {
        match (self, side) {
            (Outcome::BlueWin, Side::Blue) | (Outcome::RedWin, Side::Red) => 1.0,
            (Outcome::BlueWin, Side::Red) | (Outcome::RedWin, Side::Blue) => -1.0,
            _ => 0.0,
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Outcome::Ongoing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ongoing => "Ongoing",
            Outcome::BlueWin => "BlueWin",
            Outcome::RedWin => "RedWin",
            Outcome::Draw => "Draw",
        }
    }

    fn win_for(side: Side) -> Self {
        match side {
            Side::Blue => Outcome::BlueWin,
            Side::Red => Outcome::RedWin,
        }
    }

    fn mirrored(self) -> Self {
        match self {
            Outcome::BlueWin => Outcome::RedWin,
            Outcome::RedWin => Outcome::BlueWin,
            o => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementState {
    pub blue: AircraftState,
    pub red: AircraftState,
    pub blue_missile: Option<MissileState>,
    pub red_missile: Option<MissileState>,
    pub blue_fired: bool,
    pub red_fired: bool,
    /// Physics steps taken; `t = physics_steps * PHYSICS_DT`.
    pub physics_steps: u64,
    pub outcome: Outcome,
}

impl EngagementState {
    pub fn new(blue: AircraftState, red: AircraftState) -> Self {
        Self {
            blue,
            red,
            blue_missile: None,
            red_missile: None,
            blue_fired: false,
            red_fired: false,
            physics_steps: 0,
            outcome: Outcome::Ongoing,
        }
    }

    pub fn t(&self) -> f64 {
        self.physics_steps as f64 * PHYSICS_DT
    }

    pub fn aircraft(&self, side: Side) -> &AircraftState {
        match side {
            Side::Blue => &self.blue,
            Side::Red => &self.red,
        }
    }

    /// The missile fired by `side`, if any.
    pub fn missile(&self, side: Side) -> Option<&MissileState> {
        match side {
            Side::Blue => self.blue_missile.as_ref(),
            Side::Red => self.red_missile.as_ref(),
        }
    }

    pub fn fired(&self, side: Side) -> bool {
        match side {
            Side::Blue => self.blue_fired,
            Side::Red => self.red_fired,
        }
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_terminal()
    }

    /// The same world with the colors exchanged.
    pub fn swapped(&self) -> Self {
        let flip = |m: Option<MissileState>| {
            m.map(|m| MissileState { shooter: m.shooter.opponent(), target: m.target.opponent(), ..m })
        };
        Self {
            blue: self.red,
            red: self.blue,
            blue_missile: flip(self.red_missile),
            red_missile: flip(self.blue_missile),
            blue_fired: self.red_fired,
            red_fired: self.blue_fired,
            physics_steps: self.physics_steps,
            outcome: self.outcome.mirrored(),
        }
    }
}

/// Draws a fresh engagement. Blue starts above the origin; red is placed at
/// a random bearing and horizontal separation.
pub fn reset(seed: u64, scenario: &ScenarioConfig) -> Result<EngagementState, EnvError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    };
    // (−π, π]
    let heading = |rng: &mut ChaCha8Rng| PI - 2.0 * PI * rng.gen::<f64>();

    let blue_z = uniform(&mut rng, scenario.altitude);
    let red_z = uniform(&mut rng, scenario.altitude);
    let blue_v = uniform(&mut rng, scenario.speed);
    let red_v = uniform(&mut rng, scenario.speed);
    let sep = uniform(&mut rng, scenario.separation);
    let bearing = heading(&mut rng);
    let blue_phi = heading(&mut rng);
    let red_phi = heading(&mut rng);

    let blue = AircraftState::new(0.0, 0.0, blue_z, blue_v, 0.0, blue_phi);
    let red = AircraftState::new(sep * bearing.cos(), sep * bearing.sin(), red_z, red_v, 0.0, red_phi);
    Ok(EngagementState::new(blue, red))
}

/// Raw network output `[nz, nx, roll, fire_logit]`, before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub raw: [f64; ACTION_DIM],
}

impl ActionCommand {
    pub fn new(raw: [f64; ACTION_DIM]) -> Self {
        Self { raw }
    }

    /// Level flight, never fire.
    pub const HOLD_TRIM: ActionCommand = ActionCommand { raw: [1.0, 0.0, 0.0, -1.0] };

    pub fn controls(&self) -> Result<ControlInput, DynamicsError> {
        clamp_controls([self.raw[1], self.raw[0], self.raw[2]])
    }

    pub fn wants_fire(&self) -> bool {
        self.raw[3] > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Feature ranges used for min-max normalization.
pub mod bounds {
    use super::*;
    pub const ANGLE: (f64, f64) = (-PI, PI);
    pub const PITCH: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);
    pub const SPEED: (f64, f64) = (250.0, 400.0);
    pub const ALTITUDE: (f64, f64) = (0.0, 10_000.0);
    pub const DISTANCE: (f64, f64) = (0.0, 20_000.0);
}

fn normalize(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Line of sight from `from` to `to`: (range, azimuth, elevation).
fn line_of_sight(from: &Vector3<f64>, to: &Vector3<f64>) -> (f64, f64, f64) {
    let d = to - from;
    let horiz = d.x.hypot(d.y);
    (d.norm(), d.y.atan2(d.x), d.z.atan2(horiz))
}

/// The 13 normalized features seen by `side`:
/// own yaw, own pitch, own speed, own altitude, target distance, own missile
/// in flight, target azimuth off own heading, target elevation off own
/// pitch, target yaw, target pitch, incoming missile distance, line-of-sight
/// azimuth, incoming missile in flight.
pub fn observe(s: &EngagementState, side: Side) -> Observation {
    use bounds::*;
    let own = s.aircraft(side);
    let other = s.aircraft(side.opponent());
    let own_pos = own.position();
    let (d, los_az, los_el) = line_of_sight(&own_pos, &other.position());
    let own_missile_flying = s.missile(side).is_some_and(MissileState::in_flight);
    let incoming = s.missile(side.opponent()).filter(|m| m.in_flight());
    let incoming_dist = incoming.map_or(DISTANCE.1, |m| (m.position() - own_pos).norm());

    Observation([
        normalize(own.phi, ANGLE),
        normalize(own.gamma, PITCH),
        normalize(own.v, SPEED),
        normalize(own.z, ALTITUDE),
        normalize(d, DISTANCE),
        own_missile_flying as u8 as f64,
        normalize(wrap_angle(los_az - own.phi), ANGLE),
        normalize(los_el - own.gamma, PITCH),
        normalize(other.phi, ANGLE),
        normalize(other.gamma, PITCH),
        normalize(incoming_dist, DISTANCE),
        normalize(los_az, ANGLE),
        incoming.is_some() as u8 as f64,
    ])
}

/// Angle between `shooter`'s velocity and its line of sight to `target`.
pub fn off_boresight(shooter: &AircraftState, target: &AircraftState) -> f64 {
    let los = target.position() - shooter.position();
    let vel = shooter.velocity();
    let denom = los.norm() * vel.norm();
    if denom == 0.0 {
        return PI;
    }
    (los.dot(&vel) / denom).clamp(-1.0, 1.0).acos()
}

fn launch_allowed(s: &EngagementState, side: Side, scenario: &ScenarioConfig) -> bool {
    let own = s.aircraft(side);
    let other = s.aircraft(side.opponent());
    !s.fired(side)
        && (other.position() - own.position()).norm() < scenario.launch_range
        && off_boresight(own, other) < scenario.launch_off_boresight
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: EngagementState,
    pub obs_blue: Observation,
    pub obs_red: Observation,
    pub reward_blue: f64,
    pub reward_red: f64,
    pub done: bool,
    pub outcome: Outcome,
}

impl StepResult {
    fn from_state(state: EngagementState) -> Self {
        let outcome = state.outcome;
        Self {
            obs_blue: observe(&state, Side::Blue),
            obs_red: observe(&state, Side::Red),
            reward_blue: outcome.value_for(Side::Blue),
            reward_red: outcome.value_for(Side::Red),
            done: outcome.is_terminal(),
            outcome,
            state,
        }
    }

    pub fn reward(&self, side: Side) -> f64 {
        match side {
            Side::Blue => self.reward_blue,
            Side::Red => self.reward_red,
        }
    }
}

pub fn env_step(
    s: &EngagementState,
    a_blue: &ActionCommand,
    a_red: &ActionCommand,
    decision_dt: f64,
    scenario: &ScenarioConfig,
) -> Result<StepResult, EnvError> {
    env_step_traced(s, a_blue, a_red, decision_dt, scenario, |_| {})
}

/// [`env_step`] that also hands every physics sub-step's state to `on_substep`.
pub fn env_step_traced(
    s: &EngagementState,
    a_blue: &ActionCommand,
    a_red: &ActionCommand,
    decision_dt: f64,
    scenario: &ScenarioConfig,
    mut on_substep: impl FnMut(&EngagementState),
) -> Result<StepResult, EnvError> {
    let n = substeps(decision_dt)?;
    if s.is_done() {
        return Ok(StepResult::from_state(*s));
    }
    let blue_ctrl = a_blue.controls()?;
    let red_ctrl = a_red.controls()?;
    let mut state = *s;

    let blue_fires = a_blue.wants_fire() && launch_allowed(&state, Side::Blue, scenario);
    let red_fires = a_red.wants_fire() && launch_allowed(&state, Side::Red, scenario);
    if blue_fires {
        state.blue_missile = Some(MissileState::launch(&state.blue, Side::Blue));
        state.blue_fired = true;
    }
    if red_fires {
        state.red_missile = Some(MissileState::launch(&state.red, Side::Red));
        state.red_fired = true;
    }

    for _ in 0..n {
        physics_substep(&mut state, &blue_ctrl, &red_ctrl, scenario)?;
        on_substep(&state);
        if state.is_done() {
            break;
        }
    }
    Ok(StepResult::from_state(state))
}

fn advance_missile(
    m: Option<MissileState>,
    target: &AircraftState,
    p: &MissileParams,
) -> Result<Option<MissileState>, MissileError> {
    match m {
        Some(m) if m.in_flight() => {
            missile_step(&m, p, target.position(), target.velocity(), PHYSICS_DT).map(Some)
        }
        other => Ok(other),
    }
}

fn physics_substep(
    state: &mut EngagementState,
    blue_ctrl: &ControlInput,
    red_ctrl: &ControlInput,
    scenario: &ScenarioConfig,
) -> Result<(), EnvError> {
    let p = &scenario.missile;
    let blue_missile = advance_missile(state.blue_missile, &state.red, p)?;
    let red_missile = advance_missile(state.red_missile, &state.blue, p)?;
    state.blue = rk4_step(&state.blue, blue_ctrl, PHYSICS_DT)?;
    state.red = rk4_step(&state.red, red_ctrl, PHYSICS_DT)?;
    state.blue_missile = blue_missile;
    state.red_missile = red_missile;
    state.physics_steps += 1;

    let hit = |m: Option<MissileState>| m.is_some_and(|m| m.status == MissileStatus::Hit);
    let spent = |fired: bool, m: Option<MissileState>| {
        fired && m.is_some_and(|m| m.status == MissileStatus::Expired)
    };
    let blue_lost = hit(state.red_missile) || state.blue.z < scenario.ground_floor;
    let red_lost = hit(state.blue_missile) || state.red.z < scenario.ground_floor;
    state.outcome = match (blue_lost, red_lost) {
        (true, true) => Outcome::Draw,
        (true, false) => Outcome::win_for(Side::Red),
        (false, true) => Outcome::win_for(Side::Blue),
        (false, false) => {
            if state.t() >= scenario.max_time - 1e-9
                || (spent(state.blue_fired, state.blue_missile)
                    && spent(state.red_fired, state.red_missile))
            {
                Outcome::Draw
            } else {
                Outcome::Ongoing
            }
        }
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn head_on(range: f64) -> EngagementState {
        let blue = AircraftState::new(0.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
        let red = AircraftState::new(range, 0.0, 5000.0, 300.0, 0.0, PI);
        EngagementState::new(blue, red)
    }

    #[test]
    fn reset_is_deterministic() {
        let sc = ScenarioConfig::default();
        assert_eq!(reset(42, &sc).unwrap(), reset(42, &sc).unwrap());
        assert_ne!(reset(42, &sc).unwrap(), reset(43, &sc).unwrap());
    }

    #[test]
    fn degenerate_separation_is_exact() {
        let sc = ScenarioConfig { separation: [1000.0, 1000.0], ..Default::default() };
        for seed in 0..20 {
            let s = reset(seed, &sc).unwrap();
            assert!((s.red.x.hypot(s.red.y) - 1000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let sc = ScenarioConfig { speed: [400.0, 250.0], ..Default::default() };
        assert!(matches!(reset(0, &sc), Err(EnvError::BadScenario(_))));
        let sc = ScenarioConfig { decision_dt: 0.03, ..Default::default() };
        assert!(matches!(reset(0, &sc), Err(EnvError::BadDecisionDt(_))));
        assert_eq!(substeps(0.5).unwrap(), 25);
    }

    #[test]
    fn speed_feature_is_min_max_scaled() {
        let s = head_on(5000.0);
        let o = observe(&s, Side::Blue);
        assert!((o.0[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(o.0[12], 0.0);
        assert_eq!(o.0[10], 1.0);
        assert_eq!(o.0[4], 0.25);
    }

    #[test]
    fn finished_engagement_is_frozen() {
        let mut s = head_on(5000.0);
        s.outcome = Outcome::RedWin;
        let r = env_step(&s, &ActionCommand::HOLD_TRIM, &ActionCommand::HOLD_TRIM, 0.5, &Default::default())
            .unwrap();
        assert!(r.done);
        assert_eq!(r.state, s);
        assert_eq!((r.reward_blue, r.reward_red), (-1.0, 1.0));
    }

    #[test]
    fn no_launch_at_target_behind() {
        let blue = AircraftState::new(0.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
        let red = AircraftState::new(-4000.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
        let s = EngagementState::new(blue, red);
        let fire = ActionCommand::new([1.0, 0.0, 0.0, 1.0]);
        let r = env_step(&s, &fire, &ActionCommand::HOLD_TRIM, 0.5, &Default::default()).unwrap();
        assert!(!r.state.blue_fired && r.state.blue_missile.is_none());
    }

    #[test]
    fn no_launch_beyond_range() {
        let s = head_on(12_500.0);
        let fire = ActionCommand::new([1.0, 0.0, 0.0, 1.0]);
        let r = env_step(&s, &fire, &fire, 0.5, &Default::default()).unwrap();
        assert!(!r.state.blue_fired && !r.state.red_fired);
    }

    #[test]
    fn one_missile_per_side() {
        let s = head_on(9000.0);
        let fire = ActionCommand::new([1.0, 0.0, 0.0, 1.0]);
        let sc = ScenarioConfig::default();
        let r1 = env_step(&s, &fire, &ActionCommand::HOLD_TRIM, 0.5, &sc).unwrap();
        assert!(r1.state.blue_fired);
        let first = r1.state.blue_missile.unwrap();
        let r2 = env_step(&r1.state, &fire, &ActionCommand::HOLD_TRIM, 0.5, &sc).unwrap();
        assert!((r2.state.blue_missile.unwrap().t_since_launch - first.t_since_launch - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ground_impact_loses() {
        let blue = AircraftState::new(0.0, 0.0, 150.0, 300.0, -0.5, 0.0);
        let red = AircraftState::new(20_000.0, 0.0, 5000.0, 300.0, 0.0, 0.0);
        let s = EngagementState::new(blue, red);
        let r = env_step(&s, &ActionCommand::HOLD_TRIM, &ActionCommand::HOLD_TRIM, 0.5, &Default::default())
            .unwrap();
        assert_eq!(r.outcome, Outcome::RedWin);
        assert_eq!((r.reward_blue, r.reward_red), (-1.0, 1.0));
    }

    #[test]
    fn observation_mirrors_under_side_swap() {
        let sc = ScenarioConfig::default();
        let s = reset(9, &sc).unwrap();
        let fire = ActionCommand::new([2.0, 0.5, 0.3, 1.0]);
        let s = env_step(&s, &fire, &ActionCommand::HOLD_TRIM, 0.5, &sc).unwrap().state;
        let w = s.swapped();
        assert_eq!(observe(&s, Side::Blue), observe(&w, Side::Red));
        assert_eq!(observe(&s, Side::Red), observe(&w, Side::Blue));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn step_rewards_are_zero_sum_and_sparse(
            seed in 0u64..1000,
            a in proptest::array::uniform4(-3.0..3.0f64),
            b in proptest::array::uniform4(-3.0..3.0f64),
            steps in 1usize..30,
        ) {
            let sc = ScenarioConfig::default();
            let mut s = reset(seed, &sc).unwrap();
            for _ in 0..steps {
                let r = env_step(&s, &ActionCommand::new(a), &ActionCommand::new(b), 0.5, &sc).unwrap();
                prop_assert_eq!(r.reward_blue + r.reward_red, 0.0);
                prop_assert!(r.reward_blue == 0.0 || r.done);
                prop_assert!(!s.blue_fired || r.state.blue_fired);
                prop_assert!(r.obs_blue.0.iter().chain(r.obs_red.0.iter()).all(|x| (0.0..=1.0).contains(x)));
                s = r.state;
            }
        }
    }
}
