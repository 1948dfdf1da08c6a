//! Collect, train, checkpoint and evaluate against past agents.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::environment::{
    env_step_traced, observe, reset, EngagementState, EnvError, Outcome, ScenarioConfig,
};
use crate::harness::config::RunConfig;
use crate::harness::output::TrajectoryRow;
use crate::mcts::{search_action, to_command, MctsError, SearchConfig};
use crate::nn::{Actor, Critic, NnError, ParamTensors};
use crate::ppo::{compute_advantages, train_iteration, Learner, PpoError, RolloutBuffer, TrainMetrics, Transition};
use crate::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfPlayError {
    #[error("no past agents to evaluate against")]
    EmptyPool,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("aborted by output sink: {0}")]
    Sink(String),
}

/// A frozen agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
    pub actor: Actor,
    pub critic: Critic,
}

impl AgentCheckpoint {
    /// Hex SHA-256 over every parameter tensor, shapes included.
    pub fn params_digest(&self) -> String {
        let mut h = Sha256::new();
        let tensors = self.actor.tensors().into_iter().chain(self.critic.tensors());
        for t in tensors {
            h.update((t.len() as u64).to_le_bytes());
            for x in t {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameResult {
    Win,
    Loss,
    Draw,
}

impl GameResult {
    pub fn for_side(outcome: Outcome, side: Side) -> Self {
        match outcome.value_for(side) {
            v if v > 0.0 => GameResult::Win,
            v if v < 0.0 => GameResult::Loss,
            _ => GameResult::Draw,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GameResult::Win => "Win",
            GameResult::Loss => "Loss",
            GameResult::Draw => "Draw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub iteration: u64,
    pub opponent_iteration: u64,
    pub game: usize,
    /// Result for the current agent.
    pub result: GameResult,
    pub side: Side,
    /// Decision steps played.
    pub length: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub mcts_a: bool,
    pub mcts_b: bool,
    /// Side flown by agent `a`.
    pub a_side: Side,
    pub record_trajectory: bool,
    /// Keep `a`'s transitions for training.
    pub collect: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { mcts_a: false, mcts_b: false, a_side: Side::Blue, record_trajectory: false, collect: false }
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub outcome: Outcome,
    pub result_a: GameResult,
    pub length: usize,
    pub final_state: EngagementState,
    pub trajectory: Vec<TrajectoryRow>,
    pub transitions: RolloutBuffer,
}

/// Per-agent random streams: the same agent draws the same numbers
/// whichever color it flies.
fn agent_rng(seed: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot + 1);
    rng
}

fn choose_action(
    state: &EngagementState,
    side: Side,
    me: &AgentCheckpoint,
    them: &AgentCheckpoint,
    mcts: bool,
    scenario: &ScenarioConfig,
    search: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64), SelfPlayError> {
    if mcts {
        let r = search_action(state, side, &me.actor, &me.critic, &them.actor, scenario, search, rng)?;
        Ok((r.action, r.log_prob))
    } else {
        Ok(me.actor.sample_and_logprob(&observe(state, side).0, rng)?)
    }
}

/// One engagement from `reset(seed)` to termination. When `a` flies red the
/// initial world is color-swapped, so `a` always starts in the same aircraft.
pub fn play_match(
    a: &AgentCheckpoint,
    b: &AgentCheckpoint,
    seed: u64,
    opts: &MatchOptions,
    scenario: &ScenarioConfig,
    search: &SearchConfig,
) -> Result<MatchResult, SelfPlayError> {
    let mut state = reset(seed, scenario)?;
    if opts.a_side == Side::Red {
        state = state.swapped();
    }
    let (side_a, side_b) = (opts.a_side, opts.a_side.opponent());
    let mut rng_a = agent_rng(seed, 0);
    let mut rng_b = agent_rng(seed, 1);
    let mut trajectory = Vec::new();
    let mut buffer = RolloutBuffer::new();
    if opts.record_trajectory {
        trajectory.extend(TrajectoryRow::from_state(&state));
    }
    let mut length = 0;
    while !state.is_done() {
        let obs_a = observe(&state, side_a);
        let (act_a, lp_a) = choose_action(&state, side_a, a, b, opts.mcts_a, scenario, search, &mut rng_a)?;
        let (act_b, _) = choose_action(&state, side_b, b, a, opts.mcts_b, scenario, search, &mut rng_b)?;
        let (cmd_a, cmd_b) = (to_command(&act_a)?, to_command(&act_b)?);
        let (blue, red) = match side_a {
            Side::Blue => (cmd_a, cmd_b),
            Side::Red => (cmd_b, cmd_a),
        };
        let step = env_step_traced(&state, &blue, &red, scenario.decision_dt, scenario, |s| {
            if opts.record_trajectory {
                trajectory.extend(TrajectoryRow::from_state(s));
            }
        })?;
        if opts.collect {
            let value = a.critic.value(&obs_a.0)?;
            buffer.push(Transition::new(obs_a.0.to_vec(), act_a, lp_a, step.reward(side_a), value, step.done));
        }
        state = step.state;
        length += 1;
    }
    if opts.collect {
        buffer.close_episode(state.outcome.value_for(side_a));
    }
    Ok(MatchResult {
        outcome: state.outcome,
        result_a: GameResult::for_side(state.outcome, side_a),
        length,
        final_state: state,
        trajectory,
        transitions: buffer,
    })
}

/// Plays `games_per_opponent` matches against each of up to
/// `eval_opponents` past agents drawn without replacement.
pub fn evaluate_vs_past(
    current: &AgentCheckpoint,
    past: &[AgentCheckpoint],
    config: &RunConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MatchRecord>, SelfPlayError> {
    if past.is_empty() {
        return Err(SelfPlayError::EmptyPool);
    }
    let n = config.eval_opponents.min(past.len());
    let chosen = sample_indices(rng, past.len(), n).into_vec();
    let mut jobs = Vec::new();
    for &opp in &chosen {
        for game in 0..config.games_per_opponent {
            jobs.push((opp, game, rng.gen::<u64>()));
        }
    }
    let mcts = !config.no_mcts;
    jobs.par_iter()
        .map(|&(opp, game, seed)| {
            let side = if game % 2 == 0 { Side::Blue } else { Side::Red };
            let opts = MatchOptions { mcts_a: mcts, mcts_b: mcts, a_side: side, ..Default::default() };
            let r = play_match(current, &past[opp], seed, &opts, &config.scenario, &config.search)?;
            Ok(MatchRecord {
                iteration: current.iteration,
                opponent_iteration: past[opp].iteration,
                game,
                result: r.result_a,
                side,
                length: r.length,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: u64,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub ppo: TrainMetrics,
    pub episodes: usize,
    pub transitions: usize,
    /// Simulated flight time summed over the evaluation games.
    pub eval_sim_seconds: f64,
    pub wall_seconds: f64,
}

impl IterationMetrics {
    pub fn games(&self) -> usize {
        self.wins + self.losses + self.draws
    }
}

pub fn tally(records: &[MatchRecord]) -> (usize, usize, usize) {
    records.iter().fold((0, 0, 0), |(w, l, d), r| match r.result {
        GameResult::Win => (w + 1, l, d),
        GameResult::Loss => (w, l + 1, d),
        GameResult::Draw => (w, l, d + 1),
    })
}

/// Fresh agent for a run; its weights come from `rng`.
pub fn initial_agent(config: &RunConfig, rng: &mut impl Rng) -> AgentCheckpoint {
    AgentCheckpoint {
        iteration: 0,
        seed: config.seed,
        config_hash: config.hash(),
        actor: Actor::init(rng.gen()),
        critic: Critic::init(rng.gen()),
    }
}

/// Plays the learner against `opponent` until at least `batch_size`
/// transitions are stored. The learner alternates colors per episode.
pub fn collect_rollouts(
    learner: &AgentCheckpoint,
    opponent: &AgentCheckpoint,
    config: &RunConfig,
    rng: &mut impl Rng,
) -> Result<(RolloutBuffer, usize), SelfPlayError> {
    let mut buffer = RolloutBuffer::new();
    let mut episodes = 0;
    while buffer.len() < config.ppo.batch_size {
        let side = if episodes % 2 == 0 { Side::Blue } else { Side::Red };
        let opts = MatchOptions { mcts_a: !config.no_mcts, mcts_b: false, a_side: side, collect: true, ..Default::default() };
        let r = play_match(learner, opponent, rng.gen(), &opts, &config.scenario, &config.search)?;
        buffer.append(r.transitions)?;
        episodes += 1;
    }
    Ok((buffer, episodes))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub pool: Vec<AgentCheckpoint>,
    pub history: Vec<IterationMetrics>,
}

/// What a finished iteration hands to the output sinks.
pub struct IterationReport<'a> {
    pub checkpoint: &'a AgentCheckpoint,
    pub metrics: &'a IterationMetrics,
    pub records: &'a [MatchRecord],
}

/// The whole self-play run. `on_iteration` sees each finished iteration in
/// order; an error from it stops the loop with the pool intact.
pub fn train_loop(
    config: &RunConfig,
    mut on_iteration: impl FnMut(IterationReport<'_>) -> Result<(), String>,
) -> Result<TrainSummary, SelfPlayError> {
    config.validate().map_err(|e| SelfPlayError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initial_agent(config, &mut rng);
    let mut learner = Learner::new(init.actor.clone(), init.critic.clone());
    let mut pool = vec![init];
    let mut history = Vec::new();
    let config_hash = config.hash();

    for it in 1..=config.iterations as u64 {
        let started = Instant::now();
        let current = AgentCheckpoint {
            iteration: it,
            seed: config.seed,
            config_hash: config_hash.clone(),
            actor: learner.actor.clone(),
            critic: learner.critic.clone(),
        };
        let opponent = pool.last().expect("pool starts non-empty");
        let (mut buffer, episodes) = collect_rollouts(&current, opponent, config, &mut rng)?;
        compute_advantages(&mut buffer, &config.ppo)?;
        let mut train_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let ppo = train_iteration(&mut learner, &buffer, &config.ppo, &mut train_rng)?;

        let checkpoint = AgentCheckpoint { actor: learner.actor.clone(), critic: learner.critic.clone(), ..current };
        let records = evaluate_vs_past(&checkpoint, &pool, config, &mut rng)?;
        let (wins, losses, draws) = tally(&records);
        let eval_sim_seconds = records.iter().map(|r| r.length as f64 * config.scenario.decision_dt).sum();
        let metrics = IterationMetrics {
            iter: it,
            wins,
            losses,
            draws,
            ppo,
            episodes,
            transitions: buffer.len(),
            eval_sim_seconds,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_iteration(IterationReport { checkpoint: &checkpoint, metrics: &metrics, records: &records })
            .map_err(SelfPlayError::Sink)?;
        pool.push(checkpoint);
        history.push(metrics);
    }
    Ok(TrainSummary { pool, history })
}
