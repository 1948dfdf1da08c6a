//! Best-first search over a handful of actions sampled from the policy.
//!
//! Each expanded node draws `num_actions` raw actions from the actor's
//! Gaussian and turns their log-densities into priors. Leaves are scored by
//! the critic (clamped to the outcome scale) or by the terminal result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{env_step, observe, ActionCommand, EngagementState, EnvError, ScenarioConfig, ACTION_DIM};
use crate::nn::{Actor, Critic, NnError};
use crate::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MctsError {
    #[error("search started from a terminal state")]
    TerminalRoot,
    #[error("node {0} has not been expanded")]
    Unexpanded(usize),
    #[error("invalid search config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub num_actions: usize,
    pub num_simulations: usize,
    pub c_puct: f64,
    pub max_depth: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { num_actions: 9, num_simulations: 20, c_puct: 1.25, max_depth: 5 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        if self.num_actions == 0 || self.num_simulations == 0 || self.max_depth == 0 {
            return Err(MctsError::BadConfig(
                "num_actions, num_simulations and max_depth must be at least 1".into(),
            ));
        }
        if !(self.c_puct.is_finite() && self.c_puct >= 0.0) {
            return Err(MctsError::BadConfig(format!("c_puct = {}", self.c_puct)));
        }
        Ok(())
    }
}

/// Forward model seen by the searching side.
pub trait SearchModel {
    type State: Clone;
    /// Result for the searching side if `s` is terminal.
    fn terminal_value(&self, s: &Self::State) -> Option<f64>;
    fn observe(&self, s: &Self::State) -> Vec<f64>;
    /// Advances one decision step with the searching side playing `action`.
    fn step(&self, s: &Self::State, action: &[f64]) -> Result<Self::State, MctsError>;
}

/// Source of candidate actions and their log-densities.
pub trait ActionSampler {
    fn sample(&self, obs: &[f64], n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<(Vec<f64>, f64)>, MctsError>;
}

pub trait LeafEvaluator<S> {
    fn evaluate(&self, s: &S, obs: &[f64]) -> Result<f64, MctsError>;
}

impl ActionSampler for Actor {
    fn sample(&self, obs: &[f64], n: usize, mut rng: &mut dyn rand::RngCore) -> Result<Vec<(Vec<f64>, f64)>, MctsError> {
        Ok(self.sample_n(obs, n, &mut rng)?)
    }
}

impl<S> LeafEvaluator<S> for Critic {
    fn evaluate(&self, _s: &S, obs: &[f64]) -> Result<f64, MctsError> {
        Ok(self.value(obs)?)
    }
}

/// The engagement as seen by `side`; the opponent flies its policy mean.
pub struct CombatModel<'a> {
    pub side: Side,
    pub opponent: &'a Actor,
    pub scenario: &'a ScenarioConfig,
}

impl SearchModel for CombatModel<'_> {
    type State = EngagementState;

    fn terminal_value(&self, s: &EngagementState) -> Option<f64> {
        s.outcome.is_terminal().then(|| s.outcome.value_for(self.side))
    }

    fn observe(&self, s: &EngagementState) -> Vec<f64> {
        observe(s, self.side).0.to_vec()
    }

    fn step(&self, s: &EngagementState, action: &[f64]) -> Result<EngagementState, MctsError> {
        let own = to_command(action)?;
        let opp_obs = observe(s, self.side.opponent());
        let opp = to_command(&self.opponent.mean(opp_obs.as_slice())?)?;
        let (blue, red) = match self.side {
            Side::Blue => (own, opp),
            Side::Red => (opp, own),
        };
        Ok(env_step(s, &blue, &red, self.scenario.decision_dt, self.scenario)?.state)
    }
}

pub fn to_command(raw: &[f64]) -> Result<ActionCommand, MctsError> {
    let arr: [f64; ACTION_DIM] = raw
        .try_into()
        .map_err(|_| NnError::DimensionMismatch { expected: ACTION_DIM, got: raw.len() })?;
    Ok(ActionCommand::new(arr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: Vec<f64>,
    pub log_density: f64,
    pub n: u32,
    pub w: f64,
    pub q: f64,
    pub p: f64,
    pub child: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchNode<S> {
    pub state: S,
    pub depth: usize,
    pub edges: Vec<Edge>,
    pub expanded: bool,
}

impl<S> SearchNode<S> {
    pub fn new(state: S, depth: usize) -> Self {
        Self { state, depth, edges: Vec::new(), expanded: false }
    }

    pub fn visits(&self) -> u32 {
        self.edges.iter().map(|e| e.n).sum()
    }
}

/// Softmax of log-densities.
pub fn priors_from_log_densities(lds: &[f64]) -> Vec<f64> {
    let max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = lds.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Samples the node's candidate actions and returns its leaf value. Terminal
/// nodes are not expanded and return their result.
pub fn expand_node<M: SearchModel>(
    node: &mut SearchNode<M::State>,
    model: &M,
    sampler: &impl ActionSampler,
    evaluator: &impl LeafEvaluator<M::State>,
    num_actions: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<f64, MctsError> {
    if let Some(z) = model.terminal_value(&node.state) {
        return Ok(z);
    }
    let obs = model.observe(&node.state);
    if !node.expanded {
        let samples = sampler.sample(&obs, num_actions, rng)?;
        let priors = priors_from_log_densities(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
        node.edges = samples
            .into_iter()
            .zip(priors)
            .map(|((action, log_density), p)| Edge { action, log_density, n: 0, w: 0.0, q: 0.0, p, child: None })
            .collect();
        node.expanded = true;
    }
    Ok(evaluator.evaluate(&node.state, &obs)?.clamp(-1.0, 1.0))
}

/// PUCT child choice. Unvisited children are tried first, highest prior
/// first; after that the score is `Q + c·P·sqrt(ΣN)/(1 + N)`. Ties go to
/// the lowest index.
pub fn puct_select<S>(node: &SearchNode<S>, c_puct: f64) -> Option<usize> {
    if !node.expanded || node.edges.is_empty() {
        return None;
    }
    let mut best_unvisited: Option<usize> = None;
    for (i, e) in node.edges.iter().enumerate() {
        if e.n == 0 && best_unvisited.is_none_or(|b| e.p > node.edges[b].p) {
            best_unvisited = Some(i);
        }
    }
    if best_unvisited.is_some() {
        return best_unvisited;
    }
    let sqrt_total = f64::from(node.visits().max(1)).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let score = e.q + c_puct * e.p * sqrt_total / (1.0 + f64::from(e.n));
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Some(best)
}

/// Adds `value` to every edge on `path` (node index, edge index).
pub fn backup<S>(nodes: &mut [SearchNode<S>], path: &[(usize, usize)], value: f64) {
    for &(node, edge) in path {
        let e = &mut nodes[node].edges[edge];
        e.n += 1;
        e.w += value;
        e.q = e.w / f64::from(e.n);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub priors: Vec<f64>,
    pub visits: Vec<u32>,
    pub q: Vec<f64>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub action: Vec<f64>,
    /// Log-density of `action` under the policy at the root.
    pub log_prob: f64,
    pub root_value: f64,
    pub trace: SearchTrace,
}

/// Runs `num_simulations` select/step/expand/backup passes from `root` and
/// returns the most visited root action. The root's candidates are the
/// first thing drawn from `rng`.
pub fn run_search<M: SearchModel>(
    root: &M::State,
    model: &M,
    sampler: &impl ActionSampler,
    evaluator: &impl LeafEvaluator<M::State>,
    config: &SearchConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<SearchResult, MctsError> {
    config.validate()?;
    if model.terminal_value(root).is_some() {
        return Err(MctsError::TerminalRoot);
    }
    let mut nodes = vec![SearchNode::new(root.clone(), 0)];
    let root_value = expand_node(&mut nodes[0], model, sampler, evaluator, config.num_actions, rng)?;

    for _ in 0..config.num_simulations {
        let mut path = Vec::new();
        let mut current = 0;
        let value = loop {
            let node = &nodes[current];
            if let Some(z) = model.terminal_value(&node.state) {
                break z;
            }
            if !node.expanded {
                break expand_node(&mut nodes[current], model, sampler, evaluator, config.num_actions, rng)?;
            }
            if node.depth >= config.max_depth {
                let obs = model.observe(&node.state);
                break evaluator.evaluate(&node.state, &obs)?.clamp(-1.0, 1.0);
            }
            let k = puct_select(node, config.c_puct).ok_or(MctsError::Unexpanded(current))?;
            path.push((current, k));
            current = match node.edges[k].child {
                Some(c) => c,
                None => {
                    let next = model.step(&node.state, &node.edges[k].action)?;
                    let depth = node.depth + 1;
                    nodes.push(SearchNode::new(next, depth));
                    let id = nodes.len() - 1;
                    nodes[current].edges[k].child = Some(id);
                    id
                }
            };
        };
        backup(&mut nodes, &path, value);
    }

    let edges = &nodes[0].edges;
    let mut chosen = 0;
    for (i, e) in edges.iter().enumerate() {
        if e.n > edges[chosen].n {
            chosen = i;
        }
    }
    Ok(SearchResult {
        action: edges[chosen].action.clone(),
        log_prob: edges[chosen].log_density,
        root_value,
        trace: SearchTrace {
            priors: edges.iter().map(|e| e.p).collect(),
            visits: edges.iter().map(|e| e.n).collect(),
            q: edges.iter().map(|e| e.q).collect(),
            chosen,
        },
    })
}

/// Search for `side` in the real engagement.
pub fn search_action(
    state: &EngagementState,
    side: Side,
    actor: &Actor,
    critic: &Critic,
    opponent: &Actor,
    scenario: &ScenarioConfig,
    config: &SearchConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<SearchResult, MctsError> {
    let model = CombatModel { side, opponent, scenario };
    run_search(state, &model, actor, critic, config, rng)
}
