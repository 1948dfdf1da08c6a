//! Clipped-surrogate PPO over episode-grouped rollout buffers.
//!
//! Advantages come from GAE over the stored value estimates. The critic is
//! regressed onto the discounted final result of each engagement rather
//! than onto bootstrapped returns.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{adam_step, gaussian_entropy, AdamState, Actor, Critic, Matrix, NnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("episode starting at transition {start} is not closed")]
    OpenEpisode { start: usize },
    #[error("buffer holds {have} transitions, need at least {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("advantages have not been computed")]
    AdvantagesMissing,
    #[error("non-finite probability ratio for sample {sample}")]
    NonFiniteRatio { sample: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coeff: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 6,
            batch_size: 1024,
            actor_lr: 0.002,
            critic_lr: 0.001,
            entropy_coeff: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let positive = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_epsilon", self.clip_epsilon),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PpoError::BadConfig(format!("{name} = {v} must be positive")));
            }
        }
        if self.clip_epsilon >= 1.0 {
            return Err(PpoError::BadConfig(format!("clip_epsilon = {} must be < 1", self.clip_epsilon)));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(PpoError::BadConfig("gamma and gae_lambda must be at most 1".into()));
        }
        if !(self.entropy_coeff.is_finite() && self.entropy_coeff >= 0.0) {
            return Err(PpoError::BadConfig(format!("entropy_coeff = {}", self.entropy_coeff)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PpoError::BadConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    /// Critic estimate at collection time.
    pub value: f64,
    pub done: bool,
    /// Final engagement result for the acting side, filled when the episode closes.
    pub outcome: Option<f64>,
    pub advantage: f64,
    pub value_target: f64,
}

impl Transition {
    pub fn new(obs: Vec<f64>, action: Vec<f64>, log_prob: f64, reward: f64, value: f64, done: bool) -> Self {
        Self { obs, action, log_prob, reward, value, done, outcome: None, advantage: 0.0, value_target: 0.0 }
    }
}

/// Transitions stored episode by episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    transitions: Vec<Transition>,
    episode_starts: Vec<usize>,
    open: bool,
    advantages_ready: bool,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episodes(&self) -> usize {
        self.episode_starts.len()
    }

    pub fn push(&mut self, t: Transition) {
        if !self.open {
            self.episode_starts.push(self.transitions.len());
            self.open = true;
        }
        self.advantages_ready = false;
        self.transitions.push(t);
    }

    /// Closes the current episode, marking its last transition done and
    /// recording the final result `z` on every one of its transitions.
    pub fn close_episode(&mut self, z: f64) {
        if !self.open {
            return;
        }
        let start = *self.episode_starts.last().expect("open episode has a start");
        for t in &mut self.transitions[start..] {
            t.outcome = Some(z);
        }
        if let Some(last) = self.transitions.last_mut() {
            last.done = true;
        }
        self.open = false;
    }

    /// Appends every episode of `other`; `other` must be fully closed.
    pub fn append(&mut self, other: RolloutBuffer) -> Result<(), PpoError> {
        if other.open {
            let start = *other.episode_starts.last().unwrap_or(&0);
            return Err(PpoError::OpenEpisode { start });
        }
        if self.open {
            let start = *self.episode_starts.last().unwrap_or(&0);
            return Err(PpoError::OpenEpisode { start });
        }
        let offset = self.transitions.len();
        self.episode_starts.extend(other.episode_starts.iter().map(|s| s + offset));
        self.transitions.extend(other.transitions);
        self.advantages_ready = false;
        Ok(())
    }

    fn episode_ranges(&self) -> Vec<(usize, usize)> {
        let mut ends: Vec<usize> = self.episode_starts.iter().skip(1).copied().collect();
        ends.push(self.transitions.len());
        self.episode_starts.iter().copied().zip(ends).collect()
    }
}

/// GAE(γ, λ) for one episode that terminates after its last reward.
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Fills advantages (normalized over the whole buffer) and value targets
/// `γ^(T−t)·z`.
pub fn compute_advantages(buffer: &mut RolloutBuffer, config: &TrainConfig) -> Result<(), PpoError> {
    if buffer.open {
        let start = *buffer.episode_starts.last().unwrap_or(&0);
        return Err(PpoError::OpenEpisode { start });
    }
    for (start, end) in buffer.episode_ranges() {
        let episode = &mut buffer.transitions[start..end];
        let z = episode
            .last()
            .filter(|t| t.done)
            .and_then(|t| t.outcome)
            .ok_or(PpoError::OpenEpisode { start })?;
        let rewards: Vec<f64> = episode.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = episode.iter().map(|t| t.value).collect();
        let adv = gae_advantages(&rewards, &values, config.gamma, config.gae_lambda);
        let mut target = z;
        for (t, a) in episode.iter_mut().zip(adv).rev() {
            t.advantage = a;
            t.value_target = target;
            target *= config.gamma;
        }
    }
    normalize_advantages(&mut buffer.transitions);
    buffer.advantages_ready = true;
    Ok(())
}

fn normalize_advantages(ts: &mut [Transition]) {
    if ts.is_empty() {
        return;
    }
    let n = ts.len() as f64;
    let mean = ts.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = ts.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for t in ts.iter_mut() {
        t.advantage = if std > 1e-12 { (t.advantage - mean) / std } else { 0.0 };
    }
}

/// One sample's clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Training rows gathered from a buffer.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Matrix,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl Minibatch {
    pub fn gather(ts: &[Transition], idx: &[usize]) -> Self {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| ts[i].obs.as_slice()).collect();
        Self {
            obs: Matrix::from_rows(&rows),
            actions: idx.iter().map(|&i| ts[i].action.clone()).collect(),
            old_log_probs: idx.iter().map(|&i| ts[i].log_prob).collect(),
            advantages: idx.iter().map(|&i| ts[i].advantage).collect(),
            value_targets: idx.iter().map(|&i| ts[i].value_target).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorLossStats {
    /// `−mean(surrogate) − c·entropy`.
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Actor loss and its exact gradient with respect to every actor parameter.
pub fn actor_loss_and_grad(
    actor: &Actor,
    mb: &Minibatch,
    config: &TrainConfig,
) -> Result<(ActorLossStats, Actor), PpoError> {
    let n = mb.len() as f64;
    let eps = config.clip_epsilon;
    let inv_var: Vec<f64> = actor.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut stats = ActorLossStats { entropy: gaussian_entropy(&actor.log_std), ..Default::default() };
    let mut d_log_std = vec![0.0; actor.log_std.len()];
    let mut failure = None;

    let (_, net_grad) = actor.net.backprop(&mb.obs, |means| {
        let mut d_out = Matrix::zeros(means.rows, means.cols);
        for i in 0..means.rows {
            let mean = means.row(i);
            let action = &mb.actions[i];
            let new_lp = actor.log_prob(mean, action);
            let ratio = (new_lp - mb.old_log_probs[i]).exp();
            if !ratio.is_finite() {
                failure = Some(PpoError::NonFiniteRatio { sample: i });
                return Err(NnError::NonFiniteLoss { term: format!("ratio[{i}]") });
            }
            let adv = mb.advantages[i];
            let term = clipped_surrogate_term(ratio, adv, eps);
            stats.surrogate += term / n;
            stats.approx_kl += (mb.old_log_probs[i] - new_lp) / n;
            if (ratio - 1.0).abs() > eps {
                stats.clip_fraction += 1.0 / n;
            }
            // ∂term/∂logπ is ρA on the unclipped branch, zero otherwise.
            let g = if ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv { ratio * adv } else { 0.0 };
            if g == 0.0 {
                continue;
            }
            let d = d_out.row_mut(i);
            for k in 0..mean.len() {
                let diff = action[k] - mean[k];
                d[k] = -g / n * diff * inv_var[k];
                d_log_std[k] += -g / n * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let loss = -stats.surrogate - config.entropy_coeff * stats.entropy;
        Ok((loss, d_out))
    }).map_err(|e| failure.take().unwrap_or(PpoError::Nn(e)))?;

    for d in d_log_std.iter_mut() {
        *d -= config.entropy_coeff;
    }
    stats.loss = -stats.surrogate - config.entropy_coeff * stats.entropy;
    Ok((stats, Actor { net: net_grad, log_std: d_log_std }))
}

/// Mean squared error of the critic against the value targets, with gradient.
pub fn value_loss_and_grad(critic: &Critic, mb: &Minibatch) -> Result<(f64, Critic), PpoError> {
    let n = mb.len() as f64;
    let (loss, grad) = critic.net.backprop(&mb.obs, |values| {
        let mut d_out = Matrix::zeros(values.rows, 1);
        let mut loss = 0.0;
        for i in 0..values.rows {
            let err = values.row(i)[0] - mb.value_targets[i];
            loss += err * err / n;
            d_out.row_mut(i)[0] = 2.0 * err / n;
        }
        Ok((loss, d_out))
    })?;
    Ok((loss, Critic { net: grad }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub actor: ActorLossStats,
    pub value: f64,
}

/// Both PPO losses on one minibatch, without gradients.
pub fn clipped_loss(
    actor: &Actor,
    critic: &Critic,
    mb: &Minibatch,
    config: &TrainConfig,
) -> Result<LossBreakdown, PpoError> {
    Ok(LossBreakdown {
        actor: actor_loss_and_grad(actor, mb, config)?.0,
        value: value_loss_and_grad(critic, mb)?.0,
    })
}

/// Actor, critic and their optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Learner {
    pub fn new(actor: Actor, critic: Critic) -> Self {
        let actor_opt = AdamState::new(&actor);
        let critic_opt = AdamState::new(&critic);
        Self { actor, critic, actor_opt, critic_opt }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// `epochs` passes over the shuffled buffer in minibatches of `batch_size`.
pub fn train_iteration(
    learner: &mut Learner,
    buffer: &RolloutBuffer,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainMetrics, PpoError> {
    config.validate()?;
    if buffer.len() < config.batch_size {
        return Err(PpoError::BufferTooSmall { have: buffer.len(), need: config.batch_size });
    }
    if !buffer.advantages_ready {
        return Err(PpoError::AdvantagesMissing);
    }
    let ts = buffer.transitions();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    let mut m = TrainMetrics::default();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let mb = Minibatch::gather(ts, chunk);
            let (stats, actor_grad) = actor_loss_and_grad(&learner.actor, &mb, config)?;
            let (vloss, critic_grad) = value_loss_and_grad(&learner.critic, &mb)?;
            adam_step(&mut learner.actor, &mut learner.actor_opt, &actor_grad, config.actor_lr)?;
            adam_step(&mut learner.critic, &mut learner.critic_opt, &critic_grad, config.critic_lr)?;
            m.surrogate += stats.surrogate;
            m.value_loss += vloss;
            m.entropy += stats.entropy;
            m.clip_fraction += stats.clip_fraction;
            m.approx_kl += stats.approx_kl;
            m.minibatches += 1;
        }
    }
    let k = m.minibatches as f64;
    m.surrogate /= k;
    m.value_loss /= k;
    m.entropy /= k;
    m.clip_fraction /= k;
    m.approx_kl /= k;
    Ok(m)
}
