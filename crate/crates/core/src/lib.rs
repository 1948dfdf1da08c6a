//! Deterministic 1-v-1 air-combat self-play laboratory.
//!
//! A 3-DOF aircraft model and a proportional-navigation missile form the
//! engagement world; an MLP actor-critic is trained with clipped-surrogate
//! PPO while Monte Carlo tree search picks among actions sampled from the
//! policy's Gaussian.
// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod dynamics;
pub mod environment;
pub mod harness;
pub mod mcts;
pub mod missile;
pub mod nn;
pub mod ppo;
pub mod selfplay;

use serde::{Deserialize, Serialize};

/// One of the two aircraft in an engagement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Blue,
    Red,
}

impl Side {
    pub fn opponent(self) -> Side {
        match self {
            Side::Blue => Side::Red,
            Side::Red => Side::Blue,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Blue => "blue",
            Side::Red => "red",
        }
    }
}
