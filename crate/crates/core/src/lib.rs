//! Decentralized multi-agent reinforcement learning on the commons harvesting
//! game, where each agent adds a differentiable estimate of the mutual
//! information between its own action distribution and its neighbours'
//! behaviour to a clipped PPO objective.

pub mod controller;
pub mod critic;
pub mod env;
pub mod error;
pub mod metrics;
pub mod seed;
pub mod sensors;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
