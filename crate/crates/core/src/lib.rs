//! Platoon control laboratory.

pub mod ddpg;
pub mod dp;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod exogenous;
pub mod harness;
pub mod kl;
pub mod nn;
pub mod problems;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type TrainedPolicy64 = ddpg::TrainedPolicy<f64>;
pub type TrainedPolicy32 = ddpg::TrainedPolicy<f32>;
pub type FrozenFollowers64 = ddpg::FrozenFollowers<f64>;
pub type FrozenFollowers32 = ddpg::FrozenFollowers<f32>;
