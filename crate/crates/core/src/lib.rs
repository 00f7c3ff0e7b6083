//! Reward-curriculum laboratory.
//!
//! Potential-based shaping under staged reward curricula, exact tabular
//! oracles, small from-scratch networks, DQN/PPO agents on gridworlds,
//! loss-landscape grids, one-step sharpness and behavioural analyses.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); training,
//! checkpoints and every file format use `f64`, fixed by the aliases below.

pub mod agents;
pub mod analysis;
pub mod envs;
pub mod error;
pub mod landscape;
pub mod nn;
pub mod scalar;
pub mod shaping;
pub mod tabular;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = tabular::MdpTable<f64>;
pub type QTable = tabular::QTable<f64>;
pub type Params = nn::ParamVector<f64>;
pub type Adam = nn::AdamState<f64>;
