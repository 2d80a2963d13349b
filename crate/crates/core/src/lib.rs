//! Decentralized multiagent collision avoidance with a learned value network.
//!
//! The crate covers the full pipeline: agent kinematics and reward geometry,
//! a ReLU value regressor, an ORCA baseline, the one-step-lookahead CADRL
//! policy, deep V-learning, and the scenario/benchmark harness.

pub mod error;
pub mod geom;
pub mod metrics;
pub mod net;
pub mod orca;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod state;
pub mod training;

pub use error::{Error, Result};
pub use geom::Vec2;
