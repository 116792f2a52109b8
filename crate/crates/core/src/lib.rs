//! Hybrid differential reward for multi-vehicle cooperative driving: a
//! highway simulator, reward variants, a joint-action tree search planner,
//! a tabular invariance oracle, metrics and reward-signal diagnostics.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod metrics;
pub mod oracle;
pub mod planner;
pub mod rewards;
pub mod sim;
pub mod snr;

pub use error::{Error, Result};
