//! Risk-aware distributional reinforcement learning for portfolio management.
//!
//! A GRU actor proposes portfolio weights (with bounded short selling), a
//! quantile critic learns the distribution of discounted returns, and the
//! actor ascends a mean-return-minus-VaR utility read off that distribution.

pub mod action;
pub mod apex;
pub mod autodiff;
pub mod backtest;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod data;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod learner;
pub mod nn;
pub mod oracle;
pub mod portfolio;
pub mod rng;

pub use action::{action_to_weights, delta_transform, softmax, RawAction, WeightVector};
pub use critic::{QuantileVector, RiskConfig};
pub use env::{EnvConfig, PortfolioEnv, Transition};
pub use error::{Error, Result};
pub use learner::{LearnerConfig, LearnerState, TrainSetup};
pub use nn::{NetConfig, Network, Role};
pub use portfolio::PortfolioState;
