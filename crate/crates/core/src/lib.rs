//! Solvers and exact oracles for KL-regularized two-player preference games.

pub mod error;
pub mod estimator;
pub mod game;
pub mod harness;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod solver;

pub use error::{Error, Result};
