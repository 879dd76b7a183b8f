//! Conjugate-computation variational EM for the dynamic author-persona topic
//! model: per-document closed-form CVI updates, stochastic mini-batch global
//! updates with Kalman smoothing of persona trajectories, held-out evaluation
//! and a synthetic generator for recovery tests.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod estep;
pub mod mathkit;
pub mod mstep;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
