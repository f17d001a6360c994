//! VAMPnets: learning Markovian feature transformations of stochastic
//! trajectories by maximizing VAMP scores, and building and validating
//! Koopman models on top of the learned features.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod koopman;
pub mod network;
pub mod numlin;
pub mod simulate;
pub mod vampscore;

pub use error::{Error, Result};
