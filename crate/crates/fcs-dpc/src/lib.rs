//! Finite-control-set data-driven predictive control: discrete-alphabet
//! receding-horizon control with data-based multistep predictors, condensed
//! integer least-squares objectives, and a modified sphere decoder.

pub mod cli;
pub mod closed_loop;
pub mod condense;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod numeric;
pub mod plant;
pub mod predictor;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
