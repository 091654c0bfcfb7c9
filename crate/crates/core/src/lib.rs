//! Gaussian-process regression toolkit for Li-ion cycle-ageing prediction.
//!
//! The model maps six inputs (an Ah-throughput increment plus five cycling
//! stress factors: reciprocal temperature, depth of discharge, middle state
//! of charge, charging and discharging C-rates) to the capacity loss over
//! that increment. A composed covariance function hosts the stress factors
//! in Matérn-5/2 factors and the throughput increment in an offset-linear
//! factor; hyperparameters are fitted by maximizing the log marginal
//! likelihood. Around the regression core: capacity-curve preprocessing,
//! windowing into training samples, curve rollout with uncertainty,
//! progressive training-case construction, evaluation metrics and a
//! synthetic corpus generator with closed-form ground truth.

pub mod ageing;
pub mod curriculum;
pub mod error;
pub mod gp;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};

/// Artifact version stamped into emitted files.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
