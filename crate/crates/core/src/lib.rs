//! Certified adaptive surrogate hierarchy for parametrized parabolic problems: a finite
//! element full-order model, certified reduced-basis models and machine-learned models
//! whose predictions are certified by the reduced-basis error estimator.

pub mod adaptive;
pub mod app;
pub mod config;
pub mod error;
pub mod fem;
pub mod fom;
pub mod hapod;
pub mod linalg;
pub mod ml;
pub mod mlp;
pub mod model;
pub mod montecarlo;
pub mod optimize;
pub mod problems;
pub mod rb;
pub mod telemetry;
pub mod vkoga;

pub use error::{Error, Result};
