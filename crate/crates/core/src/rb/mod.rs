//! Certified reduced-basis models.

mod generator;
mod riesz;
mod rom;

pub use generator::{ExtendReport, RbGenerator};
pub use riesz::{dual_norm, riesz_representative, RieszImage};
pub use rom::{
    min_theta_alpha, rb_residual_bruteforce, state_l2_energy_norm, EstimatorData, OperatorCoefficient, RbRom,
    ReducedOperators,
};
