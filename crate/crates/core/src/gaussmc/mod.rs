//! Reproducible Gaussian sampling, Monte Carlo estimation of Φ(λ), moments
//! and lower tails, and a quadrature oracle for low dimensions.

mod bank;
mod estimate;
pub mod quadrature;
pub mod reduce;

pub use bank::{derive_seed, SampleBank};
pub use estimate::{
    estimate_moments, estimate_phi_curve, estimate_tail, fmt17, make_bank, MomentEstimate, PhiCurve,
    TailEstimate, ValueSample, LAMBDA_EPS,
};
pub use quadrature::{quadrature_phi, HermiteRule, QuadRule, Quadrature};
