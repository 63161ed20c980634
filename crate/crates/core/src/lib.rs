//! Log-moment-generating functions of convex functionals of Gaussian vectors.
//!
//! The crate estimates `Φ(λ) = λ⁻¹ ln E e^{λF(g)}` by Monte Carlo and
//! quadrature, audits the convexity, sub-Gaussian, gap and small-deviation
//! inequalities it satisfies, computes exact Sherrington–Kirkpatrick
//! partition functions by Gray-code enumeration, and checks the stochastic
//! control representation of `Φ` on space-time grids.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used by the CLI.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auditor;
pub mod bdcontrol;
pub mod check;
pub mod error;
pub mod functionals;
pub mod gaussmc;
pub mod harness;
pub mod scalar;
pub mod skmodel;
pub mod special;

pub use check::{Check, CheckPoint, SlackPolicy};
pub use error::{Error, Result};
pub use functionals::{Functional, Kind, Monotonicity, ScalarMap};
pub use gaussmc::{PhiCurve, SampleBank, ValueSample};
pub use scalar::Real;
pub use skmodel::{GammaCurve, SkInstance, SkParams};

pub type Functional64 = Functional<f64>;
pub type PhiCurve64 = PhiCurve<f64>;
pub type GammaCurve64 = GammaCurve<f64>;
pub type SkParams64 = SkParams<f64>;
pub type SkInstance64 = SkInstance<f64>;
pub type ValueSample64 = ValueSample<f64>;
pub type ControlProblem64 = bdcontrol::ControlProblem<f64>;
pub type ValueGrid64 = bdcontrol::ValueGrid<f64>;

pub type Functional32 = Functional<f32>;
pub type PhiCurve32 = PhiCurve<f32>;
