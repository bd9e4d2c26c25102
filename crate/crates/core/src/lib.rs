//! Multitype branching processes in i.i.d. random environments with
//! linear-fractional offspring laws.
//!
//! * [`linfrac`]: exact quenched arithmetic (composition along an environment,
//!   survival probabilities, local probabilities) in a numerically stabilized
//!   representation, generic over the floating point type.
//! * [`env`]: random environment models with a common left eigenvector,
//!   regime classification and exponential tilting.
//! * [`walk`]: functionals of the associated random walk, the renewal function
//!   of the walk killed below zero and conditioned expectations.
//! * [`sim`]: particle-level and law-level samplers.
//! * [`estimators`]: Monte Carlo estimators of limiting constants and
//!   conditional limit laws in the supercritical regimes.
//! * [`accum`]: mergeable accumulators and the deterministic replica runner.
//! * [`series`]: truncated power-series composition, an independent oracle for
//!   the quenched law.

pub mod accum;
pub mod env;
pub mod error;
pub mod estimators;
pub mod linfrac;
pub mod matrix;
pub mod scalar;
pub mod series;
pub mod sim;
pub mod walk;

pub use error::{Error, Result};
pub use linfrac::{perron_root, DerivedQuantities, LinFracLaw, QuenchedState, RawComposition};
pub use matrix::Matrix;
pub use scalar::{Field, Real};

/// Double-precision environment letter.
pub type LinFracLaw64 = LinFracLaw<f64>;
/// Single-precision environment letter.
pub type LinFracLaw32 = LinFracLaw<f32>;
/// Double-precision quenched state.
pub type QuenchedState64 = QuenchedState<f64>;
/// Single-precision quenched state.
pub type QuenchedState32 = QuenchedState<f32>;
/// Double-precision matrix.
pub type Matrix64 = Matrix<f64>;
