//! Generalized spatiotemporal Gaussian processes.
//!
//! Two models share a time-dependent spatial kernel built from a Mercer
//! basis with dynamic eigenvalues `lambda_l(t) = gamma_l u_l(t)`:
//!
//! * Model I: Kronecker-product prior on the mean, iid noise.
//! * Model II: Kronecker-sum marginal `C_t (x) I_x + C_{x|t} (x) I_t`, whose
//!   inverse and determinant reduce to `L` small `J x J` systems.
//!
//! All numerical code is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! at the crate root fix `f64`.

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod kronalg;
pub mod linalg;
pub mod predict;
pub mod samplers;
pub mod scalar;
pub mod simharness;
pub mod sparse;
pub mod stdata;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = stdata::SpatioTemporalDataset<f64>;
pub type Stats = stdata::SufficientStats<f64>;
pub type Basis = kernels::MercerBasis<f64>;
