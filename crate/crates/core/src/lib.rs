//! Parametrix construction of the fundamental solution of a
//! non-divergence parabolic operator
//! `L u = Σ a_ij ∂²_ij u + Σ b_i ∂_i u + q u − ∂_t u`,
//! with the explicit constants of its two-sided Gaussian bound.

pub mod bounds;
pub mod coeffs;
pub mod config;
pub mod error;
pub mod exprparse;
pub mod kernels;
pub mod levi;
pub mod oracle;
pub mod parametrix;
pub mod quadrature;
pub mod query;
pub mod special;

pub use coeffs::{CoefficientField, Region, SpdMatrix, Structure};
pub use error::{Error, Result};
pub use quadrature::QuadratureScheme;
pub use query::{KernelQuery, QuerySampler};
