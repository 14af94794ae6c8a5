//! Design of n-term quadrature rules from Gramian pairs.
//!
//! A quadrature that integrates the two Gramians
//!
//! ```text
//! B = T(n,x) . T(x,n)        A = T(n,x) . mu(x) T(x,n)
//! ```
//!
//! of a function system `T` against a weight `u` has its nodes recorded in
//! the spectrum of the quotient `A B^-1`: the eigenvalues are `mu(x_j)` and
//! the eigenvectors are the columns `T(n, x_j)`. This crate builds such
//! pairs (directly from a weight, or by folding a moment signal into a
//! Toeplitz, Hankel or hyperbolic matrix), regularizes them by truncated
//! SVD, and turns the spectrum into rules with scalar or matrix weights,
//! in one and two dimensions.
//!
//! Module map:
//!
//! - [`numerics`]: dense complex linear algebra and adaptive integration
//! - [`families`]: parametric function families, minimal functions, factor spaces
//! - [`gramian`]: weights, signals, Gramian construction, folding, regularization
//! - [`design`]: Type-2 and Type-3 rules, deflation, Radau/Lobatto, target localization
//! - [`quad2d`]: bivariate Gramians, simultaneous eigenvalue extraction, deflation iteration
//! - [`verify`]: error curves and exactness sweeps

pub mod design;
pub mod error;
pub mod families;
pub mod gramian;
pub mod numerics;
pub mod quad2d;
#[cfg(test)]
mod test_oracles;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
