//! Dense complex linear algebra and adaptive integration.
//!
//! Everything downstream works in complex double precision, so a single
//! eigen path serves both Hermitian and non-Hermitian quotients.

mod integrate;
mod linalg;

pub use integrate::{
    composite_rule, integrate_1d, integrate_1d_pieces, integrate_2d, Domain2D, DEFAULT_TOL_1D,
    DEFAULT_TOL_2D,
};
pub use linalg::{
    cutoff_rank, eig_general, lstsq, pinv, svd, DenseMatrix, EigenPair, SvdResult, PINV_CUTOFF,
};
