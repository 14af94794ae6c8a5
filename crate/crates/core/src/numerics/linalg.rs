use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, C64};

/// Relative cutoff applied to every pseudo-inverse that is not governed by a
/// caller-supplied epsilon.
pub const PINV_CUTOFF: f64 = 1e-13;

const EIG_MAX_ITER: usize = 10_000;
const SVD_MAX_ITER: usize = 10_000;

/// Convergence tolerances tried in turn. nalgebra's iterations can return a
/// wrong factorization without reporting failure when the tolerance is
/// machine epsilon itself (seen on rank-one matrices with signed-zero
/// imaginary parts), so every result is checked by recomposition.
const DECOMPOSITION_EPS: [f64; 3] = [5.0 * f64::EPSILON, 50.0 * f64::EPSILON, 500.0 * f64::EPSILON];

/// Accepted recomposition error, relative to the Frobenius norm.
const RECOMPOSE_TOL: f64 = 1e-12;

fn recomposes(m: &DMatrix<C64>, r: &DMatrix<C64>) -> bool {
    (m - r).norm() <= RECOMPOSE_TOL * m.norm().max(f64::MIN_POSITIVE)
}

/// A finite, non-empty complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<C64>);

impl DenseMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "matrix must be at least 1x1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let z = m[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Result<Self> {
        Self::new(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_real(rows: usize, cols: usize, data_row_major: &[f64]) -> Result<Self> {
        if data_row_major.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data_row_major.len()
            )));
        }
        Self::from_fn(rows, cols, |i, j| C64::new(data_row_major[i * cols + j], 0.0))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_square(&self) -> bool {
        self.0.nrows() == self.0.ncols()
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.0.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

impl Deref for DenseMatrix {
    type Target = DMatrix<C64>;
    fn deref(&self) -> &DMatrix<C64> {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: C64,
    /// Unit 2-norm.
    pub vector: DVector<C64>,
}

#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<C64>,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    pub v: DMatrix<C64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let k = self.singular_values.len();
        let mut us = self.u.clone();
        for j in 0..k {
            let s = self.singular_values[j];
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.adjoint()
    }
}

/// All eigenpairs of a square matrix.
///
/// Complex Schur form `M = Q R Q*` followed by back-substitution on the
/// triangular factor, so repeated eigenvalues still get a vector each
/// (nearly parallel when the matrix is defective).
pub fn eig_general(m: &DenseMatrix) -> Result<Vec<EigenPair>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eig_general needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 1 {
        return Ok(vec![EigenPair {
            value: m[(0, 0)],
            vector: DVector::from_element(1, C64::new(1.0, 0.0)),
        }]);
    }
    let (q, t) = DECOMPOSITION_EPS
        .iter()
        .filter_map(|&eps| nalgebra::linalg::Schur::try_new(m.as_matrix().clone(), eps, EIG_MAX_ITER))
        .map(|s| s.unpack())
        .find(|(q, t)| recomposes(m.as_matrix(), &(q * t * q.adjoint())))
        .ok_or(Error::EigNoConvergence {
            iterations: EIG_MAX_ITER,
        })?;

    let norm_t = t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * norm_t;

    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = DVector::<C64>::zeros(n);
        y[k] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = t[(i, k)];
            for j in (i + 1)..k {
                acc += t[(i, j)] * y[j];
            }
            let mut pivot = t[(i, i)] - lambda;
            if pivot.norm() < small {
                pivot = C64::new(small, 0.0);
            }
            y[i] = -acc / pivot;
        }
        let mut v = &q * y;
        let nv = v.norm();
        v.unscale_mut(nv);
        pairs.push(EigenPair { value: lambda, vector: v });
    }
    Ok(pairs)
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD, `m = u diag(sv) v_t`, thin. Slower than
/// the bidiagonal QR but accurate to rounding on every input; used when the
/// latter does not recompose `m`.
fn jacobi_svd(m: &DMatrix<C64>) -> (DMatrix<C64>, DVector<f64>, DMatrix<C64>) {
    if m.nrows() < m.ncols() {
        let (u, sv, v_t) = jacobi_svd(&m.adjoint());
        return (v_t.adjoint(), sv, u.adjoint());
    }
    let (rows, k) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<C64>::identity(k, k);
    let tol = f64::EPSILON * rows as f64;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                if gamma.norm() <= tol * (alpha * beta).sqrt() || gamma.norm() == 0.0 {
                    continue;
                }
                rotated = true;
                // rotate q's phase so the pair's inner product is real
                let phase = gamma / gamma.norm();
                let zeta = (beta - alpha) / (2.0 * gamma.norm());
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)] * phase.conj());
                        mat[(i, p)] = x * c - y * s;
                        mat[(i, q)] = x * s + y * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv = DVector::from_iterator(k, (0..k).map(|j| a.column(j).norm()));
    let smax = sv.max();
    let mut u = DMatrix::<C64>::zeros(rows, k);
    let mut missing = Vec::new();
    for j in 0..k {
        if sv[j] > tol * smax && sv[j] > 0.0 {
            u.set_column(j, &(a.column(j) / C64::new(sv[j], 0.0)));
        } else {
            missing.push(j);
        }
    }
    // complete the columns of (numerically) zero singular values
    for j in missing {
        let residual = |e: usize| {
            let mut w = DVector::<C64>::zeros(rows);
            w[e] = C64::new(1.0, 0.0);
            for _ in 0..2 {
                for i in 0..k {
                    let ui = u.column(i).clone_owned();
                    let proj = ui.dotc(&w);
                    w -= ui * proj;
                }
            }
            w
        };
        let w = (0..rows).map(residual).max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap();
        let n = w.norm();
        u.set_column(j, &(w / C64::new(n, 0.0)));
    }
    (u, sv, v.adjoint())
}

/// Singular value decomposition with nonincreasing singular values.
///
/// `U` is `rows x p` and `V` is `cols x p` with `p = min(rows, cols)`.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    let (u, sv, v_t) = DECOMPOSITION_EPS
        .iter()
        .filter_map(|&eps| nalgebra::linalg::SVD::try_new(m.as_matrix().clone(), true, true, eps, SVD_MAX_ITER))
        .filter_map(|d| Some((d.u?, d.singular_values, d.v_t?)))
        .find(|(u, sv, v_t)| {
            let mut us = u.clone();
            for (j, s) in sv.iter().enumerate() {
                us.column_mut(j).scale_mut(*s);
            }
            recomposes(m.as_matrix(), &(us * v_t))
        })
        .or_else(|| {
            let (u, sv, v_t) = jacobi_svd(m.as_matrix());
            let us = &u * DMatrix::from_diagonal(&sv.map(|s| C64::new(s, 0.0)));
            recomposes(m.as_matrix(), &(us * &v_t)).then_some((u, sv, v_t))
        })
        .ok_or(Error::SvdNoConvergence)?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v_sorted = DMatrix::from_fn(v_t.ncols(), order.len(), |i, j| v_t[(order[j], i)].conj());
    Ok(SvdResult {
        u: u_sorted,
        singular_values: order.iter().map(|&k| sv[k].max(0.0)).collect(),
        v: v_sorted,
    })
}

/// Number of singular values strictly above `epsilon * sigma_max`.
pub fn cutoff_rank(singular_values: &[f64], epsilon: f64) -> usize {
    let smax = singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > epsilon * smax).count()
}

/// Moore-Penrose pseudo-inverse with singular values at or below
/// `cutoff * sigma_max` discarded.
pub fn pinv(m: &DenseMatrix, cutoff: f64) -> Result<DMatrix<C64>> {
    let dec = svd(m)?;
    let r = cutoff_rank(&dec.singular_values, cutoff);
    let mut out = DMatrix::<C64>::zeros(m.ncols(), m.nrows());
    for k in 0..r {
        let s = dec.singular_values[k];
        let vk = dec.v.column(k);
        let uk = dec.u.column(k);
        out += (vk * uk.adjoint()).unscale(s);
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `M x = rhs` (one column per
/// right-hand side).
pub fn lstsq(m: &DenseMatrix, rhs: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if rhs.nrows() != m.nrows() {
        return Err(Error::Dimension(format!(
            "lstsq: matrix has {} rows but rhs has {}",
            m.nrows(),
            rhs.nrows()
        )));
    }
    Ok(pinv(m, PINV_CUTOFF)? * rhs)
}
