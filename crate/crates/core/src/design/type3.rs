use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{max_modulus, DiagnosticReport, QuadratureRule, RuleType, Thresholds, Weights};
use crate::families::{make_family, Basis, FamilyKind, FunctionFamily, MinimalFunction, SampledFamily};
use crate::numerics::{cutoff_rank, eig_general, lstsq, pinv, svd, DenseMatrix};
use crate::{Error, Result, C64};

/// Eigenvalues of `A B^+` split into (near-)zero and the `r` largest.
struct Spectrum {
    rank: usize,
    zeros: usize,
    /// `(lambda, eigenvector)` of the nonzero part.
    nonzero: Vec<(C64, DVector<C64>)>,
}

fn spectrum(b: &DenseMatrix, a: &DenseMatrix, rank_eps: f64, zero_tol: f64) -> Result<Spectrum> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("A is {:?} but B is {:?}", a.shape(), b.shape())));
    }
    let sv = svd(b)?.singular_values;
    let rank = cutoff_rank(&sv, rank_eps);
    if rank == 0 {
        return Ok(Spectrum {
            rank,
            zeros: b.nrows(),
            nonzero: Vec::new(),
        });
    }
    let p = a.as_matrix() * pinv(b, rank_eps)?;
    let mut eig: Vec<(C64, DVector<C64>)> = eig_general(&DenseMatrix::new(p)?)?
        .into_iter()
        .map(|e| (e.value, e.vector))
        .collect();
    eig.sort_by(|x, y| y.0.norm().total_cmp(&x.0.norm()));
    let top = eig[0].0.norm();
    let zeros = eig.iter().filter(|e| e.0.norm() <= zero_tol * top).count();
    eig.truncate(rank);
    Ok(Spectrum {
        rank,
        zeros,
        nonzero: eig,
    })
}

/// Type-3 rule: `r` nodes from the nonzero eigenvalues of `A B^+` and an
/// `m x r` weight matrix with `B = W S(x_j, n)`, `A = W diag(mu(x_j)) S(x_j, n)`.
///
/// `s` evaluates the column functions; `rank_eps` sets the rank of `B`.
/// A node with `mu(x_j) = 0` cannot be told apart from the null space, so
/// `mu` should not vanish on the interval.
pub fn design_type3(pair: &crate::gramian::GramianPair, s: &dyn Basis, mu: &MinimalFunction, rank_eps: f64, th: &Thresholds) -> Result<QuadratureRule> {
    let interval = s.interval();
    let [a, b] = interval;
    let mu = MinimalFunction { domain: interval, ..*mu };
    mu.check_invertible()?;
    let am = pair.a()?;
    let m = pair.rows();
    if s.len() != pair.cols() {
        return Err(Error::Dimension(format!("basis has {} functions, pair has {} columns", s.len(), pair.cols())));
    }
    let sp = spectrum(&pair.b, am, rank_eps, 1e-8)?;
    let mut report = DiagnosticReport {
        rank: Some(sp.rank),
        epsilon: Some(rank_eps),
        ..Default::default()
    };
    if sp.rank == 0 {
        report.rejected_reason = Some("B has rank 0 at this threshold".into());
        return Ok(QuadratureRule::rejected(interval, None, report));
    }
    if sp.zeros != m - sp.rank {
        report.rejected_reason = Some(format!(
            "expected {} zero eigenvalues of A B^+, found {}",
            m - sp.rank,
            sp.zeros
        ));
        return Ok(QuadratureRule::rejected(interval, None, report));
    }
    let lam_max = sp.nonzero[0].0.norm();
    let mut cols: Vec<(f64, C64, DVector<C64>)> = Vec::new();
    for (lam, v) in &sp.nonzero {
        let defect = mu.realness_defect(*lam);
        let x = mu.mu_inverse(*lam);
        match x {
            Some(x) if defect <= th.tol_imag * lam_max && x >= a - th.dedup * (b - a) && x <= b + th.dedup * (b - a) => {
                report.eigen_imag_max = report.eigen_imag_max.max(defect);
                cols.push((x.clamp(a, b), *lam, v.clone()));
            }
            _ => report.discarded.push(format!("eigenvalue {lam:.6e} does not map to a node in [{a}, {b}]")),
        }
    }
    if cols.len() < sp.rank {
        report.rejected_reason = Some(format!("only {} of {} nonzero eigenvalues map to nodes", cols.len(), sp.rank));
        return Ok(QuadratureRule::rejected(interval, None, report));
    }
    cols.sort_by(|p, q| p.0.total_cmp(&q.0));
    let nodes: Vec<f64> = cols.iter().map(|c| c.0).collect();
    report.eigenvalues = cols.iter().map(|c| c.1).collect();

    // scale each eigenvector column: B_il = sum_j c_j v_j[i] conj(S_l(x_j)), and A likewise
    let r = nodes.len();
    let n = s.len();
    let sn = s.at_nodes(&nodes);
    let mut e = DMatrix::<C64>::zeros(2 * m * n, r);
    let mut rhs = DMatrix::<C64>::zeros(2 * m * n, 1);
    for i in 0..m {
        for l in 0..n {
            let row = i * n + l;
            rhs[(row, 0)] = pair.b[(i, l)];
            rhs[(m * n + row, 0)] = am[(i, l)];
            for (j, (x, _, v)) in cols.iter().enumerate() {
                let base = v[i] * sn[(l, j)].conj();
                e[(row, j)] = base;
                e[(m * n + row, j)] = base * mu.mu(*x);
            }
        }
    }
    let c = lstsq(&DenseMatrix::new(e)?, &rhs)?;
    let mut w = DMatrix::<C64>::zeros(m, r);
    for (j, (_, _, v)) in cols.iter().enumerate() {
        w.set_column(j, &(v * c[(j, 0)]));
    }
    let s_rows = sn.adjoint();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(r, nodes.iter().map(|&x| mu.mu(x))));
    let res_b = max_modulus(&(&w * &s_rows - pair.b.as_matrix()));
    let res_a = max_modulus(&(&w * d * &s_rows - am.as_matrix()));
    report.gram_residual = res_b.max(res_a);
    let bmax = pair.b.max_abs();
    report.accepted = report.gram_residual <= th.tol_gram * bmax;
    if !report.accepted {
        report.rejected_reason = Some(format!(
            "gram residual {:.3e} > {:.3e}",
            report.gram_residual,
            th.tol_gram * bmax
        ));
    }
    Ok(QuadratureRule {
        rule_type: RuleType::Type3,
        family: None,
        interval,
        nodes,
        weights: Weights::Matrix(w),
        diagnostics: report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scattering {
    NoTargets,
    /// Fitted weight matrix is diagonal: no multiple scattering; the
    /// diagonal holds the reflectivities.
    Scalar(Vec<C64>),
    /// Dense invertible weight matrix: multiple scattering; the matrix is
    /// recovered from `B = T w S`.
    Matrix(DMatrix<C64>),
    /// Neither diagonal nor invertible.
    Inconsistent,
    /// No probe functions were supplied to fit weights.
    Unclassified,
}

impl Scattering {
    pub fn describe(&self) -> &'static str {
        match self {
            Scattering::NoTargets => "no targets detected",
            Scattering::Scalar(_) => "no multiple scattering, weights are the reflectivities",
            Scattering::Matrix(_) => "multiple scattering, reflectivities recoverable via a simple matrix equation",
            Scattering::Inconsistent => "weight fit is neither diagonal nor invertible",
            Scattering::Unclassified => "unclassified (no probe functions)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub positions: Vec<f64>,
    pub eigenvalues: Vec<C64>,
    pub rank: usize,
    pub zero_count: usize,
    pub classification: Scattering,
}

/// Target positions from the nonzero spectrum of `A B^+`, and a weight
/// classification when probe bases `(t, s)` for the rows and columns are given.
pub fn localize_targets(
    b: &DenseMatrix,
    a: &DenseMatrix,
    mu: &MinimalFunction,
    threshold: f64,
    probes: Option<(&dyn Basis, &dyn Basis)>,
) -> Result<Localization> {
    let sp = spectrum(b, a, threshold, 1e-8)?;
    if sp.rank == 0 {
        return Ok(Localization {
            positions: Vec::new(),
            eigenvalues: Vec::new(),
            rank: 0,
            zero_count: b.nrows(),
            classification: Scattering::NoTargets,
        });
    }
    let mut pts: Vec<(f64, C64)> = sp
        .nonzero
        .iter()
        .filter_map(|(lam, _)| mu.mu_inverse(*lam).map(|x| (x, *lam)))
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let positions: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let classification = match probes {
        None => Scattering::Unclassified,
        Some((t, s)) => classify(b, t, s, &positions)?,
    };
    Ok(Localization {
        eigenvalues: pts.iter().map(|p| p.1).collect(),
        positions,
        rank: sp.rank,
        zero_count: sp.zeros,
        classification,
    })
}

fn classify(b: &DenseMatrix, t: &dyn Basis, s: &dyn Basis, positions: &[f64]) -> Result<Scattering> {
    if positions.is_empty() {
        return Ok(Scattering::NoTargets);
    }
    let tr = DenseMatrix::new(t.at_nodes(positions))?;
    let sr = DenseMatrix::new(s.at_nodes(positions).adjoint())?;
    let cut = crate::numerics::PINV_CUTOFF;
    let w = pinv(&tr, cut)? * b.as_matrix() * pinv(&sr, cut)?;
    let r = w.nrows();
    let wmax = max_modulus(&w);
    let off = (0..r)
        .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(w[(i, j)].norm()));
    if off <= 1e-8 * wmax {
        return Ok(Scattering::Scalar((0..r).map(|i| w[(i, i)]).collect()));
    }
    let sv = svd(&DenseMatrix::new(w.clone())?)?.singular_values;
    if sv[r - 1] > 1e-10 * sv[0] {
        Ok(Scattering::Matrix(w))
    } else {
        Ok(Scattering::Inconsistent)
    }
}

/// Point targets planted on `[0, 1]` with Gramians measured by Chebyshev
/// probe functions (`m` rows, `n` columns, `mu = x`).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub positions: Vec<f64>,
    /// `r x r`; diagonal unless multiple scattering was requested.
    pub weights: DMatrix<C64>,
    pub b: DenseMatrix,
    pub a: DenseMatrix,
    pub probe: FunctionFamily,
    pub m: usize,
    pub n: usize,
}

impl SyntheticScene {
    pub fn row_basis(&self) -> SampledFamily {
        SampledFamily::first(self.probe, self.m).expect("nonempty")
    }

    pub fn col_basis(&self) -> SampledFamily {
        SampledFamily::first(self.probe, self.n).expect("nonempty")
    }

    pub fn mu(&self) -> MinimalFunction {
        MinimalFunction::identity(self.probe.x_interval)
    }
}

/// Seeded scene with `r` separated targets in `[0.1, 0.9]` (one per equal
/// bin), reflectivities in `[0.5, 2]`, and, with `matrix_weights`, small
/// off-diagonal couplings keeping the weight matrix diagonally dominant.
/// Positions and reflectivities do not depend on `matrix_weights`.
pub fn synthetic_targets(r: usize, seed: u64, matrix_weights: bool, m: usize, n: usize) -> Result<SyntheticScene> {
    if r == 0 || m < r || n < r {
        return Err(Error::Dimension(format!("need 1 <= r <= min(m, n), got r={r}, m={m}, n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 0.8 / r as f64;
    let positions: Vec<f64> = (0..r).map(|j| 0.1 + width * (j as f64 + rng.gen_range(0.2..0.8))).collect();
    let refl: Vec<f64> = (0..r).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut w = DMatrix::<C64>::from_diagonal(&DVector::from_iterator(r, refl.iter().map(|&v| C64::new(v, 0.0))));
    if matrix_weights {
        let amp = 0.4 / r as f64;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    w[(i, j)] = C64::new(rng.gen_range(-amp..amp), 0.0);
                }
            }
        }
    }
    let probe = make_family(FamilyKind::Chebyshev, [0.0, 1.0], [0.0, (m.max(n) - 1) as f64])?;
    let t = SampledFamily::first(probe, m)?;
    let s = SampledFamily::first(probe, n)?;
    let tr = t.at_nodes(&positions);
    let sr = s.at_nodes(&positions).adjoint();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(r, positions.iter().map(|&x| C64::new(x, 0.0))));
    let b = DenseMatrix::new(&tr * &w * &sr)?;
    let a = DenseMatrix::new(&tr * d * &w * &sr)?;
    Ok(SyntheticScene {
        positions,
        weights: w,
        b,
        a,
        probe,
        m,
        n,
    })
}
