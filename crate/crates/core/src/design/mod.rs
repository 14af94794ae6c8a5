//! Quadrature rules from Gramian pairs: Type-2 nodes and weights, Type-3
//! matrix weights, deflation, endpoint-constrained rules and point-target
//! localization.

mod deflate;
pub(crate) mod json;
mod pipeline;
mod type2;
mod type3;

use nalgebra::DMatrix;

pub use deflate::{deflate_1d, design_lobatto, design_radau, Endpoint, EndpointConfig};
pub use json::{read_rule_json, rule_json};
pub use pipeline::{design_direct, design_folded, design_from_trace, direct_factor, factor_basis, signal_grid, DirectDesign, FoldedDesign};
pub use type2::{design_type2, residual_root_check, RootCheck};
pub use type3::{design_type3, localize_targets, synthetic_targets, Localization, Scattering, SyntheticScene};

use crate::families::{Basis, FunctionFamily, MinimalFunction};
use crate::gramian::GramianPair;
use crate::numerics::lstsq;
use crate::{numerics::DenseMatrix, Result, C64};

/// Acceptance thresholds; the relative ones scale with `max |lambda|` and
/// `max |B|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tol_imag: f64,
    pub tol_pos: f64,
    pub tol_gram: f64,
    /// Nodes closer than this fraction of `b - a` count as one.
    pub dedup: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tol_imag: 1e-8,
            tol_pos: 1e-6,
            tol_gram: 1e-8,
            dedup: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleType {
    Type2,
    Type3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Scalar(Vec<C64>),
    /// `m x r`
    Matrix(DMatrix<C64>),
}

impl Weights {
    pub fn scalar(&self) -> Option<&[C64]> {
        match self {
            Weights::Scalar(w) => Some(w),
            Weights::Matrix(_) => None,
        }
    }

    pub fn real(&self) -> Option<Vec<f64>> {
        self.scalar().map(|w| w.iter().map(|z| z.re).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticReport {
    pub eigen_imag_max: f64,
    pub position_residual: f64,
    pub gram_residual: f64,
    pub accepted: bool,
    pub rejected_reason: Option<String>,
    pub epsilon: Option<f64>,
    pub rank: Option<usize>,
    /// Eigenvalues dropped on the way to nodes, with the reason.
    pub discarded: Vec<String>,
    /// `max |(Q D^{1/2})(Q D^{1/2})* - I|` for positive weights.
    pub orthogonality_residual: Option<f64>,
    /// Relative gap between the orthonormal-basis weights and the
    /// least-squares weights.
    pub weight_agreement: Option<f64>,
    /// Eigenvalues behind the accepted nodes, in node order.
    pub eigenvalues: Vec<C64>,
    /// Fixed-point iterations, for endpoint-constrained rules.
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Step size per iteration.
    pub history: Vec<f64>,
}

impl DiagnosticReport {
    pub fn rejected(reason: impl Into<String>) -> Self {
        Self {
            accepted: false,
            rejected_reason: Some(reason.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub rule_type: RuleType,
    pub family: Option<FunctionFamily>,
    pub interval: [f64; 2],
    pub nodes: Vec<f64>,
    pub weights: Weights,
    pub diagnostics: DiagnosticReport,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn accepted(&self) -> bool {
        self.diagnostics.accepted
    }

    /// `sum_j w_j f(x_j)` for scalar weights.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> Option<C64> {
        let w = self.weights.scalar()?;
        Some(self.nodes.iter().zip(w).map(|(&x, &w)| w * f(x)).sum())
    }

    pub(crate) fn rejected(interval: [f64; 2], family: Option<FunctionFamily>, report: DiagnosticReport) -> Self {
        Self {
            rule_type: RuleType::Type2,
            family,
            interval,
            nodes: Vec::new(),
            weights: Weights::Scalar(Vec::new()),
            diagnostics: report,
        }
    }
}

/// `sum_j T(x_j) w_j S*(x_j)` and the `mu`-weighted version.
pub fn rule_gramians(
    t: &dyn Basis,
    s: &dyn Basis,
    mu: &MinimalFunction,
    nodes: &[f64],
    weights: &[C64],
) -> (DMatrix<C64>, DMatrix<C64>) {
    let tn = t.at_nodes(nodes);
    let sn = s.at_nodes(nodes);
    let mut tw = tn.clone();
    let mut tmw = tn;
    for (j, (&x, &w)) in nodes.iter().zip(weights).enumerate() {
        tw.column_mut(j).scale_mut_c(w);
        tmw.column_mut(j).scale_mut_c(w * mu.mu(x));
    }
    (&tw * sn.adjoint(), &tmw * sn.adjoint())
}

trait ScaleC {
    fn scale_mut_c(&mut self, c: C64);
}

impl<S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>> ScaleC for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S> {
    fn scale_mut_c(&mut self, c: C64) {
        for v in self.iter_mut() {
            *v *= c;
        }
    }
}

/// Weights solving `sum_j w_j T_i(x_j) conj(S_l(x_j)) = B_il` over all
/// entries in the least-squares sense; `A` entries join when given.
pub fn lstsq_weights(
    t: &dyn Basis,
    s: &dyn Basis,
    nodes: &[f64],
    b: &DMatrix<C64>,
    a: Option<(&DMatrix<C64>, &MinimalFunction)>,
) -> Result<Vec<C64>> {
    let (m, n) = b.shape();
    let tn = t.at_nodes(nodes);
    let sn = s.at_nodes(nodes);
    let blocks = if a.is_some() { 2 } else { 1 };
    let rows = blocks * m * n;
    let mut e = DMatrix::<C64>::zeros(rows, nodes.len());
    let mut rhs = DMatrix::<C64>::zeros(rows, 1);
    for i in 0..m {
        for l in 0..n {
            let r = i * n + l;
            rhs[(r, 0)] = b[(i, l)];
            for j in 0..nodes.len() {
                e[(r, j)] = tn[(i, j)] * sn[(l, j)].conj();
            }
            if let Some((am, mu)) = a {
                let r2 = m * n + r;
                rhs[(r2, 0)] = am[(i, l)];
                for j in 0..nodes.len() {
                    e[(r2, j)] = e[(r, j)] * mu.mu(nodes[j]);
                }
            }
        }
    }
    let sol = lstsq(&DenseMatrix::new(e)?, &rhs)?;
    Ok(sol.column(0).iter().copied().collect())
}

/// Recomputes both Gramians from the rule. For square positive-definite `B`
/// also checks that `Q(n, {x_j}) diag(sqrt w)` is unitary, `Q` being `T`
/// orthonormalized through a Cholesky factor of `B`.
pub fn validate_rule(rule: &QuadratureRule, pair: &GramianPair, t: &dyn Basis, mu: &MinimalFunction) -> DiagnosticReport {
    let mut report = rule.diagnostics.clone();
    let Some(w) = rule.weights.scalar() else {
        return report;
    };
    let (bq, aq) = rule_gramians(t, t, mu, &rule.nodes, w);
    let mut res = (&bq - pair.b.as_matrix()).camax_modulus();
    if let Some(a) = &pair.a {
        res = res.max((&aq - a.as_matrix()).camax_modulus());
    }
    report.gram_residual = res;
    if let Some(q) = orthonormal_columns(&pair.b, t, &rule.nodes) {
        let mut qd = q;
        for (j, wj) in w.iter().enumerate() {
            let s = wj.re.max(0.0).sqrt();
            for v in qd.column_mut(j).iter_mut() {
                *v *= s;
            }
        }
        let gram = &qd * qd.adjoint();
        let n = gram.nrows();
        let dev = (gram - DMatrix::<C64>::identity(n, n)).camax_modulus();
        report.orthogonality_residual = Some(dev);
    }
    report
}

/// `L^{-1} T(n, {x_j})` with `B = L L*`, when `B` is square Hermitian
/// positive definite and matches the node count.
pub(crate) fn orthonormal_columns(b: &DenseMatrix, t: &dyn Basis, nodes: &[f64]) -> Option<DMatrix<C64>> {
    if !b.is_square() || b.nrows() != t.len() || b.hermitian_defect() > 1e-10 * b.max_abs() {
        return None;
    }
    let herm = (b.as_matrix() + b.adjoint()) * C64::new(0.5, 0.0);
    let chol = nalgebra::Cholesky::new(herm)?;
    let tn = t.at_nodes(nodes);
    chol.l().solve_lower_triangular(&tn)
}

trait CamaxModulus {
    fn camax_modulus(&self) -> f64;
}

impl CamaxModulus for DMatrix<C64> {
    fn camax_modulus(&self) -> f64 {
        self.iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

pub(crate) fn max_modulus(m: &DMatrix<C64>) -> f64 {
    m.camax_modulus()
}
