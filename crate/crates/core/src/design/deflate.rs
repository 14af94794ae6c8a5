use super::{design_type2, factor_basis, lstsq_weights, rule_gramians, DiagnosticReport, QuadratureRule, RuleType, Thresholds, Weights};
use crate::families::{minimal_fn, Basis, FunctionFamily, SampledFamily};
use crate::gramian::{build_direct, GramianPair, WeightSpec};
use crate::numerics::DenseMatrix;
use crate::{Error, Result, C64};

/// Removes the contribution of fixed nodes: `B - sum_j w_j T(x_j) S*(x_j)`
/// and the same for `A` with `mu(x_j)`.
pub fn deflate_1d(pair: &GramianPair, fixed: &[(f64, C64)], t: &dyn Basis, s: &dyn Basis) -> Result<GramianPair> {
    if t.len() != pair.rows() || s.len() != pair.cols() {
        return Err(Error::Dimension("bases do not match the pair".into()));
    }
    let mu = pair.mu_used.ok_or(Error::MissingDerivative)?;
    let nodes: Vec<f64> = fixed.iter().map(|f| f.0).collect();
    let weights: Vec<C64> = fixed.iter().map(|f| f.1).collect();
    let (bf, af) = rule_gramians(t, s, &mu, &nodes, &weights);
    let b = DenseMatrix::new(pair.b.as_matrix() - bf)?;
    let a = match &pair.a {
        Some(a) => Some(DenseMatrix::new(a.as_matrix() - af)?),
        None => None,
    };
    Ok(GramianPair {
        a,
        b,
        ..pair.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointConfig {
    pub max_iter: usize,
    /// Converged once interior nodes and endpoint weights move less than this.
    pub tol: f64,
    /// Share of the previous endpoint weight kept at each update.
    pub damping: f64,
    pub oracle_tol: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-12,
            damping: 0.5,
            oracle_tol: crate::numerics::DEFAULT_TOL_1D,
        }
    }
}

/// `n`-node rule with one endpoint (`Left`/`Right`) or both fixed, `factor`
/// being the factor space (its first functions span the test space).
///
/// Alternates between a least-squares solve for the endpoint weights over
/// the enlarged Gramians and re-extracting the interior nodes from the pair
/// deflated by the endpoints. Non-convergence returns the last iterate with
/// `accepted == false`.
pub fn design_radau(
    factor: &FunctionFamily,
    u: &WeightSpec,
    n: usize,
    ends: Endpoint,
    cfg: &EndpointConfig,
) -> Result<QuadratureRule> {
    let [a, b] = factor.x_interval;
    let fixed_x: Vec<f64> = match ends {
        Endpoint::Left => vec![a],
        Endpoint::Right => vec![b],
        Endpoint::Both => vec![a, b],
    };
    let f = fixed_x.len();
    if n < f {
        return Err(Error::Dimension(format!("{n} nodes cannot include {f} fixed endpoints")));
    }
    let ni = n - f;
    // exactness degree 2n - 1 - f: fit against the m-function Gramians
    let degree = 2 * n - 1 - f;
    let m = degree / 2 + 1;
    let with_a = 2 * m - 1 <= degree;
    let big = factor_basis(factor, m)?;
    let mu = minimal_fn(&big.family);
    let full = build_direct(&big, &big, Some(&mu), u, cfg.oracle_tol)?;
    let full_a = full.a()?.as_matrix().clone();
    let fit = |nodes: &[f64]| -> Result<Vec<C64>> {
        lstsq_weights(&big, &big, nodes, full.b.as_matrix(), with_a.then_some((&full_a, &mu)))
    };

    let th = Thresholds::default();
    let mut history = Vec::new();
    let mut report = DiagnosticReport::default();
    let (interior_pair, interior_basis) = if ni > 0 {
        let basis = factor_basis(factor, ni)?;
        (Some(build_direct(&basis, &basis, Some(&mu), u, cfg.oracle_tol)?), Some(basis))
    } else {
        (None, None)
    };
    let extract = |pair: &GramianPair, basis: &SampledFamily| -> Result<Option<Vec<f64>>> {
        let rule = design_type2(pair, None, basis, None, &th)?;
        let ok = rule.nodes.len() == basis.len() && rule.nodes.iter().all(|&x| x > a && x < b);
        Ok(ok.then_some(rule.nodes))
    };

    let mut interior = match (&interior_pair, &interior_basis) {
        (Some(p), Some(bs)) => extract(p, bs)?.ok_or_else(|| Error::Domain("interior start rule does not exist".into()))?,
        _ => Vec::new(),
    };
    let all_nodes = |interior: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = fixed_x.iter().copied().chain(interior.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let end_weights = |nodes: &[f64], w: &[C64]| -> Vec<C64> {
        fixed_x.iter().map(|&e| w[nodes.iter().position(|&x| x == e).expect("endpoint present")]).collect()
    };
    let nodes0 = all_nodes(&interior);
    let mut w_end = end_weights(&nodes0, &fit(&nodes0)?);
    let mut converged = ni == 0;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let (p, bs) = (interior_pair.as_ref().expect("ni > 0"), interior_basis.as_ref().expect("ni > 0"));
        let fixed: Vec<(f64, C64)> = fixed_x.iter().copied().zip(w_end.iter().copied()).collect();
        let deflated = deflate_1d(p, &fixed, bs, bs)?;
        let Some(next) = extract(&deflated, bs)? else {
            report.rejected_reason = Some(format!("interior nodes left ({a}, {b}) at iteration {iterations}"));
            break;
        };
        let nodes = all_nodes(&next);
        let solved = end_weights(&nodes, &fit(&nodes)?);
        let new_end: Vec<C64> = w_end
            .iter()
            .zip(&solved)
            .map(|(o, s)| *o * cfg.damping + *s * (1.0 - cfg.damping))
            .collect();
        let dx = next.iter().zip(&interior).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let dw = new_end.iter().zip(&w_end).fold(0.0f64, |m, (p, q)| m.max((p - q).norm()));
        let step = dx.max(dw);
        history.push(step);
        log::debug!("endpoint iteration {iterations}: step {step:.3e}");
        interior = next;
        w_end = new_end;
        converged = step < cfg.tol;
    }

    let nodes = all_nodes(&interior);
    let weights = fit(&nodes)?;
    let (bq, aq) = rule_gramians(&big, &big, &mu, &nodes, &weights);
    let mut gram = super::max_modulus(&(&bq - full.b.as_matrix()));
    if with_a {
        gram = gram.max(super::max_modulus(&(&aq - &full_a)));
    }
    let bmax = full.b.max_abs();
    report.gram_residual = gram;
    report.iterations = Some(iterations);
    report.history = history;
    report.converged = Some(converged);
    report.accepted = converged && gram <= th.tol_gram * bmax;
    if report.rejected_reason.is_none() && !report.accepted {
        report.rejected_reason = Some(if converged {
            format!("gram residual {gram:.3e} > {:.3e}", th.tol_gram * bmax)
        } else {
            format!("no convergence after {iterations} iterations")
        });
    }
    Ok(QuadratureRule {
        rule_type: RuleType::Type2,
        family: Some(*factor),
        interval: factor.x_interval,
        nodes,
        weights: Weights::Scalar(weights),
        diagnostics: report,
    })
}

/// Both endpoints fixed.
pub fn design_lobatto(factor: &FunctionFamily, u: &WeightSpec, n: usize, cfg: &EndpointConfig) -> Result<QuadratureRule> {
    design_radau(factor, u, n, Endpoint::Both, cfg)
}
