use nalgebra::{DMatrix, DVector};

use super::{lstsq_weights, max_modulus, orthonormal_columns, rule_gramians, DiagnosticReport, QuadratureRule, RuleType, Thresholds, Weights};
use crate::families::{weighted_samples, Basis, Multiplied, Stacked};
use crate::families::MinimalFunction;
use crate::gramian::{quotient_dense, regularize, GramianPair, RegularizedQuotient, WeightSpec};
use crate::numerics::{eig_general, lstsq, svd, DenseMatrix};
use crate::{Error, Result, C64};

/// Type-2 rule from the eigendecomposition of `A B^{-1}` (dense) or of the
/// regularized quotient at `epsilon`.
///
/// `basis` evaluates the row functions of the pair on its interval. Weights
/// come from the orthonormalized basis when `u` is positive and from a
/// least-squares fit to every entry of `B` otherwise. A rejection is a
/// regular return value with `accepted == false`.
pub fn design_type2(
    pair: &GramianPair,
    epsilon: Option<f64>,
    basis: &dyn Basis,
    u: Option<&WeightSpec>,
    th: &Thresholds,
) -> Result<QuadratureRule> {
    let interval = basis.interval();
    let [a, b] = interval;
    let mu = MinimalFunction {
        domain: interval,
        ..pair.mu_used.ok_or(Error::MissingDerivative)?
    };
    mu.check_invertible()?;
    if basis.len() != pair.rows() {
        return Err(Error::Dimension(format!(
            "basis has {} functions but the pair has {} rows",
            basis.len(),
            pair.rows()
        )));
    }

    let mut report = DiagnosticReport {
        epsilon,
        ..Default::default()
    };
    let (eigs, rq): (Vec<(C64, DVector<C64>)>, Option<RegularizedQuotient>) = match epsilon {
        None => match quotient_dense(pair) {
            Ok(q) => (eig_general(&q)?.into_iter().map(|p| (p.value, p.vector)).collect(), None),
            Err(Error::SingularGramian { ratio }) => {
                report.rejected_reason = Some(format!(
                    "no n-term quadrature detected: B is numerically singular (sigma_min/sigma_max = {ratio:.3e}); \
                     regularize with an epsilon to design at lower rank"
                ));
                return Ok(QuadratureRule::rejected(interval, None, report));
            }
            Err(e) => return Err(e),
        },
        Some(eps) => {
            let rq = regularize(pair, eps)?;
            let e = eig_general(&rq.q_tilde)?
                .into_iter()
                .map(|p| {
                    let v = rq.lift(&p.vector);
                    let norm = v.norm();
                    (p.value, v / C64::new(norm, 0.0))
                })
                .collect();
            report.rank = Some(rq.rank);
            (e, Some(rq))
        }
    };
    let expected = eigs.len();
    let lam_max = eigs.iter().fold(0.0f64, |m, e| m.max(e.0.norm()));
    let tol_imag = th.tol_imag * lam_max;
    let slack = th.dedup * (b - a);

    let mut cands: Vec<(f64, C64, DVector<C64>)> = Vec::new();
    for (lam, v) in eigs {
        let defect = mu.realness_defect(lam);
        if defect > tol_imag {
            let msg = format!("eigenvalue {lam:.6e}: realness defect {defect:.3e} > {tol_imag:.3e}");
            log::debug!("{msg}");
            report.discarded.push(msg);
            continue;
        }
        let Some(x) = mu.mu_inverse(lam) else {
            report.discarded.push(format!("eigenvalue {lam:.6e}: outside the image of mu"));
            continue;
        };
        if x < a - slack || x > b + slack {
            report.discarded.push(format!("eigenvalue {lam:.6e}: node {x:.6e} outside [{a}, {b}]"));
            continue;
        }
        report.eigen_imag_max = report.eigen_imag_max.max(defect);
        cands.push((x.clamp(a, b), lam, v));
    }
    cands.sort_by(|p, q| p.0.total_cmp(&q.0));
    if cands.len() < expected {
        report.rejected_reason = Some(format!(
            "no n-term quadrature detected: {} of {expected} eigenvalues map to real nodes in [{a}, {b}]",
            cands.len()
        ));
        return Ok(QuadratureRule::rejected(interval, None, report));
    }
    if let Some(w) = cands.windows(2).find(|w| w[1].0 - w[0].0 < slack) {
        report.rejected_reason = Some(format!("coincident nodes near {:.6e}", w[0].0));
        return Ok(QuadratureRule::rejected(interval, None, report));
    }
    let nodes: Vec<f64> = cands.iter().map(|c| c.0).collect();
    report.eigenvalues = cands.iter().map(|c| c.1).collect();

    // position eigenvectors, phase aligned. A regularized eigenvector lives
    // in the retained singular subspace: it is compared with T projected on
    // that subspace and may miss by T's own distance from it.
    let mut position_excess = 0.0f64;
    for (x, _, v) in &cands {
        let mut t = basis.column(*x);
        let mut slack_j = 0.0;
        if let Some(rq) = &rq {
            let ur = rq.u.columns(0, rq.rank);
            let proj = &ur * (ur.adjoint() * &t);
            slack_j = (&t - &proj).norm() / t.norm();
            t = proj;
        }
        let t = &t / C64::new(t.norm(), 0.0);
        let overlap = t.dotc(v);
        let phase = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { C64::new(1.0, 0.0) };
        let r = (v * phase - &t).norm();
        report.position_residual = report.position_residual.max(r);
        position_excess = position_excess.max(r - slack_j);
    }

    let bmat = pair.b.as_matrix();
    let amat = pair.a.as_ref().map(|a| a.as_matrix());
    let ls = lstsq_weights(basis, basis, &nodes, bmat, None)?;
    let positive = u.is_some_and(|u| u.is_positive());
    let orth = if positive { orthonormal_weights(pair, rq.as_ref(), basis, &nodes) } else { None };
    // truncation leaves T(x_j) slightly outside the retained subspace, which
    // spoils the orthonormal-basis weights; there they are a diagnostic only
    let weights = match orth {
        Some(w) if rq.is_some() => {
            report.weight_agreement = Some(relative_gap(&w, &ls));
            ls
        }
        Some(w) => {
            report.weight_agreement = Some(relative_gap(&w, &ls));
            w
        }
        None => ls,
    };

    let wmax = weights.iter().fold(0.0f64, |m, w| m.max(w.norm()));
    let (bq, aq) = rule_gramians(basis, basis, &mu, &nodes, &weights);
    let mut gram = max_modulus(&(&bq - bmat));
    if let Some(am) = amat {
        gram = gram.max(max_modulus(&(&aq - am)));
    }
    report.gram_residual = gram;
    if let Some(q) = orthonormal_columns(&pair.b, basis, &nodes) {
        let mut qd = q;
        for (j, wj) in weights.iter().enumerate() {
            let s = wj.re.max(0.0).sqrt();
            qd.column_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        let n = qd.nrows();
        report.orthogonality_residual = Some(max_modulus(&(&qd * qd.adjoint() - DMatrix::<C64>::identity(n, n))));
    }

    let bmax = max_modulus(bmat);
    let mut reasons = Vec::new();
    if weights.iter().any(|w| !(w.norm() > 1e-13 * wmax)) {
        reasons.push("a weight vanishes".to_string());
    }
    if !(gram <= th.tol_gram * bmax) {
        reasons.push(format!("gram residual {gram:.3e} > {:.3e}", th.tol_gram * bmax));
    }
    if !(position_excess <= th.tol_pos) {
        reasons.push(format!(
            "position residual {:.3e} > {:.3e}",
            report.position_residual, th.tol_pos
        ));
    }
    report.accepted = reasons.is_empty();
    if !report.accepted {
        report.rejected_reason = Some(format!("no n-term quadrature detected: {}", reasons.join("; ")));
    }
    Ok(QuadratureRule {
        rule_type: RuleType::Type2,
        family: None,
        interval,
        nodes,
        weights: Weights::Scalar(weights),
        diagnostics: report,
    })
}

fn relative_gap(w: &[C64], ls: &[C64]) -> f64 {
    w.iter().zip(ls).fold(0.0f64, |m, (p, q)| m.max((p - q).norm() / p.norm()))
}

/// `w_j = 1 / ||Q(n, x_j)||^2` with `Q` the orthonormalized basis: through a
/// Cholesky factor of `B` (dense) or `Sigma^{-1/2} U*` (regularized).
fn orthonormal_weights(pair: &GramianPair, rq: Option<&RegularizedQuotient>, basis: &dyn Basis, nodes: &[f64]) -> Option<Vec<C64>> {
    let q = match rq {
        None => orthonormal_columns(&pair.b, basis, nodes)?,
        Some(rq) => {
            let tn = basis.at_nodes(nodes);
            let mut q = rq.u.adjoint() * tn;
            for i in 0..rq.rank {
                let s = 1.0 / rq.sigma[i].sqrt();
                q.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            q
        }
    };
    Some(q.column_iter().map(|c| C64::new(1.0 / c.norm_squared(), 0.0)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootCheck {
    /// `max_{k, j} |p_k(x_j)|` over an orthonormal basis `p_k` of the
    /// residual space `(I - P_n)(mu T)`.
    pub max_residual: f64,
    pub residual_rank: usize,
    /// `sigma_min / sigma_max` of `T(n, {x_j})`.
    pub t_condition: f64,
    pub t_invertible: bool,
}

/// Evaluates the residual functions `(I - P_n)[mu T]` at the rule's nodes
/// and checks that `T(n, {x_j})` is invertible. `u` must be positive.
pub fn residual_root_check(rule: &QuadratureRule, t: &dyn Basis, mu: &MinimalFunction, u: &WeightSpec, tol: f64) -> Result<RootCheck> {
    let n = t.len();
    let mt = Multiplied { basis: t, mu };
    let stacked = Stacked { first: t, second: &mt };
    let m = weighted_samples(&stacked, u)?;
    let mt_s = DenseMatrix::new(m.columns(0, n).into_owned())?;
    let mm_s = m.columns(n, n).into_owned();
    let c = lstsq(&mt_s, &mm_s)?;
    let r = &mm_s - mt_s.as_matrix() * &c;
    let dec = svd(&DenseMatrix::new(r)?)?;
    let scale = svd(&DenseMatrix::new(mm_s)?)?.singular_values[0];
    let top = dec.singular_values[0];
    let keep: Vec<usize> = (0..dec.singular_values.len())
        .filter(|&k| {
            let s = dec.singular_values[k];
            s > 1e-13 * scale && s * s > tol * top * top
        })
        .collect();
    let mut max_res = 0.0f64;
    for &x in &rule.nodes {
        let tx = t.column(x);
        let mx = DVector::from_fn(n, |j, _| mu.mu(x) * tx[j]);
        let row = mx.transpose() - tx.transpose() * &c;
        for &k in &keep {
            let p = (&row * dec.v.column(k))[(0, 0)] / dec.singular_values[k];
            max_res = max_res.max(p.norm());
        }
    }
    let (t_condition, t_invertible) = if rule.nodes.len() == n {
        let sv = svd(&DenseMatrix::new(t.at_nodes(&rule.nodes))?)?.singular_values;
        let c = sv[n - 1] / sv[0];
        (c, c > 1e-12)
    } else {
        (0.0, false)
    };
    Ok(RootCheck {
        max_residual: max_res,
        residual_rank: keep.len(),
        t_condition,
        t_invertible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::validate_rule;
    use crate::families::{make_family, minimal_fn, FamilyKind, SampledFamily};
    use crate::gramian::build_direct;
    use crate::numerics::DEFAULT_TOL_1D;

    fn legendre_setup(n: usize) -> (SampledFamily, MinimalFunction, GramianPair) {
        let f = make_family(FamilyKind::Chebyshev, [-1.0, 1.0], [0.0, 40.0]).unwrap();
        let t = SampledFamily::first(f, n).unwrap();
        let mu = minimal_fn(&f);
        let pair = build_direct(&t, &t, Some(&mu), &WeightSpec::constant(1.0), DEFAULT_TOL_1D).unwrap();
        (t, mu, pair)
    }

    #[test]
    fn two_point_gauss() {
        let (t, _, pair) = legendre_setup(2);
        let rule = design_type2(&pair, None, &t, Some(&WeightSpec::constant(1.0)), &Thresholds::default()).unwrap();
        assert!(rule.accepted(), "{:?}", rule.diagnostics);
        let r = 1.0 / 3f64.sqrt();
        assert!((rule.nodes[0] + r).abs() < 1e-12 && (rule.nodes[1] - r).abs() < 1e-12);
        for w in rule.weights.real().unwrap() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_gauss_legendre_oracle() {
        for n in 1..=10 {
            let (t, mu, pair) = legendre_setup(n);
            let rule = design_type2(&pair, None, &t, Some(&WeightSpec::constant(1.0)), &Thresholds::default()).unwrap();
            assert!(rule.accepted(), "n={n} {:?}", rule.diagnostics);
            let (xs, ws) = crate::test_oracles::legendre(n);
            let w = rule.weights.real().unwrap();
            for j in 0..n {
                assert!((rule.nodes[j] - xs[j]).abs() < 1e-10, "n={n}");
                assert!((w[j] - ws[j]).abs() < 1e-10, "n={n}");
            }
            let d = &rule.diagnostics;
            assert!(d.weight_agreement.unwrap() < 1e-8);
            assert!(d.orthogonality_residual.unwrap() < 1e-8);
            for (x, lam) in rule.nodes.iter().zip(&d.eigenvalues) {
                assert!((mu.mu(*x) - lam).norm() <= 1e-8 * 1.0 + 1e-10);
            }
        }
    }

    #[test]
    fn validate_rule_perturbations() {
        let (t, mu, pair) = legendre_setup(5);
        let rule = design_type2(&pair, None, &t, Some(&WeightSpec::constant(1.0)), &Thresholds::default()).unwrap();
        let rep = validate_rule(&rule, &pair, &t, &mu);
        assert!(rep.gram_residual <= 1e-10 * pair.b.max_abs());
        assert!(rep.orthogonality_residual.unwrap() < 1e-8);
        let mut bad = rule.clone();
        bad.nodes[2] += 1e-3;
        assert!(validate_rule(&bad, &pair, &t, &mu).gram_residual > 1e-5);
    }

    #[test]
    fn root_check() {
        let u = WeightSpec::constant(1.0);
        let (t, mu, pair) = legendre_setup(3);
        let rule = design_type2(&pair, None, &t, Some(&u), &Thresholds::default()).unwrap();
        let rc = residual_root_check(&rule, &t, &mu, &u, 1e-8).unwrap();
        assert!(rc.max_residual <= 1e-9, "{rc:?}");
        assert_eq!(rc.residual_rank, 1);
        assert!(rc.t_invertible);
        let mut moved = rule.clone();
        moved.nodes.iter_mut().for_each(|x| *x += 0.01);
        assert!(residual_root_check(&moved, &t, &mu, &u, 1e-8).unwrap().max_residual > 1e-3);

        let (t, mu, pair) = legendre_setup(1);
        let rule = design_type2(&pair, None, &t, Some(&u), &Thresholds::default()).unwrap();
        assert!(rule.nodes[0].abs() < 1e-15);
        assert!(residual_root_check(&rule, &t, &mu, &u, 1e-8).unwrap().max_residual < 1e-14);
    }

    #[test]
    fn singular_b_is_a_rejection() {
        let f = make_family(FamilyKind::Chebyshev, [-1.0, 1.0], [0.0, 40.0]).unwrap();
        let t = SampledFamily::first(f, 3).unwrap();
        let u = WeightSpec::atoms(vec![(-0.5, 1.0), (0.5, 1.0)]).unwrap();
        let pair = build_direct(&t, &t, Some(&minimal_fn(&f)), &u, DEFAULT_TOL_1D).unwrap();
        let rule = design_type2(&pair, None, &t, Some(&u), &Thresholds::default()).unwrap();
        assert!(!rule.accepted());
        assert!(rule.diagnostics.rejected_reason.unwrap().contains("singular"));
        // at rank 2 the two atoms come back
        let rule = design_type2(&pair, Some(1e-10), &t, Some(&u), &Thresholds::default()).unwrap();
        assert!(rule.accepted(), "{:?}", rule.diagnostics);
        assert!((rule.nodes[0] + 0.5).abs() < 1e-10 && (rule.nodes[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn non_invertible_mu_is_an_error() {
        let f = make_family(FamilyKind::BesselJ, [1.0, 3.0], [0.0, 4.0]).unwrap();
        let t = SampledFamily::first(f, 2).unwrap();
        let pair = build_direct(&t, &t, Some(&minimal_fn(&f)), &WeightSpec::constant(1.0), DEFAULT_TOL_1D).unwrap();
        assert!(matches!(
            design_type2(&pair, None, &t, None, &Thresholds::default()),
            Err(Error::NotInvertible { .. })
        ));
    }
}
