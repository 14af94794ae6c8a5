use super::{design_type2, QuadratureRule, Thresholds};
use crate::families::{closed_form_signal, factor_space, minimal_fn, FamilyKind, FoldKind, FunctionFamily, SampledFamily};
use crate::gramian::{build_direct, fold_signal, GramianPair, SignalTrace, WeightSpec};
use crate::{Error, Result};

/// The first `n` functions of the factor space used to build Gramians.
/// Monomials are swapped for Chebyshev polynomials on the same interval:
/// same span, far better conditioned.
pub fn factor_basis(factor: &FunctionFamily, n: usize) -> Result<SampledFamily> {
    let fam = match factor.kind {
        FamilyKind::Monomial => FunctionFamily {
            kind: FamilyKind::Chebyshev,
            ..*factor
        },
        _ => *factor,
    };
    SampledFamily::first(fam, n)
}

#[derive(Debug, Clone)]
pub struct DirectDesign {
    pub rule: QuadratureRule,
    pub pair: GramianPair,
    pub basis: SampledFamily,
}

/// `n`-node rule for the factor space `factor` with Gramians integrated
/// directly against `u`.
pub fn design_direct(factor: &FunctionFamily, n: usize, u: &WeightSpec, oracle_tol: f64, th: &Thresholds) -> Result<DirectDesign> {
    let [a, b] = factor.x_interval;
    u.validate_on(a, b)?;
    let basis = factor_basis(factor, n)?;
    let mu = minimal_fn(&basis.family);
    let pair = build_direct(&basis, &basis, Some(&mu), u, oracle_tol)?;
    let mut rule = design_type2(&pair, None, &basis, Some(u), th)?;
    rule.family = Some(*factor);
    Ok(DirectDesign { rule, pair, basis })
}

#[derive(Debug, Clone)]
pub struct FoldedDesign {
    pub rule: QuadratureRule,
    pub pair: GramianPair,
    pub trace: SignalTrace,
    /// Row functions of the folded pair.
    pub basis: SampledFamily,
}

/// Signal grid of length `2n - 1` over the k-interval of `g`: symmetric
/// about zero for Toeplitz, uniform for Hankel, geometric for hyperbolic.
/// `grid_step` fixes the spacing (log-ratio for hyperbolic) from `alpha` on.
pub fn signal_grid(g: &FunctionFamily, n: usize) -> Result<Vec<f64>> {
    let len = 2 * n - 1;
    let [alpha, beta] = g.k_interval;
    let steps = (len - 1).max(1) as f64;
    Ok(match g.fold_kind() {
        FoldKind::Toeplitz => {
            let h = g.grid_step.unwrap_or(beta.abs().max(alpha.abs()) / (n - 1).max(1) as f64);
            (0..len).map(|j| (j as f64 - (n - 1) as f64) * h).collect()
        }
        FoldKind::Hankel => {
            let h = g.grid_step.unwrap_or((beta - alpha) / steps);
            (0..len).map(|j| alpha + j as f64 * h).collect()
        }
        FoldKind::Hyperbolic => {
            let t = g.grid_step.unwrap_or((beta / alpha).ln() / steps);
            (0..len).map(|j| alpha * (j as f64 * t).exp()).collect()
        }
        FoldKind::None => {
            return Err(Error::Domain(format!("{} has no folding structure", g.kind.name())));
        }
    })
}

/// Samples the moment signal of `g` against `u`, folds it into an `n x n`
/// pair and designs at cutoff `epsilon`.
pub fn design_folded(g: &FunctionFamily, u: &WeightSpec, epsilon: f64, n: usize, oracle_tol: f64, th: &Thresholds) -> Result<FoldedDesign> {
    let [a, b] = g.x_interval;
    u.validate_on(a, b)?;
    let gen = closed_form_signal(g, u).with_tolerance(oracle_tol);
    let trace = SignalTrace::from_generator(&gen, signal_grid(g, n)?)?;
    let trace = if trace.s_prime.is_none() {
        trace.with_fd_derivative(g.fold_kind() == FoldKind::Hyperbolic)?
    } else {
        trace
    };
    design_from_trace(trace, g, g.fold_kind(), epsilon, n, Some(u), th)
}

/// Folds a measured trace and designs at cutoff `epsilon`. `g` supplies the
/// family (its x-interval and kind); the trace needs `s'`.
pub fn design_from_trace(
    trace: SignalTrace,
    g: &FunctionFamily,
    kind: FoldKind,
    epsilon: f64,
    n: usize,
    u: Option<&WeightSpec>,
    th: &Thresholds,
) -> Result<FoldedDesign> {
    if trace.s_prime.is_none() {
        return Err(Error::MissingDerivative);
    }
    let pair = fold_signal(&trace, kind, n)?;
    let basis = SampledFamily::new(
        FunctionFamily {
            grid_step: None,
            ..*g
        },
        pair.row_kgrid.clone(),
    )?;
    let mut rule = design_type2(&pair, Some(epsilon), &basis, u, th)?;
    rule.family = Some(*g);
    Ok(FoldedDesign {
        rule,
        pair,
        trace,
        basis,
    })
}

/// Factor space used for the direct path.
pub fn direct_factor(g: &FunctionFamily) -> Result<FunctionFamily> {
    factor_space(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::make_family;

    #[test]
    fn grids_have_fold_shape() {
        let g = make_family(FamilyKind::ExpIkx, [-1.0, 1.0], [-4.0, 4.0]).unwrap();
        let k = signal_grid(&g, 5).unwrap();
        assert_eq!(k.len(), 9);
        assert!((k[4]).abs() < 1e-15 && (k[8] - 4.0).abs() < 1e-14);
        let g = make_family(FamilyKind::ExpKx, [-3.0, 3.0], [1.0 / 16.0, 4.0]).unwrap();
        let k = signal_grid(&g, 4).unwrap();
        assert!((k[6] - 4.0).abs() < 1e-13);
        assert!(SignalTrace::new(k, vec![crate::C64::new(1.0, 0.0); 7], None).unwrap().geometric_ratio().is_ok());
    }

    #[test]
    fn direct_monomial_equals_gauss() {
        let f = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, 5.0]).unwrap();
        let d = design_direct(&f, 5, &WeightSpec::constant(1.0), 1e-13, &Thresholds::default()).unwrap();
        assert!(d.rule.accepted());
        let (x, _) = crate::test_oracles::legendre(5);
        for (p, q) in d.rule.nodes.iter().zip(&x) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn folded_power_family() {
        let g = make_family(FamilyKind::PowerXk, [0.0, 1.0], [-1.0 / 3.0, 0.5]).unwrap();
        let d = design_folded(&g, &WeightSpec::constant(1.0), 1e-12, 40, 1e-13, &Thresholds::default()).unwrap();
        // realized cutoff rank for this configuration, frozen
        assert_eq!(d.rule.diagnostics.rank, Some(7));
        assert!(d.rule.accepted(), "{:?}", d.rule.diagnostics);
    }

    #[test]
    fn trace_without_derivative_is_refused() {
        let g = make_family(FamilyKind::PowerXk, [0.0, 1.0], [0.0, 1.0]).unwrap();
        let k: Vec<f64> = (0..5).map(|j| j as f64 * 0.25).collect();
        let s = k.iter().map(|k| crate::C64::new(1.0 / (k + 1.0), 0.0)).collect();
        let t = SignalTrace::new(k, s, None).unwrap();
        let err = design_from_trace(t, &g, FoldKind::Hankel, 1e-12, 3, None, &Thresholds::default()).unwrap_err();
        assert!(matches!(err, Error::MissingDerivative));
    }
}
