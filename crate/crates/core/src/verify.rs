//! Error curves and exactness sweeps of finished rules, measured against
//! closed forms or the integration oracle.

use std::io::Write;

use rayon::prelude::*;

use crate::design::QuadratureRule;
use crate::families::{closed_form_signal, FamilyKind, FunctionFamily};
use crate::gramian::WeightSpec;
use crate::numerics::{integrate_1d_pieces, DEFAULT_TOL_1D};
use crate::{Error, Result, C64};

pub const DEFAULT_POINTS: usize = 200;

/// Below `FLOOR_FRACTION * max |s|` (or of `sum |w_j G(k, x_j)|`) the error
/// is reported as absolute.
pub const FLOOR_FRACTION: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    ClosedForm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFlag {
    Relative,
    /// `|s(k)|` too small to divide by; the entry is an absolute error.
    Absolute,
}

impl ErrorFlag {
    pub fn name(self) -> &'static str {
        match self {
            ErrorFlag::Relative => "rel",
            ErrorFlag::Absolute => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub k_grid: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub flags: Vec<ErrorFlag>,
    pub reference: Reference,
    /// Grid points where the reference could not be evaluated; not in `k_grid`.
    pub failed: Vec<f64>,
}

impl ErrorCurve {
    pub fn max_error(&self) -> f64 {
        self.relative_error.iter().fold(0.0, |m, &e| m.max(e))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,rel_err,flag")?;
        for ((k, e), f) in self.k_grid.iter().zip(&self.relative_error).zip(&self.flags) {
            writeln!(w, "{k:.16e},{e:.16e},{}", f.name())?;
        }
        Ok(())
    }
}

/// Parameter grid for an error curve: integers for integer families,
/// log-uniform for `exp_kx` and for `power_xk` on a positive range,
/// uniform otherwise.
pub fn k_grid(family: &FunctionFamily, k_range: [f64; 2], points: usize) -> Vec<f64> {
    let [lo, hi] = k_range;
    if family.kind.integer_k() {
        return (lo.ceil() as i64..=hi.floor() as i64).map(|k| k as f64).collect();
    }
    if points <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    let t = |j: usize| j as f64 / (points - 1) as f64;
    let log = matches!(family.kind, FamilyKind::ExpKx | FamilyKind::PowerXk) && lo > 0.0;
    if log {
        let (a, b) = (lo.ln(), hi.ln());
        (0..points).map(|j| (a + (b - a) * t(j)).exp()).collect()
    } else {
        (0..points).map(|j| lo + (hi - lo) * t(j)).collect()
    }
}

/// `err(k) = |sum_j w_j G(k, x_j) - s(k)| / |s(k)|` over `k_range`
/// (the family's k-interval by default).
pub fn error_curve(
    rule: &QuadratureRule,
    family: &FunctionFamily,
    u: &WeightSpec,
    k_range: Option<[f64; 2]>,
    points: usize,
) -> Result<ErrorCurve> {
    let [a, b] = family.x_interval;
    let [ra, rb] = rule.interval;
    let scale = (b - a).abs().max(1.0);
    if (ra - a).abs() > 1e-12 * scale || (rb - b).abs() > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "rule interval [{ra}, {rb}] does not match family interval [{a}, {b}]"
        )));
    }
    if rule.weights.scalar().is_none() {
        return Err(Error::Domain("error curves need scalar weights".into()));
    }
    let gen = closed_form_signal(family, u);
    let reference = if gen.has_closed_form() { Reference::ClosedForm } else { Reference::Oracle };
    let grid = k_grid(family, k_range.unwrap_or(family.k_interval), points);

    let w = rule.weights.scalar().expect("checked above");
    let rows: Vec<(f64, Result<(C64, C64, f64)>)> = grid
        .par_iter()
        .map(|&k| {
            let exact = gen.eval(k).map(|(s, _)| s);
            let quad = rule.apply(|x| family.eval(k, x)).expect("scalar weights");
            // magnitude of the terms, for signals that vanish at k
            let size: f64 = rule.nodes.iter().zip(w).map(|(&x, w)| (w * family.eval(k, x)).norm()).sum();
            (k, exact.map(|s| (s, quad, size)))
        })
        .collect();

    let max_s = rows
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok())
        .fold(0.0f64, |m, (s, _, _)| m.max(s.norm()));
    let mut curve = ErrorCurve {
        k_grid: Vec::new(),
        relative_error: Vec::new(),
        flags: Vec::new(),
        reference,
        failed: Vec::new(),
    };
    for (k, r) in rows {
        match r {
            Ok((s, q, size)) => {
                let err = (q - s).norm();
                let (e, f) = if s.norm() < FLOOR_FRACTION * max_s.max(size) {
                    (err, ErrorFlag::Absolute)
                } else {
                    (err / s.norm().max(1e-300), ErrorFlag::Relative)
                };
                if !e.is_finite() {
                    curve.failed.push(k);
                    continue;
                }
                curve.k_grid.push(k);
                curve.relative_error.push(e);
                curve.flags.push(f);
            }
            Err(e) => {
                log::warn!("reference failed at k = {k}: {e}");
                curve.failed.push(k);
            }
        }
    }
    Ok(curve)
}

/// A named test integrand.
pub struct TestFunction<'a> {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> C64 + Sync + 'a>,
}

impl<'a> TestFunction<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> C64 + Sync + 'a) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// `x^0 .. x^degree`.
pub fn monomials(degree: u32) -> Vec<TestFunction<'static>> {
    (0..=degree)
        .map(|p| TestFunction::new(format!("x^{p}"), move |x: f64| C64::new(x.powi(p as i32), 0.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactnessReport {
    pub max_abs_err: f64,
    pub worst_function: Option<String>,
}

/// Largest `|sum_j w_j f(x_j) - int u f|` over `functions`.
pub fn exactness_sweep(rule: &QuadratureRule, functions: &[TestFunction], u: &WeightSpec, tol: f64) -> Result<ExactnessReport> {
    let [a, b] = rule.interval;
    let breaks = u.breakpoints();
    let errors: Vec<f64> = functions
        .par_iter()
        .map(|t| -> Result<f64> {
            let exact = match u.atoms_list() {
                Some(atoms) => atoms.iter().map(|&(x, w)| (t.f)(x) * w).sum(),
                None => integrate_1d_pieces(|x| (t.f)(x) * u.eval(x), a, b, &breaks, tol)?,
            };
            let quad = rule
                .apply(&t.f)
                .ok_or_else(|| Error::Domain("exactness sweeps need scalar weights".into()))?;
            Ok((quad - exact).norm())
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1));
    Ok(ExactnessReport {
        max_abs_err: worst.map_or(0.0, |(_, &e)| e),
        worst_function: worst.map(|(i, _)| functions[i].name.clone()),
    })
}

/// [`exactness_sweep`] at the default oracle tolerance.
pub fn exactness_sweep_default(rule: &QuadratureRule, functions: &[TestFunction], u: &WeightSpec) -> Result<ExactnessReport> {
    exactness_sweep(rule, functions, u, DEFAULT_TOL_1D)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{design_direct, design_folded, Thresholds};
    use crate::families::make_family;

    fn gauss(n: usize) -> QuadratureRule {
        let f = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, n as f64 - 1.0]).unwrap();
        design_direct(&f, n, &WeightSpec::constant(1.0), 1e-13, &Thresholds::default()).unwrap().rule
    }

    #[test]
    fn gauss_error_curve_on_monomials() {
        let rule = gauss(8);
        let g = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, 16.0]).unwrap();
        let c = error_curve(&rule, &g, &WeightSpec::constant(1.0), Some([0.0, 15.0]), DEFAULT_POINTS).unwrap();
        assert_eq!(c.k_grid.len(), 16);
        assert_eq!(c.reference, Reference::Oracle);
        // odd moments vanish: absolute errors there
        assert_eq!(c.flags[1], ErrorFlag::Absolute);
        assert!(c.max_error() <= 1e-12, "{c:?}");
        let c = error_curve(&rule, &g, &WeightSpec::constant(1.0), Some([16.0, 16.0]), DEFAULT_POINTS).unwrap();
        assert!(c.relative_error[0] > 1e-12);
    }

    #[test]
    fn grids() {
        let g = make_family(FamilyKind::ExpKx, [-3.0, 3.0], [1.0 / 16.0, 4.0]).unwrap();
        let k = k_grid(&g, g.k_interval, 200);
        assert_eq!(k.len(), 200);
        assert!((k[0] - 1.0 / 16.0).abs() < 1e-15 && (k[199] - 4.0).abs() < 1e-13);
        assert!(((k[1] / k[0]) - (k[199] / k[198])).abs() < 1e-12);
        let g = make_family(FamilyKind::PowerXk, [0.0, 1.0], [-1.0 / 3.0, 0.5]).unwrap();
        let k = k_grid(&g, g.k_interval, 5);
        assert!((k[1] - k[0] - (k[4] - k[3])).abs() < 1e-15);
    }

    #[test]
    fn mismatched_interval_is_refused() {
        let rule = gauss(3);
        let g = make_family(FamilyKind::Monomial, [0.0, 1.0], [0.0, 5.0]).unwrap();
        assert!(error_curve(&rule, &g, &WeightSpec::constant(1.0), None, 10).is_err());
    }

    #[test]
    fn exactness_examples() {
        let rule = gauss(5);
        let u = WeightSpec::constant(1.0);
        assert_eq!(exactness_sweep_default(&rule, &[], &u).unwrap().max_abs_err, 0.0);
        let r = exactness_sweep_default(&rule, &monomials(9), &u).unwrap();
        assert!(r.max_abs_err <= 1e-12);
        let r = exactness_sweep_default(&rule, &monomials(10), &u).unwrap();
        assert_eq!(r.worst_function.as_deref(), Some("x^10"));
    }

    #[test]
    fn vanishing_signal_gives_absolute_error() {
        let rule = gauss(3);
        let g = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, 5.0]).unwrap();
        let c = error_curve(&rule, &g, &WeightSpec::constant(1.0), Some([3.0, 3.0]), 1).unwrap();
        assert_eq!((c.k_grid.len(), c.flags[0]), (1, ErrorFlag::Absolute));
        assert!(c.relative_error[0] < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let rule = gauss(2);
        let g = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, 3.0]).unwrap();
        let c = error_curve(&rule, &g, &WeightSpec::constant(1.0), None, 0).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,rel_err,flag");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with(",rel"));
    }

    #[test]
    fn folded_exponential_curve() {
        let g = make_family(FamilyKind::ExpKx, [-3.0, 3.0], [1.0 / 16.0, 4.0]).unwrap();
        let u = WeightSpec::constant(1.0);
        let d = design_folded(&g, &u, 1e-12, 20, 1e-13, &Thresholds::default()).unwrap();
        assert!(d.rule.accepted());
        let c = error_curve(&d.rule, &g, &u, None, DEFAULT_POINTS).unwrap();
        assert_eq!(c.reference, Reference::ClosedForm);
        assert!(c.failed.is_empty());
        // fixed by the first validated run
        assert!(c.max_error() <= 1e-9, "{}", c.max_error());
    }

    #[test]
    fn curve_is_bounded_by_the_gram_residual() {
        for n in [4, 8] {
            let rule = gauss(n);
            let g = make_family(FamilyKind::Monomial, [-1.0, 1.0], [0.0, (2 * n - 1) as f64]).unwrap();
            let c = error_curve(&rule, &g, &WeightSpec::constant(1.0), None, 0).unwrap();
            let bound = 1e2 * rule.diagnostics.gram_residual.max(f64::EPSILON);
            let rel: Vec<f64> = c.relative_error.iter().zip(&c.flags).filter(|(_, f)| **f == ErrorFlag::Relative).map(|(e, _)| *e).collect();
            assert!(rel.iter().all(|&e| e <= bound), "n={n} {rel:?} {bound}");
        }
    }
}
