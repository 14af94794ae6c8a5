//! Moment signals `s(kappa)` and their folding into structured Gramians.

use std::io::{Read, Write};

use rayon::prelude::*;

use super::{GramianPair, Provenance};
use crate::families::{FoldKind, KFactor, MinimalFunction, MuForm, SignalGenerator, Variety};
use crate::numerics::DenseMatrix;
use crate::{Error, Result, C64};

/// Samples of `s(kappa)` and optionally `s'(kappa)` on an increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub kappa: Vec<f64>,
    pub s: Vec<C64>,
    pub s_prime: Option<Vec<C64>>,
}

impl SignalTrace {
    pub fn new(kappa: Vec<f64>, s: Vec<C64>, s_prime: Option<Vec<C64>>) -> Result<Self> {
        if kappa.is_empty() || kappa.len() != s.len() || s_prime.as_ref().is_some_and(|d| d.len() != s.len()) {
            return Err(Error::Dimension("signal grid and samples must have equal nonzero length".into()));
        }
        if kappa.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonUniformGrid("kappa grid must be strictly increasing"));
        }
        let finite = |v: &C64| v.re.is_finite() && v.im.is_finite();
        if !s.iter().all(finite) || !s_prime.iter().flatten().all(finite) {
            return Err(Error::Domain("signal samples must be finite".into()));
        }
        Ok(Self { kappa, s, s_prime })
    }

    /// Evaluates a generator on `kappa`; `s'` is kept only if available everywhere.
    pub fn from_generator(gen: &SignalGenerator, kappa: Vec<f64>) -> Result<Self> {
        let vals: Vec<(C64, Option<C64>)> = kappa.par_iter().map(|&k| gen.eval(k)).collect::<Result<_>>()?;
        let s = vals.iter().map(|v| v.0).collect();
        let sp: Option<Vec<C64>> = vals.iter().map(|v| v.1).collect();
        Self::new(kappa, s, sp)
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn uniform_step(&self) -> Result<f64> {
        let h = uniform_step(&self.kappa).ok_or(Error::NonUniformGrid("kappa grid is not uniformly spaced"))?;
        Ok(h)
    }

    /// Ratio of a log-uniform grid.
    pub fn geometric_ratio(&self) -> Result<f64> {
        if self.kappa[0] <= 0.0 {
            return Err(Error::NonUniformGrid("hyperbolic folding needs kappa > 0"));
        }
        let logs: Vec<f64> = self.kappa.iter().map(|k| k.ln()).collect();
        uniform_step(&logs)
            .map(f64::exp)
            .ok_or(Error::NonUniformGrid("kappa grid is not log-uniformly spaced"))
    }

    /// Fills `s'` by central differences: fourth order inside, second order
    /// at the two points next to each end and one-sided at the ends. On a
    /// log-uniform grid (`log_grid`) the differences are taken in `ln kappa`.
    pub fn with_fd_derivative(mut self, log_grid: bool) -> Result<Self> {
        let n = self.len();
        if n < 3 {
            return Err(Error::GridTooShort { len: n, required: 3 });
        }
        let h = if log_grid {
            self.geometric_ratio()?.ln()
        } else {
            self.uniform_step()?
        };
        log::warn!("s' reconstructed by finite differences; rule accuracy limited to O(h^4) with h = {h:e}");
        let f = &self.s;
        let d: Vec<C64> = (0..n)
            .map(|i| {
                let dt = if i == 0 {
                    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
                } else if i == 1 || i == n - 2 {
                    (f[i + 1] - f[i - 1]) / (2.0 * h)
                } else {
                    (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h)
                };
                if log_grid {
                    dt / self.kappa[i]
                } else {
                    dt
                }
            })
            .collect();
        self.s_prime = Some(d);
        Ok(self)
    }

    /// Reads `kappa,s_re,s_im[,sp_re,sp_im]`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Format(format!("line 1: {e}")))?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_sp = match names.as_slice() {
            ["kappa", "s_re", "s_im"] => false,
            ["kappa", "s_re", "s_im", "sp_re", "sp_im"] => true,
            _ => {
                return Err(Error::Format(format!(
                    "line 1: expected header kappa,s_re,s_im[,sp_re,sp_im], got '{}'",
                    names.join(",")
                )))
            }
        };
        let (mut kappa, mut s, mut sp) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
            if rec.len() != names.len() {
                return Err(Error::Format(format!("line {line}: expected {} fields, got {}", names.len(), rec.len())));
            }
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {line}: malformed number '{}'", &rec[j])))
            };
            kappa.push(num(0)?);
            s.push(C64::new(num(1)?, num(2)?));
            if with_sp {
                sp.push(C64::new(num(3)?, num(4)?));
            }
        }
        Self::new(kappa, s, with_sp.then_some(sp))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.s_prime.is_some() {
            writeln!(w, "kappa,s_re,s_im,sp_re,sp_im")?;
        } else {
            writeln!(w, "kappa,s_re,s_im")?;
        }
        for i in 0..self.len() {
            write!(w, "{:.16e},{:.16e},{:.16e}", self.kappa[i], self.s[i].re, self.s[i].im)?;
            if let Some(sp) = &self.s_prime {
                write!(w, ",{:.16e},{:.16e}", sp[i].re, sp[i].im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn uniform_step(grid: &[f64]) -> Option<f64> {
    if grid.len() < 2 {
        return Some(1.0);
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let scale = grid.iter().fold(h.abs(), |m, v| m.max(v.abs()));
    let ok = (0..grid.len()).all(|i| (grid[i] - (grid[0] + i as f64 * h)).abs() <= 1e-9 * scale);
    ok.then_some(h)
}

/// Packs a trace into an `n x n` Gramian pair. `A` is produced when `s'` is
/// present: `s'/i` (Toeplitz), `s'` (Hankel), `kappa s'` (hyperbolic).
pub fn fold_signal(trace: &SignalTrace, kind: FoldKind, n: usize) -> Result<GramianPair> {
    let required = 2 * n.max(1) - 1;
    if n == 0 || trace.len() < required {
        return Err(Error::GridTooShort {
            len: trace.len(),
            required,
        });
    }
    let unbounded = [f64::NEG_INFINITY, f64::INFINITY];
    let sp = trace.s_prime.as_ref();
    let build = |idx: &dyn Fn(usize, usize) -> usize, factor: &dyn Fn(usize) -> C64| -> Result<(DenseMatrix, Option<DenseMatrix>)> {
        let b = DenseMatrix::from_fn(n, n, |i, j| trace.s[idx(i, j)])?;
        let a = match sp {
            Some(d) => Some(DenseMatrix::from_fn(n, n, |i, j| {
                let l = idx(i, j);
                d[l] * factor(l)
            })?),
            None => None,
        };
        Ok((b, a))
    };
    match kind {
        FoldKind::Toeplitz => {
            let h = trace.uniform_step()?;
            let c = trace
                .kappa
                .iter()
                .position(|k| k.abs() <= 1e-9 * h.abs())
                .ok_or(Error::NonUniformGrid("toeplitz folding needs kappa = 0 on the grid"))?;
            if c < n - 1 || trace.len() - 1 - c < n - 1 {
                return Err(Error::GridTooShort {
                    len: trace.len(),
                    required,
                });
            }
            let (b, a) = build(&|i, j| c + i - j, &|_| C64::new(0.0, -1.0))?;
            let grid: Vec<f64> = (0..n).map(|i| (i as f64 - 0.5 * (n - 1) as f64) * h).collect();
            let mu = MinimalFunction {
                p: KFactor::Imaginary,
                ..MinimalFunction::new(MuForm::Identity, unbounded)
            };
            Ok(GramianPair {
                a,
                b,
                row_kgrid: grid.clone(),
                col_kgrid: grid,
                mu_used: Some(mu),
                provenance: Provenance::Folded(kind),
            })
        }
        FoldKind::Hankel => {
            let h = trace.uniform_step()?;
            let grid: Vec<f64> = (0..n).map(|i| 0.5 * trace.kappa[0] + i as f64 * h).collect();
            let (b, a) = build(&|i, j| i + j, &|_| C64::new(1.0, 0.0))?;
            Ok(GramianPair {
                a,
                b,
                row_kgrid: grid.clone(),
                col_kgrid: grid,
                mu_used: Some(MinimalFunction::new(MuForm::Log, [0.0, f64::INFINITY])),
                provenance: Provenance::Folded(kind),
            })
        }
        FoldKind::Hyperbolic => {
            let r = trace.geometric_ratio()?;
            let root = trace.kappa[0].sqrt();
            let grid: Vec<f64> = (0..n).map(|i| root * r.powi(i as i32)).collect();
            let (b, a) = build(&|i, j| i + j, &|l| C64::new(trace.kappa[l], 0.0))?;
            // kappa s'(kappa) = int x kappa^x u: the p(k) = 1/k factor cancels
            let mu = MinimalFunction {
                variety: Variety::V2,
                ..MinimalFunction::new(MuForm::Identity, unbounded)
            };
            Ok(GramianPair {
                a,
                b,
                row_kgrid: grid.clone(),
                col_kgrid: grid,
                mu_used: Some(mu),
                provenance: Provenance::Folded(kind),
            })
        }
        FoldKind::None => Err(Error::Domain("family has no folding kernel".into())),
    }
}
