//! Parametric function families `G(k, x)`, their minimal functions and
//! factor spaces.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gramian::WeightSpec;
use crate::numerics::{integrate_1d_pieces, svd, DenseMatrix};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// `x^k` for integer `k`: the polynomials.
    Monomial,
    /// Chebyshev polynomials `T_k` mapped onto the x-interval. Same span as
    /// [`FamilyKind::Monomial`], far better conditioned.
    Chebyshev,
    /// `x^k` for real `k`, `x >= 0`.
    PowerXk,
    /// `exp(i k x)`.
    ExpIkx,
    /// `k^x`, `k > 0`.
    ExpKx,
    /// `cos(k x)` for integer `k >= 0` and `sin(|k| x)` for `k < 0`.
    Trig,
    /// `J_k(s x)` for integer `k`, with argument scale `s`.
    BesselJ,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Monomial => "monomial",
            FamilyKind::Chebyshev => "chebyshev",
            FamilyKind::PowerXk => "power_xk",
            FamilyKind::ExpIkx => "exp_ikx",
            FamilyKind::ExpKx => "exp_kx",
            FamilyKind::Trig => "trig",
            FamilyKind::BesselJ => "bessel_j",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "monomial" => FamilyKind::Monomial,
            "chebyshev" => FamilyKind::Chebyshev,
            "power_xk" => FamilyKind::PowerXk,
            "exp_ikx" => FamilyKind::ExpIkx,
            "exp_kx" => FamilyKind::ExpKx,
            "trig" => FamilyKind::Trig,
            "bessel_j" => FamilyKind::BesselJ,
            other => return Err(Error::Domain(format!("unknown family kind '{other}'"))),
        })
    }

    /// Families whose parameter only takes integer values.
    pub fn integer_k(self) -> bool {
        matches!(
            self,
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Trig | FamilyKind::BesselJ
        )
    }
}

/// How a moment signal `s(kappa)` is packed into a Gramian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldKind {
    /// `B[i][j] = s(k_i - k_j)`
    Toeplitz,
    /// `B[i][j] = s(k_i + k_j)`
    Hankel,
    /// `B[i][j] = s(k_i k_j)`
    Hyperbolic,
    None,
}

impl FoldKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "toeplitz" => FoldKind::Toeplitz,
            "hankel" => FoldKind::Hankel,
            "hyperbolic" => FoldKind::Hyperbolic,
            "none" => FoldKind::None,
            other => return Err(Error::Domain(format!("unknown fold kind '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FoldKind::Toeplitz => "toeplitz",
            FoldKind::Hankel => "hankel",
            FoldKind::Hyperbolic => "hyperbolic",
            FoldKind::None => "none",
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn is_unit(s: &f64) -> bool {
    *s == 1.0
}

/// A family `G(k, x)`, `x in [a, b]`, `k in [alpha, beta]`.
///
/// Serializes as `{kind, x_interval, k_interval, grid_step?}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionFamily {
    pub kind: FamilyKind,
    pub x_interval: [f64; 2],
    pub k_interval: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default = "default_scale", skip_serializing_if = "is_unit")]
    pub arg_scale: f64,
}

pub fn make_family(kind: FamilyKind, x_interval: [f64; 2], k_interval: [f64; 2]) -> Result<FunctionFamily> {
    let fam = FunctionFamily {
        kind,
        x_interval,
        k_interval,
        grid_step: None,
        arg_scale: 1.0,
    };
    fam.validate()?;
    Ok(fam)
}

impl FunctionFamily {
    pub fn with_grid_step(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("grid step must be positive, got {h}")));
        }
        self.grid_step = Some(h);
        Ok(self)
    }

    pub fn fold_kind(&self) -> FoldKind {
        match self.kind {
            FamilyKind::ExpIkx => FoldKind::Toeplitz,
            FamilyKind::PowerXk | FamilyKind::Monomial => FoldKind::Hankel,
            FamilyKind::ExpKx => FoldKind::Hyperbolic,
            FamilyKind::Chebyshev | FamilyKind::Trig | FamilyKind::BesselJ => FoldKind::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.x_interval;
        let [alpha, beta] = self.k_interval;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!("x-interval [{a}, {b}] must satisfy a < b")));
        }
        // integer families may be a single member (k = 0)
        let k_ok = if self.kind.integer_k() { alpha <= beta } else { alpha < beta };
        if !k_ok || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Domain(format!("k-interval [{alpha}, {beta}] must satisfy alpha < beta")));
        }
        match self.kind {
            FamilyKind::PowerXk if a < 0.0 => Err(Error::Domain(format!(
                "power_xk needs x-interval inside [0, inf), got [{a}, {b}]"
            ))),
            FamilyKind::ExpKx if alpha <= 0.0 => Err(Error::Domain(format!(
                "exp_kx needs alpha > 0, got {alpha}"
            ))),
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::BesselJ if alpha < 0.0 => {
                Err(Error::Domain(format!("{} needs k >= 0", self.kind.name())))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, k: f64, x: f64) -> C64 {
        let re = |v: f64| C64::new(v, 0.0);
        match self.kind {
            FamilyKind::Monomial => re(x.powi(k.round() as i32)),
            FamilyKind::Chebyshev => {
                let [a, b] = self.x_interval;
                re(chebyshev_t(k.round() as usize, (2.0 * x - a - b) / (b - a)))
            }
            FamilyKind::PowerXk => re(x.powf(k)),
            FamilyKind::ExpIkx => C64::new(0.0, k * x).exp(),
            FamilyKind::ExpKx => re((x * k.ln()).exp()),
            FamilyKind::Trig => {
                let j = k.round();
                if j >= 0.0 {
                    re((j * x).cos())
                } else {
                    re((-j * x).sin())
                }
            }
            FamilyKind::BesselJ => re(libm::jn(k.round() as i32, self.arg_scale * x)),
        }
    }

    /// Analytic `dG/dk` where the family is differentiable in `k`.
    pub fn dk(&self, k: f64, x: f64) -> Option<C64> {
        match self.kind {
            FamilyKind::PowerXk => Some(self.eval(k, x) * x.ln()),
            FamilyKind::ExpIkx => Some(self.eval(k, x) * C64::new(0.0, x)),
            FamilyKind::ExpKx => Some(self.eval(k, x) * (x / k)),
            _ => None,
        }
    }

    /// `n` parameter values starting at `alpha`: consecutive integers for
    /// integer families, steps of `grid_step` when set (ratios `exp(grid_step)`
    /// for `exp_kx`), otherwise a uniform grid spanning the k-interval.
    pub fn kgrid(&self, n: usize) -> Vec<f64> {
        let [alpha, beta] = self.k_interval;
        if self.kind.integer_k() {
            return (0..n).map(|j| alpha.round() + j as f64).collect();
        }
        if let Some(h) = self.grid_step {
            return (0..n)
                .map(|j| match self.kind {
                    FamilyKind::ExpKx => alpha * (j as f64 * h).exp(),
                    _ => alpha + j as f64 * h,
                })
                .collect();
        }
        if n == 1 {
            return vec![0.5 * (alpha + beta)];
        }
        let h = (beta - alpha) / (n - 1) as f64;
        (0..n).map(|j| alpha + j as f64 * h).collect()
    }

    /// Geometric grid of `n` values spanning the k-interval (`alpha > 0`).
    pub fn kgrid_geometric(&self, n: usize) -> Vec<f64> {
        let [alpha, beta] = self.k_interval;
        if n == 1 {
            return vec![(alpha * beta).sqrt()];
        }
        let step = (beta / alpha).ln() / (n - 1) as f64;
        (0..n).map(|j| alpha * (j as f64 * step).exp()).collect()
    }

    /// Number of integer members (integer families only).
    pub fn integer_count(&self) -> usize {
        let [alpha, beta] = self.k_interval;
        (beta.round() - alpha.round()) as usize + 1
    }
}

/// `T_n(t)` by the three-term recurrence.
pub fn chebyshev_t(n: usize, t: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => t,
        _ => {
            let (mut prev, mut cur) = (1.0, t);
            for _ in 1..n {
                let next = 2.0 * t * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// A finite set of functions on an interval: the rows of `T(n, x)`.
pub trait Basis: Sync {
    fn len(&self) -> usize;

    fn eval(&self, j: usize, x: f64) -> C64;

    fn interval(&self) -> [f64; 2];

    /// Parameter values labelling the rows.
    fn params(&self) -> Vec<f64> {
        (0..self.len()).map(|j| j as f64).collect()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The column `T(n, x)`.
    fn column(&self, x: f64) -> DVector<C64> {
        DVector::from_fn(self.len(), |j, _| self.eval(j, x))
    }

    /// `T(n, {x_j})`, one column per node.
    fn at_nodes(&self, nodes: &[f64]) -> DMatrix<C64> {
        DMatrix::from_fn(self.len(), nodes.len(), |i, j| self.eval(i, nodes[j]))
    }
}

/// A family sampled at a finite k-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFamily {
    pub family: FunctionFamily,
    pub kgrid: Vec<f64>,
}

impl SampledFamily {
    pub fn new(family: FunctionFamily, kgrid: Vec<f64>) -> Result<Self> {
        if kgrid.is_empty() {
            return Err(Error::Dimension("k-grid is empty".into()));
        }
        Ok(Self { family, kgrid })
    }

    /// The first `n` members on the family's default grid.
    pub fn first(family: FunctionFamily, n: usize) -> Result<Self> {
        Self::new(family, family.kgrid(n))
    }
}

impl Basis for SampledFamily {
    fn len(&self) -> usize {
        self.kgrid.len()
    }
    fn eval(&self, j: usize, x: f64) -> C64 {
        self.family.eval(self.kgrid[j], x)
    }
    fn interval(&self) -> [f64; 2] {
        self.family.x_interval
    }
    fn params(&self) -> Vec<f64> {
        self.kgrid.clone()
    }
}

/// `mu(x) T(n, x)`.
pub struct Multiplied<'a, B: Basis + ?Sized> {
    pub basis: &'a B,
    pub mu: &'a MinimalFunction,
}

impl<B: Basis + ?Sized> Basis for Multiplied<'_, B> {
    fn len(&self) -> usize {
        self.basis.len()
    }
    fn eval(&self, j: usize, x: f64) -> C64 {
        self.mu.mu(x) * self.basis.eval(j, x)
    }
    fn interval(&self) -> [f64; 2] {
        self.basis.interval()
    }
}

/// Rows of `first` followed by rows of `second`.
pub struct Stacked<'a> {
    pub first: &'a dyn Basis,
    pub second: &'a dyn Basis,
}

impl Basis for Stacked<'_> {
    fn len(&self) -> usize {
        self.first.len() + self.second.len()
    }
    fn eval(&self, j: usize, x: f64) -> C64 {
        let n = self.first.len();
        if j < n {
            self.first.eval(j, x)
        } else {
            self.second.eval(j - n, x)
        }
    }
    fn interval(&self) -> [f64; 2] {
        self.first.interval()
    }
}

/// The multiplier itself, up to the normalization recorded alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "step", rename_all = "snake_case")]
pub enum MuForm {
    /// `x`
    Identity,
    /// `log x`
    Log,
    /// `cos x`
    Cos,
    /// `x^h`
    Power(f64),
    /// `exp(i h x)`
    Phase(f64),
    /// `exp(h x)`
    Exp(f64),
    /// `1/x`
    Reciprocal,
}

/// The separable factor `p(k)` in `dG/dk = p(k) G(k, x) mu(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KFactor {
    One,
    /// `p(k) = i`
    Imaginary,
    /// `p(k) = 1/k`
    Reciprocal,
    /// `p(k) = -k`
    Negative,
}

impl KFactor {
    pub fn at(self, k: f64) -> C64 {
        match self {
            KFactor::One => C64::new(1.0, 0.0),
            KFactor::Imaginary => C64::new(0.0, 1.0),
            KFactor::Reciprocal => C64::new(1.0 / k, 0.0),
            KFactor::Negative => C64::new(-k, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variety {
    /// `mu` independent of `k`.
    V1,
    /// separable dependence on `k`.
    V2,
    /// not separable.
    V3,
}

/// Affine record relating the stored (normalized) multiplier to the raw one:
/// `raw = scale * mu + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub shift: f64,
}

impl Normalization {
    pub const NONE: Normalization = Normalization { scale: 1.0, shift: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalFunction {
    pub form: MuForm,
    pub p: KFactor,
    pub variety: Variety,
    pub normalization: Normalization,
    /// Branch on which `mu_inverse` operates.
    pub domain: [f64; 2],
    /// Whether eigenvalues of a quotient built with this multiplier may be
    /// mapped back to nodes.
    pub node_recovery: bool,
}

impl MinimalFunction {
    pub fn new(form: MuForm, domain: [f64; 2]) -> Self {
        Self {
            form,
            p: KFactor::One,
            variety: Variety::V1,
            normalization: Normalization::NONE,
            domain,
            node_recovery: true,
        }
    }

    pub fn identity(domain: [f64; 2]) -> Self {
        Self::new(MuForm::Identity, domain)
    }

    pub fn mu(&self, x: f64) -> C64 {
        match self.form {
            MuForm::Identity => C64::new(x, 0.0),
            MuForm::Log => C64::new(x.ln(), 0.0),
            MuForm::Cos => C64::new(x.cos(), 0.0),
            MuForm::Power(h) => C64::new(x.powf(h), 0.0),
            MuForm::Phase(h) => C64::new(0.0, h * x).exp(),
            MuForm::Exp(h) => C64::new((h * x).exp(), 0.0),
            MuForm::Reciprocal => C64::new(1.0 / x, 0.0),
        }
    }

    /// How far `lambda` is from the image of a real `x` under `mu`:
    /// `|Im lambda|` for real multipliers, `||lambda| - 1|` for phases.
    pub fn realness_defect(&self, lambda: C64) -> f64 {
        match self.form {
            MuForm::Phase(_) => (lambda.norm() - 1.0).abs(),
            _ => lambda.im.abs(),
        }
    }

    /// Preimage of `lambda` on the stored branch, ignoring the realness
    /// defect. `None` when `lambda` is outside the image.
    pub fn mu_inverse(&self, lambda: C64) -> Option<f64> {
        let [a, b] = self.domain;
        let x = match self.form {
            MuForm::Identity => lambda.re,
            MuForm::Log => lambda.re.exp(),
            MuForm::Power(h) => {
                if lambda.re <= 0.0 {
                    return None;
                }
                lambda.re.powf(1.0 / h)
            }
            MuForm::Phase(h) => {
                let period = 2.0 * PI / h;
                let raw = lambda.arg() / h;
                let shifted = a + (raw - a).rem_euclid(period);
                // values just below `a` wrap to the far end of the period
                let alt = shifted - period;
                if (alt - a).abs() < (shifted - b).abs() && (shifted - b) > 0.0 {
                    alt
                } else {
                    shifted
                }
            }
            MuForm::Exp(h) => {
                if lambda.re <= 0.0 {
                    return None;
                }
                lambda.re.ln() / h
            }
            MuForm::Cos => {
                let j = (a / PI).floor();
                let sign = if (j as i64) % 2 == 0 { 1.0 } else { -1.0 };
                let c = sign * lambda.re;
                if c.abs() > 1.0 + 1e-12 {
                    return None;
                }
                j * PI + c.clamp(-1.0, 1.0).acos()
            }
            MuForm::Reciprocal => {
                if lambda.re == 0.0 {
                    return None;
                }
                1.0 / lambda.re
            }
        };
        x.is_finite().then_some(x)
    }

    /// True when `mu` is the log-derivative `d/dk log G` up to `p(k)`.
    pub fn is_log_derivative(&self, family: &FunctionFamily) -> bool {
        matches!(
            (family.kind, self.form),
            (FamilyKind::PowerXk, MuForm::Log)
                | (FamilyKind::ExpIkx, MuForm::Identity)
                | (FamilyKind::ExpKx, MuForm::Identity)
        )
    }

    /// Rejects multipliers that are not injective on the branch.
    pub fn check_invertible(&self) -> Result<()> {
        let [a, b] = self.domain;
        let fail = |reason: &str| {
            Err(Error::NotInvertible {
                a,
                b,
                reason: reason.to_string(),
            })
        };
        if !self.node_recovery {
            return fail("multiplier is registered for Gramian construction only");
        }
        let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
        match self.form {
            MuForm::Identity => Ok(()),
            MuForm::Log if a < 0.0 => fail("log x needs x >= 0"),
            MuForm::Log => Ok(()),
            MuForm::Power(h) if h == 0.0 || a < 0.0 => fail("x^h needs h != 0 and x >= 0"),
            MuForm::Power(_) => Ok(()),
            MuForm::Reciprocal if a < 0.0 && b > 0.0 => fail("1/x is singular inside the interval"),
            MuForm::Reciprocal => Ok(()),
            MuForm::Phase(h) if h * (b - a) > 2.0 * PI + slack => {
                fail("exp(ihx) wraps around on an interval longer than 2 pi / h")
            }
            MuForm::Phase(_) => Ok(()),
            MuForm::Exp(h) if h == 0.0 => fail("exp(hx) needs h != 0"),
            MuForm::Exp(_) => Ok(()),
            MuForm::Cos => {
                let j = (a / PI).floor();
                if b > (j + 1.0) * PI + slack {
                    fail("cos x is not monotone on the interval")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// The registered minimal function of a family.
///
/// With `grid_step` set, the finite-difference forms are used (`x^h` for
/// powers, `exp(ihx)` for exponentials).
pub fn minimal_fn(family: &FunctionFamily) -> MinimalFunction {
    let dom = family.x_interval;
    let base = MinimalFunction::new(MuForm::Identity, dom);
    match (family.kind, family.grid_step) {
        // (x^{k+1} - x^k) / x^k = x - 1, normalized to x
        (FamilyKind::Monomial, _) => MinimalFunction {
            normalization: Normalization { scale: 1.0, shift: -1.0 },
            ..base
        },
        (FamilyKind::Chebyshev, _) => base,
        (FamilyKind::PowerXk, None) => MinimalFunction { form: MuForm::Log, ..base },
        // (x^h - 1) / h -> log x as h -> 0
        (FamilyKind::PowerXk, Some(h)) => MinimalFunction {
            form: MuForm::Power(h),
            normalization: Normalization {
                scale: 1.0 / h,
                shift: -1.0 / h,
            },
            ..base
        },
        (FamilyKind::ExpIkx, None) => MinimalFunction {
            p: KFactor::Imaginary,
            ..base
        },
        (FamilyKind::ExpIkx, Some(h)) => MinimalFunction {
            form: MuForm::Phase(h),
            ..base
        },
        // geometric grid with ratio exp(h): (r k)^x = exp(h x) k^x
        (FamilyKind::ExpKx, Some(h)) => MinimalFunction {
            form: MuForm::Exp(h),
            ..base
        },
        (FamilyKind::ExpKx, None) => MinimalFunction {
            p: KFactor::Reciprocal,
            variety: Variety::V2,
            ..base
        },
        (FamilyKind::Trig, _) => MinimalFunction {
            form: MuForm::Cos,
            variety: Variety::V3,
            ..base
        },
        // three-term recurrence multiplier -n/x, normalized to 1/x
        (FamilyKind::BesselJ, _) => MinimalFunction {
            form: MuForm::Reciprocal,
            p: KFactor::Negative,
            variety: Variety::V2,
            node_recovery: false,
            ..base
        },
    }
}

/// The factor space `T` whose pairwise products span `G`.
pub fn factor_space(family: &FunctionFamily) -> Result<FunctionFamily> {
    let [alpha, beta] = family.k_interval;
    let mut t = *family;
    t.grid_step = None;
    match family.kind {
        FamilyKind::PowerXk | FamilyKind::ExpIkx => t.k_interval = [alpha / 2.0, beta / 2.0],
        FamilyKind::ExpKx => t.k_interval = [alpha.sqrt(), beta.sqrt()],
        FamilyKind::Monomial | FamilyKind::Chebyshev => {
            // degree < 2n  ->  degree < n
            let dim = family.integer_count();
            t.k_interval = [0.0, (dim / 2).max(1) as f64 - 1.0];
        }
        FamilyKind::Trig => {
            // G_{2m} -> G_m
            let half = |e: f64| ((e.abs().round() as usize + 1) / 2).max(1) as f64 - 1.0;
            let lo = if alpha < 0.0 { -half(alpha) } else { 0.0 };
            t.k_interval = [lo, half(beta)];
        }
        FamilyKind::BesselJ => {
            return Err(Error::Domain(
                "bessel_j only has an approximate factor space; use bessel_factor_space with a padding".into(),
            ))
        }
    }
    t.validate()?;
    Ok(t)
}

/// Approximate factor space of `span{J_m(x), 0 <= m <= 2(b + delta)}`:
/// `span{J_s(x/2), 0 <= s <= b + delta}`.
pub fn bessel_factor_space(family: &FunctionFamily, delta: f64) -> Result<FunctionFamily> {
    if family.kind != FamilyKind::BesselJ {
        return Err(Error::Domain("bessel_factor_space needs a bessel_j family".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("padding must be nonnegative, got {delta}")));
    }
    let b = family.x_interval[1];
    Ok(FunctionFamily {
        kind: FamilyKind::BesselJ,
        x_interval: family.x_interval,
        k_interval: [0.0, (b + delta).floor()],
        grid_step: None,
        arg_scale: family.arg_scale / 2.0,
    })
}

/// `|J_m(x) - S|` where `S` is the half-argument product sum of Neumann's
/// addition formula with every Bessel index kept at most `x + delta`.
pub fn neumann_residual(m: u32, x: f64, delta: f64) -> f64 {
    let half = 0.5 * x;
    let j = |n: i64| libm::jn(n as i32, half);
    let m = m as i64;
    let mut sum: f64 = (0..=m).map(|k| j(k) * j(m - k)).sum();
    let limit = x + delta;
    let mut k = 1i64;
    while ((m + k) as f64) <= limit {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += 2.0 * sign * j(k) * j(m + k);
        k += 1;
    }
    (libm::jn(m as i32, x) - sum).abs()
}

/// Rows `sqrt(w_r u(x_r)) f_j(x_r)` on a rule resolving every `f_j u`: the
/// composite Kronrod rule the adaptive oracle settles on for the normalized
/// sum of `|f_j|^2 u`, or the atoms themselves. `M* M` is the Gramian of the
/// functions; `u` must be nonnegative.
pub fn weighted_samples(f: &dyn Basis, u: &WeightSpec) -> Result<DMatrix<C64>> {
    let n = f.len();
    let [a, b] = f.interval();
    let (nodes, weights): (Vec<f64>, Vec<f64>) = match u.atoms_list() {
        Some(atoms) => atoms.iter().copied().unzip(),
        None => {
            let breaks = u.breakpoints();
            let tq = crate::numerics::DEFAULT_TOL_1D;
            let norms: Vec<f64> = (0..n)
                .map(|j| {
                    integrate_1d_pieces(|x| C64::new(f.eval(j, x).norm_sqr() * u.eval(x), 0.0), a, b, &breaks, tq)
                        .map(|v| v.re.max(f64::MIN_POSITIVE))
                })
                .collect::<Result<_>>()?;
            let density = |x: f64| {
                let s: f64 = (0..n).map(|j| f.eval(j, x).norm_sqr() / norms[j]).sum();
                C64::new(s * u.eval(x).abs(), 0.0)
            };
            let (x, w) = crate::numerics::composite_rule(density, a, b, &breaks, tq, 4)?;
            let w = x.iter().zip(&w).map(|(&x, &w)| w * u.eval(x)).collect();
            (x, w)
        }
    };
    if nodes.len() < n {
        return Err(Error::Dimension(format!("{} sample points cannot resolve {n} functions", nodes.len())));
    }
    let mut m = DMatrix::<C64>::zeros(nodes.len(), n);
    for (r, (&x, &w)) in nodes.iter().zip(&weights).enumerate() {
        if w < 0.0 {
            return Err(Error::Domain("weighted samples need a nonnegative weight".into()));
        }
        let s = w.sqrt();
        for j in 0..n {
            m[(r, j)] = f.eval(j, x) * s;
        }
    }
    Ok(m)
}

/// Residual dimension of `mu T` outside `span T`: the numerical rank of the
/// Gramian of `(I - P_n)[mu T_j]` at relative threshold `tol`. Residuals at
/// rounding level (`1e-13` of the size of `mu T`) count as zero.
///
/// The Gramian is read off a QR factorization of the sampled functions
/// ([`weighted_samples`]) rather than formed as the Schur complement of the
/// full Gramian, which squares the condition number of `B`.
pub fn minimality_rank(t: &dyn Basis, mu: &MinimalFunction, u: &WeightSpec, tol: f64) -> Result<usize> {
    let n = t.len();
    if n == 0 {
        return Err(Error::Dimension("minimality_rank needs n >= 1".into()));
    }
    let mt = Multiplied { basis: t, mu };
    let stacked = Stacked { first: t, second: &mt };
    let m = weighted_samples(&stacked, u)?;
    if m.nrows() < 2 * n {
        return Err(Error::Dimension(format!("{} sample points cannot resolve {} functions", m.nrows(), 2 * n)));
    }
    let r = m.clone().qr().r();
    let r11 = DenseMatrix::new(r.view((0, 0), (n, n)).into_owned())?;
    let s11 = svd(&r11)?.singular_values;
    // sigma(R11)^2 are the eigenvalues of B
    if s11[n - 1] <= 1e-7 * s11[0] {
        return Err(Error::SingularAtN { n });
    }
    let r22 = DenseMatrix::new(r.view((n, n), (n, n)).into_owned())?;
    let mu_block = DenseMatrix::new(m.columns(n, n).into_owned())?;
    let scale = svd(&mu_block)?.singular_values[0];
    let s22 = svd(&r22)?.singular_values;
    let top = s22[0];
    if top <= 1e-13 * scale {
        return Ok(0);
    }
    Ok(s22.iter().filter(|&&s| s > 1e-13 * scale && s * s > tol * top * top).count())
}

/// Evaluates `s(k) = int G(k, x) u(x) dx` and `s'(k) = ds/dk`, by closed form
/// where one is registered and by the integration oracle otherwise.
#[derive(Debug, Clone)]
pub struct SignalGenerator {
    family: FunctionFamily,
    weight: WeightSpec,
    closed: Option<(ClosedForm, f64)>,
    tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClosedForm {
    ExpKx,
    PowerXk,
}

pub fn closed_form_signal(family: &FunctionFamily, u: &WeightSpec) -> SignalGenerator {
    let closed = u.constant_value().and_then(|c| match family.kind {
        FamilyKind::ExpKx => Some((ClosedForm::ExpKx, c)),
        FamilyKind::PowerXk => Some((ClosedForm::PowerXk, c)),
        _ => None,
    });
    SignalGenerator {
        family: *family,
        weight: u.clone(),
        closed,
        tol: crate::numerics::DEFAULT_TOL_1D,
    }
}

impl SignalGenerator {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed.is_some()
    }

    /// `(s(k), s'(k))`; `s'` is `None` when the family is not differentiable in `k`.
    pub fn eval(&self, k: f64) -> Result<(C64, Option<C64>)> {
        let [a, b] = self.family.x_interval;
        match self.closed {
            Some((ClosedForm::ExpKx, c)) => {
                let (s, ks) = exp_kx_moments(k, a, b);
                Ok((C64::new(c * s, 0.0), Some(C64::new(c * ks / k, 0.0))))
            }
            Some((ClosedForm::PowerXk, c)) => {
                let (s, ds) = power_moments(k, a, b);
                Ok((C64::new(c * s, 0.0), Some(C64::new(c * ds, 0.0))))
            }
            None => self.oracle(k),
        }
    }

    pub fn oracle(&self, k: f64) -> Result<(C64, Option<C64>)> {
        let [a, b] = self.family.x_interval;
        let fam = self.family;
        let u = &self.weight;
        let breaks = u.breakpoints();
        let s = match u.atoms_list() {
            Some(atoms) => atoms.iter().map(|&(x, w)| fam.eval(k, x) * w).sum(),
            None => integrate_1d_pieces(|x| fam.eval(k, x) * u.eval(x), a, b, &breaks, self.tol)?,
        };
        let ds = if fam.dk(k, 0.5 * (a + b)).is_some() {
            Some(match u.atoms_list() {
                Some(atoms) => atoms.iter().map(|&(x, w)| fam.dk(k, x).unwrap() * w).sum(),
                None => integrate_1d_pieces(|x| fam.dk(k, x).unwrap() * u.eval(x), a, b, &breaks, self.tol)?,
            })
        } else {
            None
        };
        Ok((s, ds))
    }
}

/// `int_a^b k^x dx` and `int_a^b x k^x dx` (the latter is `k s'(k)`).
fn exp_kx_moments(k: f64, a: f64, b: f64) -> (f64, f64) {
    let t = k.ln();
    let reach = a.abs().max(b.abs());
    if t.abs() * reach < 1.0 {
        // entire-function series in t = ln k, exact through k = 1
        let (mut s, mut ks) = (0.0, 0.0);
        let mut tm_over_fact = 1.0;
        for m in 0..40 {
            let mf = m as f64;
            s += tm_over_fact * (b.powi(m + 1) - a.powi(m + 1)) / (mf + 1.0);
            ks += tm_over_fact * (b.powi(m + 2) - a.powi(m + 2)) / (mf + 2.0);
            tm_over_fact *= t / (mf + 1.0);
        }
        (s, ks)
    } else {
        let kb = (b * t).exp();
        let ka = (a * t).exp();
        let s = (kb - ka) / t;
        let ks = (b * kb - a * ka) / t - s / t;
        (s, ks)
    }
}

/// `int_a^b x^k dx` and its k-derivative, `0 <= a < b`, `k > -1` when `a = 0`.
fn power_moments(k: f64, a: f64, b: f64) -> (f64, f64) {
    let e = k + 1.0;
    let term = |c: f64| -> (f64, f64) {
        if c == 0.0 {
            return (0.0, 0.0);
        }
        let ce = c.powf(e);
        (ce / e, ce * (c.ln() / e - 1.0 / (e * e)))
    };
    let (sb, db) = term(b);
    let (sa, da) = term(a);
    (sb - sa, db - da)
}
