use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result, C64};

pub const DEFAULT_TOL_1D: f64 = 1e-13;
pub const DEFAULT_TOL_2D: f64 = 1e-12;

const MAX_DEPTH: u32 = 120;
const MAX_SUBDIVISIONS: usize = 20_000;

// 15-point Kronrod abscissae (positive half, descending) and weights; the
// embedded 7-point Gauss rule uses the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Segment {
    a: f64,
    b: f64,
    depth: u32,
    value: C64,
    error: f64,
    floor: f64,
}

impl Segment {
    fn splittable(&self) -> bool {
        self.depth < MAX_DEPTH && self.error > self.floor
    }
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, depth: u32) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut resabs = fc.norm() * WGK[7];
    let mut fv = [(C64::new(0.0, 0.0), C64::new(0.0, 0.0)); 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = (f1, f2);
        kron += (f1 + f2) * WGK[j];
        resabs += (f1.norm() + f2.norm()) * WGK[j];
        if j % 2 == 1 {
            gauss += (f1 + f2) * WG[j / 2];
        }
    }
    let mean = kron * 0.5;
    let mut resasc = WGK[7] * (fc - mean).norm();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[j].0 - mean).norm() + (fv[j].1 - mean).norm());
    }
    let scale = half.abs();
    let value = kron * half;
    let resabs = resabs * scale;
    let resasc = resasc * scale;
    let mut error = ((kron - gauss) * half).norm();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(floor);
    }
    if !value.re.is_finite() || !value.im.is_finite() {
        error = f64::INFINITY;
    }
    Segment {
        a,
        b,
        depth,
        value,
        error,
        floor,
    }
}

/// Globally adaptive 15/7 Gauss-Kronrod quadrature of `f` over `[a, b]`.
///
/// The worst segment is bisected until the summed error estimate is at most
/// `max(tol, tol * |result|)`. Nodes never touch the endpoints, so
/// integrable endpoint singularities are handled by repeated bisection.
pub fn integrate_1d<F>(f: F, a: f64, b: f64, tol: f64) -> Result<C64>
where
    F: Fn(f64) -> C64,
{
    Ok(adapt(&f, a, b, tol)?.iter().map(|s| s.value).sum())
}

fn adapt<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<Vec<Segment>>
where
    F: Fn(f64) -> C64,
{
    if !(a < b) {
        return Err(Error::Domain(format!("integration interval [{a}, {b}] is empty")));
    }
    let mut heap = BinaryHeap::new();
    let mut settled: Vec<Segment> = Vec::new();
    heap.push(kronrod15(f, a, b, 0));
    let mut subdivisions = 0usize;
    loop {
        let (total, err) = heap
            .iter()
            .chain(settled.iter())
            .fold((C64::new(0.0, 0.0), 0.0), |(v, e), s| (v + s.value, e + s.error));
        if err <= tol.max(tol * total.norm()) {
            settled.extend(heap);
            return Ok(settled);
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::Integration {
                estimate: err,
                subdivisions,
            });
        };
        if !worst.splittable() {
            settled.push(worst);
            continue;
        }
        if subdivisions >= MAX_SUBDIVISIONS {
            return Err(Error::Integration {
                estimate: err,
                subdivisions,
            });
        }
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(kronrod15(f, worst.a, mid, worst.depth + 1));
        heap.push(kronrod15(f, mid, worst.b, worst.depth + 1));
        subdivisions += 1;
    }
}

fn split_edges(a: f64, b: f64, breaks: &[f64]) -> Vec<f64> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    edges
}

/// Composite 15-point Kronrod rule on the partition the adaptive scheme
/// settles on for the (typically nonnegative) integrand `f`, with at least
/// `min_segments` pieces per subinterval. Nodes ascending.
pub fn composite_rule<F>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64, min_segments: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> C64,
{
    let mut parts: Vec<(f64, f64)> = Vec::new();
    for w in split_edges(a, b, breaks).windows(2) {
        let m = min_segments.max(1);
        for i in 0..m {
            let lo = w[0] + (w[1] - w[0]) * i as f64 / m as f64;
            let hi = if i + 1 == m { w[1] } else { w[0] + (w[1] - w[0]) * (i + 1) as f64 / m as f64 };
            parts.extend(adapt(&f, lo, hi, tol / m as f64)?.into_iter().map(|s| (s.a, s.b)));
        }
    }
    parts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut nodes = Vec::with_capacity(15 * parts.len());
    let mut weights = Vec::with_capacity(15 * parts.len());
    for (lo, hi) in parts {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        for j in 0..7 {
            nodes.push(c - h * XGK[j]);
            weights.push(h * WGK[j]);
        }
        nodes.push(c);
        weights.push(h * WGK[7]);
        for j in (0..7).rev() {
            nodes.push(c + h * XGK[j]);
            weights.push(h * WGK[j]);
        }
    }
    Ok((nodes, weights))
}

/// [`integrate_1d`] over `[a, b]` split at interior `breaks` (kinks of a
/// sampled weight, for instance). Each piece gets the full tolerance.
pub fn integrate_1d_pieces<F>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<C64>
where
    F: Fn(f64) -> C64,
{
    let mut total = C64::new(0.0, 0.0);
    for w in split_edges(a, b, breaks).windows(2) {
        total += integrate_1d(&f, w[0], w[1], tol)?;
    }
    Ok(total)
}

/// A triangle or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain2D {
    Triangle([[f64; 2]; 3]),
    Rectangle { x: [f64; 2], y: [f64; 2] },
}

impl Domain2D {
    pub fn unit_triangle() -> Self {
        Domain2D::Triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    }

    pub fn unit_square() -> Self {
        Domain2D::Rectangle {
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        }
    }

    pub fn triangle(vertices: [[f64; 2]; 3]) -> Result<Self> {
        let d = Domain2D::Triangle(vertices);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Domain2D::Triangle(_) => self.area() > 0.0,
            Domain2D::Rectangle { x, y } => x[1] > x[0] && y[1] > y[0],
        };
        if ok && self.area().is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("degenerate domain {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain2D::Triangle([p, q, r]) => {
                0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])).abs()
            }
            Domain2D::Rectangle { x, y } => (x[1] - x[0]) * (y[1] - y[0]),
        }
    }

    pub fn diameter(&self) -> f64 {
        let pts = self.vertices();
        let mut d = 0.0f64;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                d = d.max((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
            }
        }
        d
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match *self {
            Domain2D::Triangle(v) => v.to_vec(),
            Domain2D::Rectangle { x, y } => {
                vec![[x[0], y[0]], [x[1], y[0]], [x[1], y[1]], [x[0], y[1]]]
            }
        }
    }

    /// The closest point of the domain to `p`.
    pub fn nearest_point(&self, p: [f64; 2]) -> [f64; 2] {
        if self.contains(p, 0.0) {
            return p;
        }
        match *self {
            Domain2D::Rectangle { x, y } => [p[0].clamp(x[0], x[1]), p[1].clamp(y[0], y[1])],
            Domain2D::Triangle(v) => {
                let on_segment = |a: [f64; 2], b: [f64; 2]| {
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
                    [a[0] + t * d[0], a[1] + t * d[1]]
                };
                let dist = |q: [f64; 2]| (q[0] - p[0]).hypot(q[1] - p[1]);
                (0..3)
                    .map(|i| on_segment(v[i], v[(i + 1) % 3]))
                    .min_by(|a, b| dist(*a).total_cmp(&dist(*b)))
                    .expect("three edges")
            }
        }
    }

    /// Inside or on the boundary, with relative slack `tol`.
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        let slack = tol * self.diameter().max(1.0);
        match *self {
            Domain2D::Rectangle { x, y } => {
                p[0] >= x[0] - slack && p[0] <= x[1] + slack && p[1] >= y[0] - slack && p[1] <= y[1] + slack
            }
            Domain2D::Triangle([a, b, c]) => {
                let orient = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| {
                    (v[0] - u[0]) * (w[1] - u[1]) - (w[0] - u[0]) * (v[1] - u[1])
                };
                let s = orient(a, b, c).signum();
                let edge = |u: [f64; 2], v: [f64; 2]| {
                    let len = (v[0] - u[0]).hypot(v[1] - u[1]);
                    s * orient(u, v, p) / len >= -slack
                };
                edge(a, b) && edge(b, c) && edge(c, a)
            }
        }
    }
}

/// Iterated adaptive integration over a triangle or rectangle.
///
/// Triangles are mapped onto `{s, t >= 0, s + t <= 1}` and integrated as
/// `int_0^1 int_0^{1-s} f dt ds`; the inner integrals run at a tenth of the
/// outer tolerance.
pub fn integrate_2d<F>(f: F, domain: &Domain2D, tol: f64) -> Result<C64>
where
    F: Fn(f64, f64) -> C64,
{
    domain.validate()?;
    let inner_tol = 0.1 * tol;
    let failure = std::cell::Cell::new(None::<Error>);
    let result = match *domain {
        Domain2D::Rectangle { x, y } => integrate_1d(
            |xv| match integrate_1d(|yv| f(xv, yv), y[0], y[1], inner_tol) {
                Ok(v) => v,
                Err(e) => {
                    failure.set(Some(e));
                    C64::new(0.0, 0.0)
                }
            },
            x[0],
            x[1],
            tol,
        ),
        Domain2D::Triangle([p, q, r]) => {
            let e1 = [q[0] - p[0], q[1] - p[1]];
            let e2 = [r[0] - p[0], r[1] - p[1]];
            let jac = (e1[0] * e2[1] - e2[0] * e1[1]).abs();
            integrate_1d(
                |s| {
                    let top = 1.0 - s;
                    if top <= 0.0 {
                        return C64::new(0.0, 0.0);
                    }
                    let inner = integrate_1d(
                        |t| f(p[0] + s * e1[0] + t * e2[0], p[1] + s * e1[1] + t * e2[1]),
                        0.0,
                        top,
                        inner_tol,
                    );
                    match inner {
                        Ok(v) => v * jac,
                        Err(e) => {
                            failure.set(Some(e));
                            C64::new(0.0, 0.0)
                        }
                    }
                },
                0.0,
                1.0,
                tol,
            )
        }
    };
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn re(f: impl Fn(f64) -> f64) -> impl Fn(f64) -> C64 {
        move |x| C64::new(f(x), 0.0)
    }

    #[test]
    fn nearest_point_projects_onto_edges() {
        let t = Domain2D::unit_triangle();
        assert_eq!(t.nearest_point([0.2, 0.2]), [0.2, 0.2]);
        let q = t.nearest_point([1.0, 1.0]);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
        assert_eq!(t.nearest_point([-1.0, -2.0]), [0.0, 0.0]);
        assert_eq!(Domain2D::unit_square().nearest_point([2.0, 0.5]), [1.0, 0.5]);
    }

    #[test]
    fn composite_rule_reproduces_integrals() {
        let (x, w) = composite_rule(|x| C64::new(x.powf(-0.4) + 1.0, 0.0), 0.0, 1.0, &[0.5], 1e-13, 4).unwrap();
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powf(-0.2)).sum();
        assert!((q - 1.25).abs() < 1e-10, "{q}");
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * (3.0 * x).cos()).sum();
        assert!((q - 3f64.sin() / 3.0).abs() < 1e-13);
    }

    #[test]
    fn constant_and_power() {
        let v = integrate_1d(re(|_| 1.0), -1.0, 1.0, DEFAULT_TOL_1D).unwrap();
        assert!((v.re - 2.0).abs() < 1e-14);
        let v = integrate_1d(re(|x: f64| x.powf(0.5)), 0.0, 1.0, DEFAULT_TOL_1D).unwrap();
        assert!((v.re - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn endpoint_singularities() {
        let v = integrate_1d(re(|x: f64| x.ln()), 0.0, 1.0, DEFAULT_TOL_1D).unwrap();
        assert!((v.re + 1.0).abs() < 1e-12, "{}", v.re);
        let v = integrate_1d(re(|x: f64| x.powf(-1.0 / 3.0)), 0.0, 1.0, DEFAULT_TOL_1D).unwrap();
        assert!((v.re - 1.5).abs() < 1e-11, "{}", v.re);
    }

    #[test]
    fn monomial_moments() {
        for p in 0..=20 {
            let v = integrate_1d(re(|x: f64| x.powi(p)), -1.0, 1.0, DEFAULT_TOL_1D).unwrap();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert!((v.re - exact).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn complex_integrand() {
        // int_{-pi}^{pi} e^{3ix} dx = 0, int x e^{ix} = 2 pi i
        let pi = std::f64::consts::PI;
        let v = integrate_1d(|x| C64::new(0.0, 3.0 * x).exp(), -pi, pi, DEFAULT_TOL_1D).unwrap();
        assert!(v.norm() < 1e-12);
        let v = integrate_1d(|x| C64::new(0.0, x).exp() * x, -pi, pi, DEFAULT_TOL_1D).unwrap();
        assert!((v - C64::new(0.0, 2.0 * pi)).norm() < 1e-12);
    }

    #[test]
    fn empty_interval_is_an_error() {
        assert!(integrate_1d(re(|_| 1.0), 1.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn kinked_integrand_by_pieces() {
        let v = integrate_1d_pieces(re(|x: f64| x.abs()), -1.0, 2.0, &[0.0], DEFAULT_TOL_1D).unwrap();
        assert!((v.re - 2.5).abs() < 1e-13);
    }

    #[test]
    fn two_dimensional_cases() {
        let one = |_: f64, _: f64| C64::new(1.0, 0.0);
        let v = integrate_2d(one, &Domain2D::unit_triangle(), DEFAULT_TOL_2D).unwrap();
        assert!((v.re - 0.5).abs() < 1e-13);
        let v = integrate_2d(|x, _| C64::new(x, 0.0), &Domain2D::unit_square(), DEFAULT_TOL_2D).unwrap();
        assert!((v.re - 0.5).abs() < 1e-13);
        let v = integrate_2d(|x, y| C64::new(x * y, 0.0), &Domain2D::unit_triangle(), DEFAULT_TOL_2D).unwrap();
        assert!((v.re - 1.0 / 24.0).abs() < 1e-13);
        // a general triangle: area 3, centroid (4/3, 1)
        let t = Domain2D::triangle([[0.0, 0.0], [3.0, 0.0], [1.0, 2.0]]).unwrap();
        let v = integrate_2d(|x, _| C64::new(x, 0.0), &t, DEFAULT_TOL_2D).unwrap();
        assert!((v.re - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_domains_rejected() {
        assert!(Domain2D::triangle([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
        let r = Domain2D::Rectangle { x: [0.0, 0.0], y: [0.0, 1.0] };
        assert!(integrate_2d(|_, _| C64::new(1.0, 0.0), &r, 1e-10).is_err());
    }

    #[test]
    fn triangle_contains() {
        let t = Domain2D::unit_triangle();
        assert!(t.contains([0.2, 0.2], 0.0));
        assert!(t.contains([0.5, 0.5], 1e-12));
        assert!(!t.contains([0.6, 0.6], 1e-12));
    }
}
