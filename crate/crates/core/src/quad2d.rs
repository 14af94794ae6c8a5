//! Bivariate rules on triangles and rectangles: monomial Gramians, node
//! extraction from the two commuting quotients `A_x B^-1`, `A_y B^-1`, and a
//! deflation iteration for rules that need more nodes than one
//! eigendecomposition provides.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::design::json::{num, Num};
use crate::design::Thresholds;
use crate::numerics::{eig_general, integrate_2d, lstsq, svd, DenseMatrix};
pub use crate::numerics::Domain2D;
use crate::{Error, Result, C64};

/// Node counts for a rule exact on polynomials of degree `< 2n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeBudget {
    /// `dim P_n = n(n+1)/2`, the size of the Gramians.
    pub dim_n: usize,
    /// `dim P_2n = n(2n+1)`, the number of moment conditions.
    pub dim_2n: usize,
    /// `ceil(dim_2n / 3)`: each node carries three unknowns.
    pub min_nodes: usize,
    /// Nodes one eigendecomposition yields.
    pub eigen_nodes: usize,
    /// `ceil(n(n-1)/6)`, the nodes that must be fixed and deflated.
    pub extra_nodes: usize,
}

pub fn node_budget(n: usize) -> NodeBudget {
    let dim_n = n * (n + 1) / 2;
    let dim_2n = n * (2 * n + 1);
    NodeBudget {
        dim_n,
        dim_2n,
        min_nodes: dim_2n.div_ceil(3),
        eigen_nodes: dim_n,
        extra_nodes: (n * n.saturating_sub(1)).div_ceil(6),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node2D {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl Node2D {
    fn point(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Clone)]
pub enum Weight2D {
    Constant(f64),
    /// A discrete measure; the Gramians become finite sums.
    Atoms(Vec<Node2D>),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Weight2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight2D::Constant(c) => write!(f, "Constant({c})"),
            Weight2D::Atoms(a) => write!(f, "Atoms({} points)", a.len()),
            Weight2D::Function(_) => write!(f, "Function"),
        }
    }
}

/// `x^p y^q`, `p + q < n`, by total degree and then descending `p`.
pub fn monomial_exponents(n: usize) -> Vec<(u32, u32)> {
    (0..n as u32).flat_map(|d| (0..=d).rev().map(move |p| (p, d - p))).collect()
}

/// `m[p][q] = int x^p y^q u` for `p + q <= max_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub max_degree: usize,
    values: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn get(&self, p: u32, q: u32) -> f64 {
        self.values[p as usize][q as usize]
    }
}

pub fn moments_2d(max_degree: usize, domain: &Domain2D, u: &Weight2D, tol: f64) -> Result<MomentTable> {
    domain.validate()?;
    let pairs: Vec<(u32, u32)> = (0..=max_degree as u32)
        .flat_map(|d| (0..=d).map(move |p| (p, d - p)))
        .collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(p, q)| -> Result<f64> {
            let mono = |x: f64, y: f64| x.powi(p as i32) * y.powi(q as i32);
            Ok(match u {
                Weight2D::Atoms(atoms) => atoms.iter().map(|a| a.w * mono(a.x, a.y)).sum(),
                Weight2D::Constant(c) => c * integrate_2d(|x, y| C64::new(mono(x, y), 0.0), domain, tol)?.re,
                Weight2D::Function(f) => integrate_2d(|x, y| C64::new(f(x, y) * mono(x, y), 0.0), domain, tol)?.re,
            })
        })
        .collect::<Result<_>>()?;
    let mut values = vec![vec![f64::NAN; max_degree + 1]; max_degree + 1];
    for (&(p, q), v) in pairs.iter().zip(vals) {
        values[p as usize][q as usize] = v;
    }
    Ok(MomentTable { max_degree, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianTriple {
    pub b: DenseMatrix,
    pub ax: DenseMatrix,
    pub ay: DenseMatrix,
    pub basis_degree: usize,
    pub domain: Domain2D,
}

impl GramianTriple {
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }
}

/// Gramians of the monomials of degree `< n` against `u` on `domain`.
pub fn build_gramians_2d(n: usize, domain: &Domain2D, u: &Weight2D, tol: f64) -> Result<GramianTriple> {
    if n == 0 {
        return Err(Error::Dimension("basis degree must be at least 1".into()));
    }
    let m = moments_2d(2 * n - 1, domain, u, tol)?;
    gramians_from_moments(n, &m, domain)
}

pub fn gramians_from_moments(n: usize, m: &MomentTable, domain: &Domain2D) -> Result<GramianTriple> {
    if m.max_degree + 1 < 2 * n {
        return Err(Error::Dimension(format!("moments up to degree {} cannot fill degree-{n} Gramians", m.max_degree)));
    }
    let e = monomial_exponents(n);
    let k = e.len();
    let entry = |dp: u32, dq: u32| {
        DenseMatrix::from_fn(k, k, |i, j| C64::new(m.get(e[i].0 + e[j].0 + dp, e[i].1 + e[j].1 + dq), 0.0))
    };
    Ok(GramianTriple {
        b: entry(0, 0)?,
        ax: entry(1, 0)?,
        ay: entry(0, 1)?,
        basis_degree: n,
        domain: *domain,
    })
}

fn basis_column(n: usize, p: [f64; 2]) -> DVector<C64> {
    let e = monomial_exponents(n);
    DVector::from_iterator(e.len(), e.iter().map(|&(a, b)| C64::new(p[0].powi(a as i32) * p[1].powi(b as i32), 0.0)))
}

/// `B - sum_j w_j T(x_j, y_j) T*(x_j, y_j)` and likewise for `A_x`, `A_y`
/// with the factors `x_j`, `y_j`.
pub fn deflate_2d(triple: &GramianTriple, fixed: &[Node2D]) -> Result<GramianTriple> {
    let n = triple.basis_degree;
    let (mut b, mut ax, mut ay) = (triple.b.as_matrix().clone(), triple.ax.as_matrix().clone(), triple.ay.as_matrix().clone());
    for node in fixed {
        let t = basis_column(n, node.point());
        let outer = &t * t.adjoint() * C64::new(node.w, 0.0);
        b -= &outer;
        ax -= &outer * C64::new(node.x, 0.0);
        ay -= &outer * C64::new(node.y, 0.0);
    }
    Ok(GramianTriple {
        b: DenseMatrix::new(b)?,
        ax: DenseMatrix::new(ax)?,
        ay: DenseMatrix::new(ay)?,
        ..triple.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Real parts of the eigenvalue pairs that fall in the domain, sorted.
    pub nodes: Vec<[f64; 2]>,
    /// Real parts of all pairs, sorted.
    pub all_pairs: Vec<[f64; 2]>,
    /// Pairs outside the domain or with large imaginary parts.
    pub discarded: usize,
    /// `||[M_x, M_y]||_F / (||M_x||_F ||M_y||_F)`.
    pub commutation_residual: f64,
    /// `max_j ||M_y v_j - y_j v_j|| / ||M_y||_F` over unit `v_j`.
    pub pair_residual: f64,
    pub imag_max: f64,
    pub accepted: bool,
    pub rejected_reason: Option<String>,
}

fn quotient(a: &DenseMatrix, b: &DenseMatrix) -> Option<DMatrix<C64>> {
    // A B^{-1} = (B^{-*} A*)*
    b.adjoint().full_piv_lu().solve(&a.adjoint()).map(|x| x.adjoint())
}

/// Angles tried for the combined quotient `cos(t) M_x + sin(t) M_y`.
const COMBINATION_ANGLES: usize = 8;

/// Gauss-Newton steps polishing accepted nodes against the Gramians.
const POLISH_STEPS: usize = 8;

/// Nodes from the common eigenvectors of `M_x = A_x B^-1` and
/// `M_y = A_y B^-1`.
///
/// The eigenvectors come from the combination `cos(t) M_x + sin(t) M_y`
/// whose eigenvalues are best separated over a fixed set of angles (nodes
/// sharing a coordinate make `M_x` or `M_y` alone ill-conditioned), and both
/// coordinates are Rayleigh quotients. Clusters of equal eigenvalues
/// (coincident projections) are resolved by diagonalizing the orthogonal
/// combination on the cluster's near-null space. Accepted nodes are then
/// polished by Gauss-Newton on `B`, `A_x`, `A_y` as sums of rank-one terms.
pub fn extract_nodes_2d(triple: &GramianTriple, th: &Thresholds) -> Result<Extraction> {
    let angles: Vec<f64> = (0..COMBINATION_ANGLES)
        .map(|i| 0.3 + std::f64::consts::PI * i as f64 / COMBINATION_ANGLES as f64)
        .collect();
    extract_with(triple, th, &angles, true)
}

/// Extraction inside the deflation iteration: eigenvectors of `M_x` alone
/// and no polishing, since intermediate Gramians are not those of a rule.
fn extract_sweep(triple: &GramianTriple, th: &Thresholds) -> Result<Extraction> {
    extract_with(triple, th, &[0.0], false)
}

fn extract_with(triple: &GramianTriple, th: &Thresholds, angles: &[f64], polish_nodes: bool) -> Result<Extraction> {
    let sv = svd(&triple.b)?.singular_values;
    let ratio = if sv[0] > 0.0 { sv[sv.len() - 1] / sv[0] } else { 0.0 };
    if !(ratio > 1e-14) {
        return Err(Error::SingularGramian { ratio });
    }
    let (mx, my) = match (quotient(&triple.ax, &triple.b), quotient(&triple.ay, &triple.b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::SingularGramian { ratio }),
    };
    let k = mx.nrows();
    let comm = (&mx * &my - &my * &mx).norm() / (mx.norm() * my.norm()).max(f64::MIN_POSITIVE);
    let mx_norm = mx.norm().max(f64::MIN_POSITIVE);
    let my_norm = my.norm().max(f64::MIN_POSITIVE);

    let combine = |t: f64, a: f64, b: f64| &mx * C64::new(a * t.cos() - b * t.sin(), 0.0) + &my * C64::new(a * t.sin() + b * t.cos(), 0.0);
    let mut best: Option<(f64, f64, Vec<C64>, f64)> = None;
    for &t in angles {
        let mut eig: Vec<C64> = eig_general(&DenseMatrix::new(combine(t, 1.0, 0.0))?)?.into_iter().map(|e| e.value).collect();
        eig.sort_by(|p, q| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)));
        let scale = eig.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        let gap = (0..k)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (eig[i] - eig[j]).norm())
            .fold(f64::INFINITY, f64::min)
            / scale;
        if best.as_ref().is_none_or(|b| gap > b.0) {
            best = Some((gap, t, eig, scale));
        }
    }
    let (_, angle, eig, scale) = best.expect("at least one angle");
    let m = combine(angle, 1.0, 0.0);
    let m_perp = combine(angle, 0.0, 1.0);
    let gap = 1e-8 * scale;

    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for z in eig {
        match clusters.last_mut() {
            Some(c) if (z - c[c.len() - 1]).norm() < gap => c.push(z),
            _ => clusters.push(vec![z]),
        }
    }
    let mut pairs: Vec<(C64, C64)> = Vec::new();
    let mut pair_res = 0.0f64;
    for c in clusters {
        let zm = c.iter().sum::<C64>() / C64::new(c.len() as f64, 0.0);
        let shifted = &m - DMatrix::<C64>::identity(k, k) * zm;
        let dec = svd(&DenseMatrix::new(shifted)?)?;
        // right singular vectors of the smallest singular values
        let basis = dec.v.columns(k - c.len(), c.len()).into_owned();
        let restricted = basis.adjoint() * &m_perp * &basis;
        let sub = eig_general(&DenseMatrix::new(restricted)?)?;
        for e in sub {
            let v = &basis * &e.vector;
            let v = &v / C64::new(v.norm(), 0.0);
            let vx = v.dotc(&(&mx * &v));
            let vy = v.dotc(&(&my * &v));
            pair_res = pair_res
                .max((&mx * &v - &v * vx).norm() / mx_norm)
                .max((&my * &v - &v * vy).norm() / my_norm);
            pairs.push((vx, vy));
        }
    }
    let mut nodes = Vec::new();
    let mut all_pairs: Vec<[f64; 2]> = pairs.iter().map(|(x, y)| [x.re, y.re]).collect();
    all_pairs.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    let mut imag_max = 0.0f64;
    let mut discarded = 0;
    for (x, y) in pairs {
        let im = x.im.abs().max(y.im.abs());
        let p = [x.re, y.re];
        if im <= th.tol_imag * scale && triple.domain.contains(p, 1e-9) {
            imag_max = imag_max.max(im);
            nodes.push(p);
        } else {
            discarded += 1;
        }
    }
    nodes.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    let mut reasons = Vec::new();
    if comm > th.tol_gram {
        reasons.push(format!("quotients do not commute: residual {comm:.3e}"));
    }
    if pair_res > th.tol_pos {
        reasons.push(format!("no shared eigenvectors: residual {pair_res:.3e}"));
    }
    if discarded > 0 {
        reasons.push(format!("{discarded} eigenvalue pairs are complex or outside the domain"));
    }
    let accepted = reasons.is_empty();
    if accepted && polish_nodes {
        if let Some(p) = polish(triple, &nodes) {
            nodes = p;
            all_pairs = nodes.clone();
        }
    }
    Ok(Extraction {
        nodes,
        all_pairs,
        discarded,
        commutation_residual: comm,
        pair_residual: pair_res,
        imag_max,
        accepted,
        rejected_reason: (!accepted).then(|| reasons.join("; ")),
    })
}

/// Real residual `[B; A_x; A_y] - sum_j w_j [1; x_j; y_j] T T*` and its
/// Jacobian in `(x_j, y_j, w_j)`.
fn triple_residual(triple: &GramianTriple, pts: &[[f64; 2]], w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = triple.basis_degree;
    let e = monomial_exponents(n);
    let k = e.len();
    let mut res = DVector::<f64>::zeros(3 * k * k);
    for (blk, m) in [&triple.b, &triple.ax, &triple.ay].into_iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                res[blk * k * k + i * k + j] = m[(i, j)].re;
            }
        }
    }
    let mut jac = DMatrix::<f64>::zeros(3 * k * k, 3 * pts.len());
    let pw = |v: f64, p: u32| if p == 0 { 1.0 } else { v.powi(p as i32) };
    let dpw = |v: f64, p: u32| if p == 0 { 0.0 } else { p as f64 * pw(v, p - 1) };
    for (j, (&[x, y], &wj)) in pts.iter().zip(w).enumerate() {
        let t: Vec<f64> = e.iter().map(|&(a, b)| pw(x, a) * pw(y, b)).collect();
        let tx: Vec<f64> = e.iter().map(|&(a, b)| dpw(x, a) * pw(y, b)).collect();
        let ty: Vec<f64> = e.iter().map(|&(a, b)| pw(x, a) * dpw(y, b)).collect();
        for r in 0..k {
            for c in 0..k {
                let o = t[r] * t[c];
                let ox = tx[r] * t[c] + t[r] * tx[c];
                let oy = ty[r] * t[c] + t[r] * ty[c];
                for (blk, f, fx, fy) in [(0, 1.0, 0.0, 0.0), (1, x, 1.0, 0.0), (2, y, 0.0, 1.0)] {
                    let row = blk * k * k + r * k + c;
                    res[row] -= wj * f * o;
                    jac[(row, 3 * j)] = wj * (fx * o + f * ox);
                    jac[(row, 3 * j + 1)] = wj * (fy * o + f * oy);
                    jac[(row, 3 * j + 2)] = f * o;
                }
            }
        }
    }
    (res, jac)
}

/// Gauss-Newton on the Gramian equations from extracted nodes. `None` when
/// it does not lower the residual or leaves the domain.
fn polish(triple: &GramianTriple, nodes: &[[f64; 2]]) -> Option<Vec<[f64; 2]>> {
    if nodes.is_empty() {
        return None;
    }
    let k = triple.dim();
    let e = DMatrix::<f64>::from_fn(k * k, nodes.len(), |r, j| {
        let t = basis_column(triple.basis_degree, nodes[j]);
        (t[r / k] * t[r % k]).re
    });
    let rhs = DVector::from_fn(k * k, |r, _| triple.b[(r / k, r % k)].re);
    let mut w: Vec<f64> = e.svd(true, true).solve(&rhs, 1e-14 * rhs.amax()).ok()?.iter().copied().collect();
    let mut pts = nodes.to_vec();
    let (res0, _) = triple_residual(triple, &pts, &w);
    let mut best = res0.norm();
    let start = best;
    for _ in 0..POLISH_STEPS {
        let (res, jac) = triple_residual(triple, &pts, &w);
        let step = jac.svd(true, true).solve(&res, 1e-14).ok()?;
        let trial: Vec<[f64; 2]> = pts.iter().enumerate().map(|(j, p)| [p[0] + step[3 * j], p[1] + step[3 * j + 1]]).collect();
        let tw: Vec<f64> = w.iter().enumerate().map(|(j, v)| v + step[3 * j + 2]).collect();
        let r = triple_residual(triple, &trial, &tw).0.norm();
        if !(r < best) {
            break;
        }
        best = r;
        pts = trial;
        w = tw;
    }
    let inside = pts.iter().all(|&p| triple.domain.contains(p, 1e-9));
    (best < start && inside).then(|| {
        pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
        pts
    })
}

/// Least-squares weights matching every moment of degree `< 2n`.
pub fn weights_2d(moments: &MomentTable, n: usize, nodes: &[[f64; 2]]) -> Result<Vec<f64>> {
    let e = monomial_exponents(2 * n);
    let mat = DenseMatrix::from_fn(e.len(), nodes.len(), |i, j| {
        C64::new(nodes[j][0].powi(e[i].0 as i32) * nodes[j][1].powi(e[i].1 as i32), 0.0)
    })?;
    let rhs = DMatrix::from_fn(e.len(), 1, |i, _| C64::new(moments.get(e[i].0, e[i].1), 0.0));
    Ok(lstsq(&mat, &rhs)?.column(0).iter().map(|z| z.re).collect())
}

/// `max |sum_j w_j x_j^p y_j^q - m_pq|` over `p + q < 2n`.
pub fn moment_error(moments: &MomentTable, n: usize, nodes: &[Node2D]) -> f64 {
    monomial_exponents(2 * n)
        .iter()
        .map(|&(p, q)| {
            let s: f64 = nodes.iter().map(|a| a.w * a.x.powi(p as i32) * a.y.powi(q as i32)).sum();
            (s - moments.get(p, q)).abs()
        })
        .fold(0.0, f64::max)
}

/// Levenberg-Marquardt on the moment equations in all of `(x_j, y_j, w_j)`.
///
/// Nodes are kept inside `domain`. Returns the refined nodes; the caller
/// decides whether the result is exact.
pub fn refine_2d(moments: &MomentTable, n: usize, domain: &Domain2D, nodes: &[Node2D], steps: usize) -> Vec<Node2D> {
    let e = monomial_exponents(2 * n);
    let k = nodes.len();
    let resid = |v: &DVector<f64>| {
        DVector::from_iterator(
            e.len(),
            e.iter().map(|&(p, q)| {
                let s: f64 = (0..k).map(|j| v[3 * j + 2] * v[3 * j].powi(p as i32) * v[3 * j + 1].powi(q as i32)).sum();
                s - moments.get(p, q)
            }),
        )
    };
    let pow = |x: f64, p: u32| if p == 0 { 1.0 } else { x.powi(p as i32) };
    let mut v = DVector::from_iterator(3 * k, nodes.iter().flat_map(|a| [a.x, a.y, a.w]));
    let mut r = resid(&v);
    let mut lambda = 1e-3;
    for _ in 0..steps {
        let cost = r.norm_squared();
        if cost.sqrt() <= 1e-15 {
            break;
        }
        let jac = DMatrix::from_fn(e.len(), 3 * k, |i, c| {
            let (p, q) = e[i];
            let (x, y, w) = (v[3 * (c / 3)], v[3 * (c / 3) + 1], v[3 * (c / 3) + 2]);
            match c % 3 {
                0 => w * p as f64 * pow(x, p.saturating_sub(1)) * pow(y, q) * f64::from(p > 0),
                1 => w * q as f64 * pow(x, p) * pow(y, q.saturating_sub(1)) * f64::from(q > 0),
                _ => pow(x, p) * pow(y, q),
            }
        });
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for i in 0..3 * k {
                m[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = m.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &v - step;
            for j in 0..k {
                let q = domain.nearest_point([trial[3 * j], trial[3 * j + 1]]);
                trial[3 * j] = q[0];
                trial[3 * j + 1] = q[1];
            }
            let rt = resid(&trial);
            if rt.norm_squared() < cost {
                v = trial;
                r = rt;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (0..k).map(|j| Node2D { x: v[3 * j], y: v[3 * j + 1], w: v[3 * j + 2] }).collect()
}

/// Candidates left after deflating `extras`, with their least-squares
/// weights and the moment residual of the combined rule.
fn deflated_completion(
    triple: &GramianTriple,
    moments: &MomentTable,
    th: &Thresholds,
    extras: &[Node2D],
) -> Result<(Vec<Node2D>, DVector<f64>)> {
    let n = triple.basis_degree;
    let ex = extract_sweep(&deflate_2d(triple, extras)?, th)?;
    let points: Vec<[f64; 2]> = ex.all_pairs.iter().map(|&p| triple.domain.nearest_point(p)).collect();
    let e = monomial_exponents(2 * n);
    let mono = |p: [f64; 2], (a, b): (u32, u32)| p[0].powi(a as i32) * p[1].powi(b as i32);
    let target = DMatrix::from_fn(e.len(), 1, |i, _| {
        C64::new(moments.get(e[i].0, e[i].1) - extras.iter().map(|a| a.w * mono(a.point(), e[i])).sum::<f64>(), 0.0)
    });
    let mat = DenseMatrix::from_fn(e.len(), points.len(), |i, j| C64::new(mono(points[j], e[i]), 0.0))?;
    let w: Vec<f64> = lstsq(&mat, &target)?.column(0).iter().map(|z| z.re).collect();
    let nodes: Vec<Node2D> = points.iter().zip(&w).map(|(p, &w)| Node2D { x: p[0], y: p[1], w }).collect();
    let resid = DVector::from_iterator(
        e.len(),
        (0..e.len()).map(|i| nodes.iter().map(|a| a.w * mono(a.point(), e[i])).sum::<f64>() - target[(i, 0)].re),
    );
    Ok((nodes, resid))
}

/// Levenberg-Marquardt on the extra nodes alone, the rest being recomputed
/// by deflation at every evaluation. Finite-difference Jacobian.
fn refine_extras(triple: &GramianTriple, moments: &MomentTable, th: &Thresholds, extras: &[Node2D], steps: usize) -> Vec<Node2D> {
    let k = extras.len();
    let unpack = |v: &DVector<f64>| -> Vec<Node2D> {
        (0..k)
            .map(|j| {
                let p = triple.domain.nearest_point([v[3 * j], v[3 * j + 1]]);
                Node2D { x: p[0], y: p[1], w: v[3 * j + 2] }
            })
            .collect()
    };
    let eval = |v: &DVector<f64>| deflated_completion(triple, moments, th, &unpack(v)).ok().map(|(_, r)| r);
    let mut v = DVector::from_iterator(3 * k, extras.iter().flat_map(|a| [a.x, a.y, a.w]));
    let Some(mut r) = eval(&v) else { return extras.to_vec() };
    let mut lambda = 1e-3;
    for _ in 0..steps {
        let cost = r.norm_squared();
        if cost.sqrt() <= 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), 3 * k);
        for c in 0..3 * k {
            let h = 1e-7 * v[c].abs().max(1e-2);
            let mut vp = v.clone();
            vp[c] += h;
            let Some(rp) = eval(&vp) else { return unpack(&v) };
            jac.set_column(c, &((rp - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for i in 0..3 * k {
                m[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = m.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &v - step;
            if let Some(rt) = eval(&trial).filter(|rt| rt.norm_squared() < cost) {
                v = trial;
                r = rt;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    unpack(&v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config2D {
    /// Initial extra nodes; defaults to a cluster in the sharpest corner.
    pub init_nodes: Option<Vec<[f64; 2]>>,
    pub max_iter: usize,
    /// Converged once no node moves more than this.
    pub tol: f64,
    pub oracle_tol: f64,
    /// Levenberg-Marquardt steps applied to the full node set each sweep.
    pub refine_steps: usize,
    /// Levenberg-Marquardt steps on the extra nodes before each deflation.
    pub extra_steps: usize,
}

impl Default for Config2D {
    fn default() -> Self {
        Self {
            init_nodes: None,
            max_iter: 200,
            tol: 1e-10,
            oracle_tol: crate::numerics::DEFAULT_TOL_2D,
            refine_steps: 200,
            extra_steps: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome2D {
    Accepted,
    /// Converged, but not to a rule.
    Rejected,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule2D {
    pub domain: Domain2D,
    pub basis_degree: usize,
    pub nodes: Vec<Node2D>,
    pub outcome: Outcome2D,
    pub iterations: usize,
    /// Largest node displacement per iteration.
    pub history: Vec<f64>,
    pub moment_error: f64,
    pub reason: Option<String>,
}

impl Rule2D {
    pub fn accepted(&self) -> bool {
        self.outcome == Outcome2D::Accepted
    }
}

/// `count` points near the vertex with the smallest interior angle.
pub fn corner_guess(domain: &Domain2D, count: usize) -> Vec<[f64; 2]> {
    let v = domain.vertices();
    let m = v.len();
    let angle = |i: usize| {
        let (p, a, b) = (v[i], v[(i + m - 1) % m], v[(i + 1) % m]);
        let (u, w) = ([a[0] - p[0], a[1] - p[1]], [b[0] - p[0], b[1] - p[1]]);
        let c = (u[0] * w[0] + u[1] * w[1]) / (u[0].hypot(u[1]) * w[0].hypot(w[1]));
        c.clamp(-1.0, 1.0).acos()
    };
    let corner = (0..m).fold(0, |best, i| if angle(i) < angle(best) - 1e-12 { i } else { best });
    let (p, a, b) = (v[corner], v[(corner + m - 1) % m], v[(corner + 1) % m]);
    (0..count)
        .map(|j| {
            // spread along the bisector and across it
            let s = 0.12 + 0.06 * j as f64;
            let t = 0.08 + 0.04 * ((j * 7) % 5) as f64 / 4.0;
            [p[0] + s * (a[0] - p[0]) + t * (b[0] - p[0]), p[1] + s * (a[1] - p[1]) + t * (b[1] - p[1])]
        })
        .collect()
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Greedy max-min: repeatedly take the candidate farthest from the
/// reference set plus those already taken; ties go to the lower index.
fn farthest(candidates: &[[f64; 2]], reference: &[[f64; 2]], count: usize) -> Vec<usize> {
    let mut taken: Vec<usize> = Vec::new();
    let mut refs = reference.to_vec();
    for _ in 0..count.min(candidates.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in candidates.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            let d = refs.iter().map(|&r| dist(c, r)).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("candidate available");
        taken.push(i);
        refs.push(candidates[i]);
    }
    taken
}

/// Symmetric Hausdorff distance between two node sets.
fn displacement(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let one = |p: &[[f64; 2]], q: &[[f64; 2]]| {
        p.iter()
            .map(|&x| q.iter().map(|&y| dist(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Rule exact for polynomials of degree `< 2n`, with `extra_nodes` nodes
/// beyond what one eigendecomposition provides.
///
/// Each sweep solves all weights by least squares, deflates the extra nodes,
/// extracts `eigen_nodes` candidates from the deflated quotients, and takes
/// the `extra_nodes` candidates farthest from the current extra set as the
/// next one. Each sweep also refines the extra nodes (with the others
/// recomputed by deflation) and then the whole set against the moments;
/// both steps can be switched off through [`Config2D`]. Generic weights
/// admit no such rule, so non-convergence is an ordinary outcome.
pub fn design_2d_deflation(n: usize, domain: &Domain2D, u: &Weight2D, cfg: &Config2D, th: &Thresholds) -> Result<Rule2D> {
    domain.validate()?;
    if n == 0 {
        return Err(Error::Dimension("basis degree must be at least 1".into()));
    }
    let budget = node_budget(n);
    let moments = moments_2d(2 * n, domain, u, cfg.oracle_tol)?;
    let triple = gramians_from_moments(n, &moments, domain)?;
    let finish = |points: Vec<[f64; 2]>, iterations: usize, history: Vec<f64>, converged: bool, note: Option<String>| -> Result<Rule2D> {
        let w = if points.is_empty() { Vec::new() } else { weights_2d(&moments, n, &points)? };
        let nodes: Vec<Node2D> = points.iter().zip(&w).map(|(p, &w)| Node2D { x: p[0], y: p[1], w }).collect();
        let err = moment_error(&moments, n, &nodes);
        let wmax = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let exact = !nodes.is_empty() && err <= 1e-6 && w.iter().all(|v| v.abs() > 1e-13 * wmax);
        let (outcome, reason) = match (converged, exact) {
            (true, true) => (Outcome2D::Accepted, None),
            (true, false) => (
                Outcome2D::Rejected,
                Some(note.unwrap_or_else(|| format!("converged to non-quadrature stationary point (moment error {err:.3e})"))),
            ),
            (false, _) => (Outcome2D::NotConverged, Some(note.unwrap_or_else(|| format!("no convergence after {iterations} iterations")))),
        };
        Ok(Rule2D {
            domain: *domain,
            basis_degree: n,
            nodes,
            outcome,
            iterations,
            history,
            moment_error: err,
            reason,
        })
    };

    if budget.extra_nodes == 0 {
        return match extract_nodes_2d(&triple, th) {
            Ok(ex) if ex.nodes.len() == budget.eigen_nodes => finish(ex.nodes, 0, Vec::new(), true, None),
            Ok(ex) => finish(ex.nodes, 0, Vec::new(), true, ex.rejected_reason),
            Err(e) => finish(Vec::new(), 0, Vec::new(), true, Some(e.to_string())),
        };
    }

    let mut extras = match &cfg.init_nodes {
        Some(init) if init.len() == budget.extra_nodes => init.clone(),
        Some(init) => {
            return Err(Error::Dimension(format!(
                "{} initial nodes given, {} extra nodes needed",
                init.len(),
                budget.extra_nodes
            )))
        }
        None => corner_guess(domain, budget.extra_nodes),
    };
    // initial weights: least squares over the extras and the undeflated nodes,
    // falling back to an equal share of the mass
    let share = moments.get(0, 0) / (budget.eigen_nodes + budget.extra_nodes) as f64;
    let mut w_extra = match extract_sweep(&triple, th) {
        Ok(ex) => {
            let pts: Vec<[f64; 2]> = extras.iter().chain(ex.all_pairs.iter()).map(|&p| domain.nearest_point(p)).collect();
            let w = weights_2d(&moments, n, &pts)?;
            w[..budget.extra_nodes].iter().map(|&v| if v.is_finite() && v != 0.0 { v } else { share }).collect()
        }
        Err(_) => vec![share; budget.extra_nodes],
    };
    let mut previous: Option<Vec<[f64; 2]>> = None;
    let mut history = Vec::new();
    for it in 1..=cfg.max_iter {
        let mut fixed: Vec<Node2D> = extras.iter().zip(&w_extra).map(|(p, &w)| Node2D { x: p[0], y: p[1], w }).collect();
        if cfg.extra_steps > 0 {
            fixed = refine_extras(&triple, &moments, th, &fixed, cfg.extra_steps);
            extras = fixed.iter().map(|a| a.point()).collect();
        }
        // intermediate sweeps are inexact: keep every pair, pulled into the domain
        let candidates: Vec<[f64; 2]> = match extract_sweep(&deflate_2d(&triple, &fixed)?, th) {
            Ok(ex) => ex.all_pairs.iter().map(|&p| domain.nearest_point(p)).collect(),
            Err(e) => {
                let current = previous.unwrap_or_else(|| extras.clone());
                return finish(current, it, history, false, Some(format!("iteration {it}: {e}")));
            }
        };
        let mut full: Vec<[f64; 2]> = extras.iter().chain(&candidates).copied().collect();
        let mut w = weights_2d(&moments, n, &full)?;
        if cfg.refine_steps > 0 {
            let nodes: Vec<Node2D> = full.iter().zip(&w).map(|(p, &w)| Node2D { x: p[0], y: p[1], w }).collect();
            let refined = refine_2d(&moments, n, domain, &nodes, cfg.refine_steps);
            full = refined.iter().map(|a| [a.x, a.y]).collect();
            w = refined.iter().map(|a| a.w).collect();
        }
        let candidates = &full[budget.extra_nodes..];
        let step = previous.as_ref().map_or(f64::INFINITY, |prev| displacement(&full, prev));
        history.push(step);
        log::debug!("2-D deflation sweep {it}: displacement {step:.3e}");
        if step < cfg.tol {
            return finish(full, it, history, true, None);
        }
        let pick = farthest(candidates, &extras, budget.extra_nodes);
        extras = pick.iter().map(|&i| candidates[i]).collect();
        w_extra = pick.iter().map(|&i| w[budget.extra_nodes + i]).collect();
        previous = Some(full);
    }
    let current = previous.unwrap_or(extras);
    finish(current, cfg.max_iter, history, false, None)
}

#[derive(Serialize)]
struct DomainOut {
    shape: &'static str,
    vertices: Vec<[Num; 2]>,
}

#[derive(Serialize)]
struct Diag2DOut {
    accepted: bool,
    outcome: &'static str,
    moment_error: Num,
    iterations: usize,
    displacement_history: Vec<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected_reason: Option<String>,
}

#[derive(Serialize)]
struct Rule2DOut {
    version: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    basis_degree: usize,
    domain: DomainOut,
    nodes: Vec<[Num; 2]>,
    weights: Vec<Num>,
    diagnostics: Diag2DOut,
}

/// Rule JSON with `[x, y]` nodes and the domain record.
pub fn rule2d_json(rule: &Rule2D) -> String {
    let (shape, vertices) = match rule.domain {
        Domain2D::Triangle(v) => ("triangle", v.to_vec()),
        Domain2D::Rectangle { .. } => ("rectangle", rule.domain.vertices()),
    };
    let out = Rule2DOut {
        version: 1,
        kind: "type2",
        basis_degree: rule.basis_degree,
        domain: DomainOut {
            shape,
            vertices: vertices.iter().map(|p| p.map(num)).collect(),
        },
        nodes: rule.nodes.iter().map(|p| [num(p.x), num(p.y)]).collect(),
        weights: rule.nodes.iter().map(|p| num(p.w)).collect(),
        diagnostics: Diag2DOut {
            accepted: rule.accepted(),
            outcome: match rule.outcome {
                Outcome2D::Accepted => "accepted",
                Outcome2D::Rejected => "rejected",
                Outcome2D::NotConverged => "not_converged",
            },
            moment_error: num(rule.moment_error),
            iterations: rule.iterations,
            displacement_history: rule.history.iter().map(|&v| num(v)).collect(),
            rejected_reason: rule.reason.clone(),
        },
    };
    serde_json::to_string_pretty(&out).expect("serializable") + "\n"
}
