//! Gramian pairs `B = <T, S>_u`, `A = <mu T, S>_u`, built directly or by
//! folding a moment signal, and the quotient `A B^{-1}`.

mod expr;
mod signal;
mod weight;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use expr::{Expr, Func};
pub use signal::{fold_signal, SignalTrace};
pub use weight::{Positivity, WeightForm, WeightSpec};

use crate::families::{Basis, FoldKind, MinimalFunction, Multiplied};
use crate::numerics::{cutoff_rank, integrate_1d_pieces, svd, DenseMatrix};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Direct,
    Folded(FoldKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianPair {
    pub a: Option<DenseMatrix>,
    pub b: DenseMatrix,
    pub row_kgrid: Vec<f64>,
    pub col_kgrid: Vec<f64>,
    /// The multiplier that produced `A`.
    pub mu_used: Option<MinimalFunction>,
    pub provenance: Provenance,
}

impl GramianPair {
    pub fn a(&self) -> Result<&DenseMatrix> {
        self.a.as_ref().ok_or(Error::MissingDerivative)
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn cols(&self) -> usize {
        self.b.ncols()
    }
}

/// `M[i][j] = int u rows_i conj(cols_j)` (finite sums for atoms). Entries are
/// independent and evaluated in parallel; when `rows` and `cols` are the same
/// object only the upper triangle is integrated.
pub fn gram_matrix(rows: &dyn Basis, cols: &dyn Basis, u: &WeightSpec, tol: f64) -> Result<DenseMatrix> {
    let (m, n) = (rows.len(), cols.len());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("Gramian needs nonempty bases".into()));
    }
    let [a, b] = rows.interval();
    u.validate_on(a, b)?;
    let same = std::ptr::addr_eq(rows as *const dyn Basis, cols as *const dyn Basis);
    let breaks = u.breakpoints();
    let entry = |i: usize, j: usize| -> Result<C64> {
        let v = match u.atoms_list() {
            Some(atoms) => atoms.iter().map(|&(x, w)| rows.eval(i, x) * cols.eval(j, x).conj() * w).sum(),
            None => integrate_1d_pieces(|x| rows.eval(i, x) * cols.eval(j, x).conj() * u.eval(x), a, b, &breaks, tol)
                .map_err(|e| Error::GramianEntry {
                    row: i,
                    col: j,
                    source: Box::new(e),
                })?,
        };
        Ok(v)
    };
    let idx: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !same || i <= j)
        .collect();
    let vals: Vec<C64> = idx.par_iter().map(|&(i, j)| entry(i, j)).collect::<Result<_>>()?;
    let mut out = DMatrix::<C64>::zeros(m, n);
    for (&(i, j), v) in idx.iter().zip(vals) {
        out[(i, j)] = v;
        if same && i != j {
            out[(j, i)] = v.conj();
        }
    }
    DenseMatrix::new(out)
}

/// Direct Gramians of `T` against `S`. `A` is omitted without `mu`.
pub fn build_direct(
    t: &dyn Basis,
    s: &dyn Basis,
    mu: Option<&MinimalFunction>,
    u: &WeightSpec,
    tol: f64,
) -> Result<GramianPair> {
    let b = gram_matrix(t, s, u, tol)?;
    let a = match mu {
        Some(mu) => Some(gram_matrix(&Multiplied { basis: t, mu }, s, u, tol)?),
        None => None,
    };
    Ok(GramianPair {
        a,
        b,
        row_kgrid: t.params(),
        col_kgrid: s.params(),
        mu_used: mu.copied(),
        provenance: Provenance::Direct,
    })
}

/// `A B^{-1}` through a solve with `B*`; `B` must be square and
/// numerically invertible.
pub fn quotient_dense(pair: &GramianPair) -> Result<DenseMatrix> {
    let a = pair.a()?;
    let b = &pair.b;
    if !b.is_square() || a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "quotient needs square B and matching A, got {:?} and {:?}",
            b.shape(),
            a.shape()
        )));
    }
    let sv = svd(b)?.singular_values;
    let ratio = if sv[0] > 0.0 { sv[sv.len() - 1] / sv[0] } else { 0.0 };
    if !(ratio > 1e-12) {
        return Err(Error::SingularGramian { ratio });
    }
    let xt = b
        .adjoint()
        .full_piv_lu()
        .solve(&a.adjoint())
        .ok_or(Error::SingularGramian { ratio })?;
    DenseMatrix::new(xt.adjoint())
}

/// `A` and `B` projected on the leading singular subspace of `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedQuotient {
    /// `(U* A V) Sigma^{-1}`
    pub q_tilde: DenseMatrix,
    /// Leading left singular vectors of `B` (`rows x rank`).
    pub u: DMatrix<C64>,
    pub v: DMatrix<C64>,
    /// All singular values of `B`.
    pub sigma: Vec<f64>,
    pub rank: usize,
    pub epsilon: f64,
}

impl RegularizedQuotient {
    /// Lifts an eigenvector of `q_tilde` to the row space of `B`.
    pub fn lift(&self, y: &nalgebra::DVector<C64>) -> nalgebra::DVector<C64> {
        &self.u * y
    }
}

pub fn regularize(pair: &GramianPair, epsilon: f64) -> Result<RegularizedQuotient> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let a = pair.a()?;
    if a.shape() != pair.b.shape() {
        return Err(Error::Dimension("A and B shapes differ".into()));
    }
    let dec = svd(&pair.b)?;
    let r = cutoff_rank(&dec.singular_values, epsilon);
    if r == 0 {
        return Err(Error::ZeroRank { epsilon });
    }
    let u = dec.u.columns(0, r).into_owned();
    let v = dec.v.columns(0, r).into_owned();
    let mut q = u.adjoint() * a.as_matrix() * &v;
    for j in 0..r {
        let inv = 1.0 / dec.singular_values[j];
        q.column_mut(j).scale_mut(inv);
    }
    Ok(RegularizedQuotient {
        q_tilde: DenseMatrix::new(q)?,
        u,
        v,
        sigma: dec.singular_values,
        rank: r,
        epsilon,
    })
}

pub fn format_complex(z: C64) -> String {
    format!("{:.16e}{:+.16e}j", z.re, z.im)
}

pub fn parse_complex(s: &str) -> Result<C64> {
    let t = s.trim();
    let bad = || Error::Format(format!("malformed complex entry '{s}'"));
    let Some(body) = t.strip_suffix('j').or_else(|| t.strip_suffix('i')) else {
        return t.parse::<f64>().map(|re| C64::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&p| matches!(bytes[p], b'+' | b'-') && !matches!(bytes[p - 1], b'e' | b'E'))
        .ok_or_else(bad)?;
    let re = body[..split].parse::<f64>().map_err(|_| bad())?;
    let im = body[split..].parse::<f64>().map_err(|_| bad())?;
    Ok(C64::new(re, im))
}

/// One matrix row per line, entries `re+imj`.
pub fn write_matrix_csv<W: Write>(m: &DenseMatrix, mut w: W) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows: Vec<Vec<C64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        let row = rec
            .iter()
            .map(|f| parse_complex(f).map_err(|e| Error::Format(format!("line {line}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {line}: expected {} entries, got {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("matrix file is empty".into()));
    }
    let (m, n) = (rows.len(), rows[0].len());
    DenseMatrix::from_fn(m, n, |i, j| rows[i][j])
}
