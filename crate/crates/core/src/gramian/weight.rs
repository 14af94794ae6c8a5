//! Integration weights `u`.

use super::expr::Expr;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positivity {
    Positive,
    Indefinite,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightForm {
    Expression { source: String, expr: Expr },
    /// Piecewise-linear interpolant of a table.
    Samples { xs: Vec<f64>, values: Vec<f64> },
    /// Point masses `(x_j, w_j)`.
    Atoms(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    pub form: WeightForm,
    pub positivity: Positivity,
}

impl WeightSpec {
    pub fn constant(c: f64) -> Self {
        Self {
            form: WeightForm::Expression {
                source: format!("{c}"),
                expr: Expr::Num(c),
            },
            positivity: if c > 0.0 { Positivity::Positive } else { Positivity::Indefinite },
        }
    }

    /// Parses an expression; positivity stays `Unknown` until
    /// [`WeightSpec::detect_positivity`] is called with an interval.
    pub fn parse(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        let positivity = match expr.constant() {
            Some(c) if c > 0.0 => Positivity::Positive,
            Some(_) => Positivity::Indefinite,
            None => Positivity::Unknown,
        };
        Ok(Self {
            form: WeightForm::Expression {
                source: source.to_string(),
                expr,
            },
            positivity,
        })
    }

    pub fn samples(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != values.len() {
            return Err(Error::Dimension(format!(
                "sample table needs >= 2 matching points, got {} x and {} values",
                xs.len(),
                values.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("sample grid must be strictly increasing".into()));
        }
        if values.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample table has non-finite entries".into()));
        }
        let positivity = classify(values.iter().copied());
        Ok(Self {
            form: WeightForm::Samples { xs, values },
            positivity,
        })
    }

    pub fn atoms(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Dimension("atomic measure needs at least one atom".into()));
        }
        if atoms.iter().any(|&(x, w)| !x.is_finite() || !w.is_finite() || w == 0.0) {
            return Err(Error::Domain("atoms need finite positions and nonzero weights".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        if atoms.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("atom positions must be distinct".into()));
        }
        let positivity = classify(atoms.iter().map(|a| a.1));
        Ok(Self {
            form: WeightForm::Atoms(atoms),
            positivity,
        })
    }

    pub fn is_positive(&self) -> bool {
        self.positivity == Positivity::Positive
    }

    /// Samples the weight on 2001 interior points of `[a, b]` and records
    /// whether it is positive or changes sign there.
    pub fn detect_positivity(mut self, a: f64, b: f64) -> Self {
        if let WeightForm::Expression { .. } = self.form {
            let m = 2001;
            let pts = (1..=m).map(|i| a + (b - a) * i as f64 / (m + 1) as f64);
            self.positivity = classify(pts.map(|x| self.eval(x)));
        }
        self
    }

    pub fn with_positivity(mut self, p: Positivity) -> Self {
        self.positivity = p;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.form {
            WeightForm::Expression { expr, .. } => expr.eval(x),
            WeightForm::Samples { xs, values } => interpolate(xs, values, x),
            // a density is undefined for atoms; integrals use `atoms()` instead
            WeightForm::Atoms(_) => 0.0,
        }
    }

    pub fn atoms_list(&self) -> Option<&[(f64, f64)]> {
        match &self.form {
            WeightForm::Atoms(a) => Some(a),
            _ => None,
        }
    }

    /// Points where the weight is only piecewise smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.form {
            WeightForm::Samples { xs, .. } => xs.clone(),
            _ => Vec::new(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.form {
            WeightForm::Expression { expr, .. } => expr.constant(),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.form {
            WeightForm::Expression { source, .. } => source.clone(),
            WeightForm::Samples { xs, .. } => format!("samples({} points)", xs.len()),
            WeightForm::Atoms(a) => format!("atoms({})", a.len()),
        }
    }

    /// Atoms must lie in `[a, b]`; expressions must be finite inside.
    pub fn validate_on(&self, a: f64, b: f64) -> Result<()> {
        match &self.form {
            WeightForm::Atoms(atoms) => {
                if let Some(&(x, _)) = atoms.iter().find(|&&(x, _)| x < a || x > b) {
                    return Err(Error::Domain(format!("atom at {x} lies outside [{a}, {b}]")));
                }
            }
            WeightForm::Expression { source, expr } => {
                let m = 257;
                for i in 1..=m {
                    let x = a + (b - a) * i as f64 / (m + 1) as f64;
                    if !expr.eval(x).is_finite() {
                        return Err(Error::Domain(format!("weight '{source}' is not finite at x = {x}")));
                    }
                }
            }
            WeightForm::Samples { xs, .. } => {
                if xs[0] > a || xs[xs.len() - 1] < b {
                    return Err(Error::Domain(format!(
                        "sample table [{}, {}] does not cover [{a}, {b}]",
                        xs[0],
                        xs[xs.len() - 1]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn classify(values: impl Iterator<Item = f64>) -> Positivity {
    let mut all_pos = true;
    for v in values {
        if v < 0.0 {
            return Positivity::Indefinite;
        }
        if !(v > 0.0) {
            all_pos = false;
        }
    }
    if all_pos {
        Positivity::Positive
    } else {
        Positivity::Unknown
    }
}

fn interpolate(xs: &[f64], values: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return values[0];
    }
    if x >= xs[n - 1] {
        return values[n - 1];
    }
    let i = xs.partition_point(|&g| g <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    values[i] + t * (values[i + 1] - values[i])
}
