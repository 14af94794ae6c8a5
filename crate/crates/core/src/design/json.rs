use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

use super::{DiagnosticReport, QuadratureRule, RuleType, Weights};
use crate::families::{FamilyKind, FunctionFamily};
use crate::{Error, Result, C64};

pub(crate) type Num = Box<RawValue>;

/// 17 significant digits; non-finite values become `null`.
pub(crate) fn num(v: f64) -> Num {
    let text = if v.is_finite() { format!("{v:.16e}") } else { "null".to_string() };
    RawValue::from_string(text).expect("valid JSON number")
}

#[derive(Serialize)]
#[serde(untagged)]
pub(crate) enum WeightOut {
    Real(Num),
    Complex([Num; 2]),
}

/// Weights are written as plain numbers when every imaginary part is
/// rounding noise (at most `1e-12` of the largest modulus).
pub(crate) fn weights_out(w: &[C64]) -> Vec<WeightOut> {
    let top = w.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let real = w.iter().all(|z| z.im.abs() <= 1e-12 * top);
    w.iter()
        .map(|z| if real { WeightOut::Real(num(z.re)) } else { WeightOut::Complex([num(z.re), num(z.im)]) })
        .collect()
}

#[derive(Serialize)]
pub(crate) struct FamilyOut {
    kind: &'static str,
    x_interval: [Num; 2],
    k_interval: [Num; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_step: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    arg_scale: Option<Num>,
}

pub(crate) fn family_out(f: &FunctionFamily) -> FamilyOut {
    FamilyOut {
        kind: f.kind.name(),
        x_interval: f.x_interval.map(num),
        k_interval: f.k_interval.map(num),
        grid_step: f.grid_step.map(num),
        arg_scale: (f.arg_scale != 1.0).then(|| num(f.arg_scale)),
    }
}

#[derive(Serialize)]
pub(crate) struct DiagOut {
    eigen_imag_max: Num,
    position_residual: Num,
    gram_residual: Num,
    accepted: bool,
    epsilon: Option<Num>,
    rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    orthogonality_residual: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_agreement: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
}

pub(crate) fn diag_out(d: &DiagnosticReport) -> DiagOut {
    DiagOut {
        eigen_imag_max: num(d.eigen_imag_max),
        position_residual: num(d.position_residual),
        gram_residual: num(d.gram_residual),
        accepted: d.accepted,
        epsilon: d.epsilon.map(num),
        rank: d.rank,
        rejected_reason: d.rejected_reason.clone(),
        orthogonality_residual: d.orthogonality_residual.map(num),
        weight_agreement: d.weight_agreement.map(num),
        iterations: d.iterations,
        converged: d.converged,
    }
}

#[derive(Serialize)]
struct RuleOut {
    version: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    family: Option<FamilyOut>,
    interval: [Num; 2],
    nodes: Vec<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<WeightOut>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_matrix: Option<Vec<Vec<WeightOut>>>,
    diagnostics: DiagOut,
}

/// Pretty-printed rule JSON; deterministic for a given rule.
pub fn rule_json(rule: &QuadratureRule) -> String {
    let (weights, weight_matrix) = match &rule.weights {
        Weights::Scalar(w) => (Some(weights_out(w)), None),
        Weights::Matrix(w) => {
            let rows: Vec<Vec<WeightOut>> = w.row_iter().map(|r| weights_out(&r.iter().copied().collect::<Vec<_>>())).collect();
            (None, Some(rows))
        }
    };
    let out = RuleOut {
        version: 1,
        kind: match rule.rule_type {
            RuleType::Type2 => "type2",
            RuleType::Type3 => "type3",
        },
        family: rule.family.as_ref().map(family_out),
        interval: rule.interval.map(num),
        nodes: rule.nodes.iter().map(|&x| num(x)).collect(),
        weights,
        weight_matrix,
        diagnostics: diag_out(&rule.diagnostics),
    };
    serde_json::to_string_pretty(&out).expect("serializable") + "\n"
}

#[derive(Deserialize)]
pub(crate) struct FamilyIn {
    kind: String,
    x_interval: [f64; 2],
    k_interval: [f64; 2],
    grid_step: Option<f64>,
    arg_scale: Option<f64>,
}

impl FamilyIn {
    pub(crate) fn into_family(self) -> Result<FunctionFamily> {
        let mut f = crate::families::make_family(FamilyKind::parse(&self.kind)?, self.x_interval, self.k_interval)?;
        if let Some(h) = self.grid_step {
            f = f.with_grid_step(h)?;
        }
        if let Some(s) = self.arg_scale {
            f.arg_scale = s;
        }
        Ok(f)
    }
}

#[derive(Deserialize)]
pub(crate) struct DiagIn {
    eigen_imag_max: Option<f64>,
    position_residual: Option<f64>,
    gram_residual: Option<f64>,
    accepted: bool,
    epsilon: Option<f64>,
    rank: Option<usize>,
    rejected_reason: Option<String>,
    orthogonality_residual: Option<f64>,
    weight_agreement: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

impl DiagIn {
    pub(crate) fn into_report(self) -> DiagnosticReport {
        DiagnosticReport {
            eigen_imag_max: self.eigen_imag_max.unwrap_or(f64::NAN),
            position_residual: self.position_residual.unwrap_or(f64::NAN),
            gram_residual: self.gram_residual.unwrap_or(f64::NAN),
            accepted: self.accepted,
            rejected_reason: self.rejected_reason,
            epsilon: self.epsilon,
            rank: self.rank,
            orthogonality_residual: self.orthogonality_residual,
            weight_agreement: self.weight_agreement,
            iterations: self.iterations,
            converged: self.converged,
            ..Default::default()
        }
    }
}

#[derive(Deserialize)]
struct RuleIn {
    version: u32,
    #[serde(rename = "type")]
    kind: String,
    family: Option<FamilyIn>,
    interval: [f64; 2],
    nodes: Vec<f64>,
    weights: Option<Vec<Value>>,
    weight_matrix: Option<Vec<Vec<Value>>>,
    diagnostics: DiagIn,
}

pub(crate) fn weight_in(v: &Value) -> Result<C64> {
    match v {
        Value::Number(n) => Ok(C64::new(n.as_f64().unwrap_or(f64::NAN), 0.0)),
        Value::Array(p) if p.len() == 2 => match (p[0].as_f64(), p[1].as_f64()) {
            (Some(re), Some(im)) => Ok(C64::new(re, im)),
            _ => Err(Error::Format(format!("weight {v} is not [re, im]"))),
        },
        _ => Err(Error::Format(format!("weight {v} is neither a number nor [re, im]"))),
    }
}

pub fn read_rule_json(text: &str) -> Result<QuadratureRule> {
    let r: RuleIn = serde_json::from_str(text)?;
    if r.version != 1 {
        return Err(Error::Format(format!("unsupported rule version {}", r.version)));
    }
    let rule_type = match r.kind.as_str() {
        "type2" => RuleType::Type2,
        "type3" => RuleType::Type3,
        other => return Err(Error::Format(format!("unknown rule type {other:?}"))),
    };
    let weights = match (r.weights, r.weight_matrix) {
        (Some(w), None) => Weights::Scalar(w.iter().map(weight_in).collect::<Result<_>>()?),
        (None, Some(rows)) => {
            let m = rows.len();
            let c = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != c) || c != r.nodes.len() {
                return Err(Error::Format("weight_matrix rows must all have one entry per node".into()));
            }
            let flat: Vec<C64> = rows.iter().flatten().map(weight_in).collect::<Result<_>>()?;
            Weights::Matrix(DMatrix::from_row_slice(m, c, &flat))
        }
        _ => return Err(Error::Format("rule needs exactly one of weights / weight_matrix".into())),
    };
    if let Weights::Scalar(w) = &weights {
        if w.len() != r.nodes.len() {
            return Err(Error::Format(format!("{} nodes but {} weights", r.nodes.len(), w.len())));
        }
    }
    Ok(QuadratureRule {
        rule_type,
        family: r.family.map(FamilyIn::into_family).transpose()?,
        interval: r.interval,
        nodes: r.nodes,
        weights,
        diagnostics: r.diagnostics.into_report(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::make_family;

    fn sample() -> QuadratureRule {
        QuadratureRule {
            rule_type: RuleType::Type2,
            family: Some(make_family(FamilyKind::PowerXk, [0.0, 1.0], [-1.0 / 3.0, 0.5]).unwrap()),
            interval: [0.0, 1.0],
            nodes: vec![0.1, 1.0 / 3.0],
            weights: Weights::Scalar(vec![C64::new(0.25, 1e-20), C64::new(std::f64::consts::PI, 0.0)]),
            diagnostics: DiagnosticReport {
                accepted: true,
                epsilon: Some(1e-12),
                rank: Some(2),
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rule = sample();
        let text = rule_json(&rule);
        assert!(text.contains("\"type\": \"type2\""));
        assert!(text.contains("3.3333333333333331e-1"));
        let back = read_rule_json(&text).unwrap();
        assert_eq!(back.nodes, rule.nodes);
        assert_eq!(back.family, rule.family);
        assert_eq!(back.weights.real().unwrap(), vec![0.25, std::f64::consts::PI]);
        assert_eq!(rule_json(&back), text);
    }

    #[test]
    fn complex_and_matrix_weights() {
        let mut rule = sample();
        rule.weights = Weights::Scalar(vec![C64::new(1.0, 0.5), C64::new(2.0, -1.0)]);
        let back = read_rule_json(&rule_json(&rule)).unwrap();
        assert_eq!(back.weights, rule.weights);
        rule.rule_type = RuleType::Type3;
        rule.weights = Weights::Matrix(DMatrix::from_fn(3, 2, |i, j| C64::new((i + 2 * j) as f64, 0.0)));
        let text = rule_json(&rule);
        assert!(text.contains("weight_matrix"));
        assert_eq!(read_rule_json(&text).unwrap().weights, rule.weights);
    }

    #[test]
    fn malformed_input() {
        assert!(read_rule_json("{}").is_err());
        let text = rule_json(&sample()).replace("\"version\": 1", "\"version\": 7");
        assert!(read_rule_json(&text).is_err());
    }
}
