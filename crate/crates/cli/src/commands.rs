use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use gramquad::design::{
    design_direct, design_folded, design_from_trace, design_radau, localize_targets, read_rule_json, rule_json,
    synthetic_targets, Endpoint, EndpointConfig, QuadratureRule, Scattering, Thresholds, Weights,
};
use gramquad::families::{factor_space, make_family, FamilyKind, FoldKind, FunctionFamily, MinimalFunction, SampledFamily};
use gramquad::gramian::{fold_signal, read_matrix_csv, write_matrix_csv, SignalTrace, WeightSpec};
use gramquad::numerics::Domain2D;
use gramquad::quad2d::{design_2d_deflation, node_budget, rule2d_json, Config2D, Node2D, Outcome2D, Weight2D};
use gramquad::verify::error_curve;
use gramquad::Error;

use crate::args::{Cli, Command, Design2dArgs, DesignArgs, FoldArgs, LocalizeArgs, ThresholdArgs, VerifyArgs, WeightArgs};
use crate::{EXIT_NOT_CONVERGED, EXIT_OK, EXIT_REJECTED};

type Result<T> = std::result::Result<T, String>;

pub const ORACLE_TOL_VAR: &str = "QUAD_ORACLE_TOL";
const DEFAULT_ORACLE_TOL: f64 = 1e-13;

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Fold(a) => cmd_fold(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Design2d(a) => cmd_design2d(a),
    }
}

fn lib(e: Error) -> String {
    e.to_string()
}

fn oracle_tol() -> Result<f64> {
    match std::env::var(ORACLE_TOL_VAR) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(t),
            _ => Err(format!("{ORACLE_TOL_VAR}: expected a positive number, got '{v}'")),
        },
        Err(_) => Ok(DEFAULT_ORACLE_TOL),
    }
}

fn thresholds(t: &ThresholdArgs) -> Thresholds {
    Thresholds {
        tol_imag: t.tol_imag,
        tol_pos: t.tol_pos,
        tol_gram: t.tol_gram,
        ..Thresholds::default()
    }
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

fn family_kind(s: &str) -> Result<FamilyKind> {
    FamilyKind::parse(s).map_err(|e| format!("--family: {e}"))
}

fn check_readable(p: &Path, flag: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(format!("{flag}: cannot read '{}'", p.display()))
    }
}

fn check_writable(p: &Option<PathBuf>, flag: &str) -> Result<()> {
    if let Some(p) = p {
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            return Err(format!("{flag}: directory '{}' does not exist", dir.display()));
        }
    }
    Ok(())
}

fn read_text(p: &Path, flag: &str) -> Result<String> {
    fs::read_to_string(p).map_err(|e| format!("{flag}: {}: {e}", p.display()))
}

/// Writes to `path`, or standard output.
fn emit(path: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let mut w = BufWriter::new(f);
            write(&mut w).and_then(|_| w.flush()).map_err(|e| format!("{}: {e}", p.display()))
        }
        None => {
            let out = io::stdout();
            let mut lock = out.lock();
            write(&mut lock).map_err(|e| e.to_string())
        }
    }
}

fn weight_spec(w: &WeightArgs, interval: [f64; 2]) -> Result<WeightSpec> {
    let spec = match &w.weight_file {
        Some(p) => {
            check_readable(p, "--weight-file")?;
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(p)
                .map_err(|e| format!("--weight-file: {e}"))?;
            let (mut xs, mut us) = (Vec::new(), Vec::new());
            for (i, rec) in rdr.records().enumerate() {
                let line = i + 2;
                let rec = rec.map_err(|e| format!("--weight-file: line {line}: {e}"))?;
                let num = |j: usize| -> Result<f64> {
                    rec.get(j)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| format!("--weight-file: line {line}: expected two numbers"))
                };
                xs.push(num(0)?);
                us.push(num(1)?);
            }
            WeightSpec::samples(xs, us).map_err(|e| format!("--weight-file: {e}"))?
        }
        None => WeightSpec::parse(&w.weight).map_err(|e| format!("--weight: {e}"))?,
    };
    let spec = spec.detect_positivity(interval[0], interval[1]);
    spec.validate_on(interval[0], interval[1]).map_err(|e| format!("--weight: {e}"))?;
    Ok(spec)
}

fn print_rule_summary(out: &mut dyn Write, rule: &QuadratureRule) -> io::Result<()> {
    let d = &rule.diagnostics;
    writeln!(out, "accepted: {}", d.accepted)?;
    if let Some(r) = &d.rejected_reason {
        writeln!(out, "reason: {r}")?;
    }
    writeln!(out, "nodes: {}", rule.len())?;
    if let Some(r) = d.rank {
        writeln!(out, "rank: {r}")?;
    }
    match &rule.weights {
        Weights::Scalar(w) => {
            for (x, w) in rule.nodes.iter().zip(w) {
                if w.im == 0.0 {
                    writeln!(out, "  {x:>24.16e}  {:>24.16e}", w.re)?;
                } else {
                    writeln!(out, "  {x:>24.16e}  {:>24.16e} {:+.3e}i", w.re, w.im)?;
                }
            }
        }
        Weights::Matrix(w) => {
            writeln!(out, "weight matrix: {} x {}", w.nrows(), w.ncols())?;
            for x in &rule.nodes {
                writeln!(out, "  {x:>24.16e}")?;
            }
        }
    }
    writeln!(
        out,
        "eigen_imag_max: {:.3e}  position_residual: {:.3e}  gram_residual: {:.3e}",
        d.eigen_imag_max, d.position_residual, d.gram_residual
    )?;
    for note in &d.discarded {
        writeln!(out, "discarded: {note}")?;
    }
    Ok(())
}

/// The rule JSON goes to `--out` (summary to stdout) or to stdout (summary to stderr).
fn finish_rule(rule: &QuadratureRule, out: &Option<PathBuf>) -> Result<u8> {
    let json = rule_json(rule);
    emit(out, |w| w.write_all(json.as_bytes()))?;
    if out.is_some() {
        print_rule_summary(&mut io::stdout().lock(), rule).map_err(|e| e.to_string())?;
    } else {
        print_rule_summary(&mut io::stderr().lock(), rule).map_err(|e| e.to_string())?;
    }
    Ok(if rule.accepted() { EXIT_OK } else { EXIT_REJECTED })
}

fn cmd_design(a: DesignArgs) -> Result<u8> {
    check_writable(&a.out, "--out")?;
    if a.n == Some(0) {
        return Err("--n must be at least 1".into());
    }
    let kind = family_kind(&a.family)?;
    let interval = pair(&a.interval);
    let krange = match (&a.krange, a.n) {
        (Some(k), _) => pair(k),
        (None, Some(n)) if kind.integer_k() => [0.0, (2 * n - 1) as f64],
        (None, _) => return Err(format!("--krange is required for {}", kind.name())),
    };
    let g = make_family(kind, interval, krange).map_err(|e| format!("--family/--interval/--krange: {e}"))?;
    let u = weight_spec(&a.weight, interval)?;
    let th = thresholds(&a.thresholds);
    let tol = oracle_tol()?;

    let mut rule = match (a.n, a.epsilon) {
        (Some(n), None) => {
            let factor = factor_space(&g).map_err(|e| format!("--family: {e}"))?;
            match a.endpoint.as_deref() {
                None => design_direct(&factor, n, &u, tol, &th).map_err(lib)?.rule,
                Some(end) => {
                    let ends = match end {
                        "left" => Endpoint::Left,
                        "right" => Endpoint::Right,
                        _ => Endpoint::Both,
                    };
                    let cfg = EndpointConfig {
                        oracle_tol: tol,
                        ..EndpointConfig::default()
                    };
                    design_radau(&factor, &u, n, ends, &cfg).map_err(lib)?
                }
            }
        }
        (None, Some(eps)) => {
            if a.fold_n < 2 {
                return Err("--fold-n must be at least 2".into());
            }
            design_folded(&g, &u, eps, a.fold_n, tol, &th).map_err(lib)?.rule
        }
        _ => return Err("exactly one of --n and --epsilon is required".into()),
    };
    rule.family = Some(g);
    finish_rule(&rule, &a.out)
}

fn cmd_fold(a: FoldArgs) -> Result<u8> {
    check_readable(&a.signal, "--signal")?;
    check_writable(&a.out, "--out")?;
    check_writable(&a.out_a, "--out-a")?;
    let kind = FoldKind::parse(&a.kind).map_err(|e| format!("--kind: {e}"))?;
    if kind == FoldKind::None {
        return Err("--kind: expected toeplitz, hankel or hyperbolic".into());
    }
    let text = read_text(&a.signal, "--signal")?;
    let trace = SignalTrace::read_csv(text.as_bytes()).map_err(|e| format!("--signal: {e}"))?;
    let n = a.n.unwrap_or(trace.len().div_ceil(2));
    if a.design {
        let fam = a.family.as_deref().ok_or("--design needs --family and --interval")?;
        let interval = pair(a.interval.as_deref().ok_or("--design needs --interval")?);
        let lo = trace.kappa[0];
        let hi = trace.kappa[trace.len() - 1].max(lo + f64::EPSILON.max(lo.abs() * 1e-15));
        let g = make_family(family_kind(fam)?, interval, [lo, hi]).map_err(|e| format!("--family: {e}"))?;
        let design = design_from_trace(trace, &g, kind, a.epsilon, n, None, &thresholds(&a.thresholds)).map_err(lib)?;
        return finish_rule(&design.rule, &a.out);
    }
    let p = fold_signal(&trace, kind, n).map_err(lib)?;
    emit(&a.out, |w| write_matrix_csv(&p.b, w).map_err(io::Error::other))?;
    match (&p.a, &a.out_a) {
        (Some(am), Some(_)) => emit(&a.out_a, |w| write_matrix_csv(am, w).map_err(io::Error::other))?,
        (None, Some(_)) => return Err("--out-a: the signal has no derivative columns, so there is no A".into()),
        _ => {}
    }
    eprintln!("folded into {} x {} ({})", p.rows(), p.cols(), kind.name());
    Ok(EXIT_OK)
}

fn cmd_verify(a: VerifyArgs) -> Result<u8> {
    check_readable(&a.rule, "--rule")?;
    check_writable(&a.out, "--out")?;
    let rule = read_rule_json(&read_text(&a.rule, "--rule")?).map_err(|e| format!("--rule: {e}"))?;
    let base = rule.family;
    let kind = match (&a.family, &base) {
        (Some(f), _) => family_kind(f)?,
        (None, Some(b)) => b.kind,
        (None, None) => return Err("--family is required: the rule records none".into()),
    };
    let interval = a.interval.as_deref().map(pair).unwrap_or(rule.interval);
    let krange = match (&a.krange, &base) {
        (Some(k), _) => pair(k),
        (None, Some(b)) if b.kind == kind => b.k_interval,
        _ => return Err("--krange is required".into()),
    };
    let family: FunctionFamily = match base {
        Some(b) if b.kind == kind => FunctionFamily {
            x_interval: interval,
            k_interval: krange,
            grid_step: None,
            ..b
        },
        _ => make_family(kind, interval, krange).map_err(|e| format!("--family: {e}"))?,
    };
    family.validate().map_err(|e| format!("--family/--interval/--krange: {e}"))?;
    let u = weight_spec(&a.weight, interval)?;
    let curve = error_curve(&rule, &family, &u, Some(krange), a.points).map_err(lib)?;
    emit(&a.out, |w| curve.write_csv(w).map_err(io::Error::other))?;
    let summary = format!("max relative error: {:.3e} over {} points", curve.max_error(), curve.k_grid.len());
    if a.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    if !curve.failed.is_empty() {
        eprintln!("reference failed at {} points", curve.failed.len());
    }
    Ok(EXIT_OK)
}

fn cmd_localize(a: LocalizeArgs) -> Result<u8> {
    let loc = if let Some(r) = a.synthetic {
        let m = a.m.unwrap_or(r + 2);
        let n = a.n.unwrap_or(r + 2);
        let scene = synthetic_targets(r, a.seed, a.matrix_weights, m, n).map_err(lib)?;
        let (t, s) = (scene.row_basis(), scene.col_basis());
        localize_targets(&scene.b, &scene.a, &scene.mu(), a.threshold, Some((&t, &s))).map_err(lib)?
    } else {
        let (bp, ap) = (a.b.as_ref().ok_or("--b is required")?, a.a.as_ref().ok_or("--a is required")?);
        check_readable(bp, "--b")?;
        check_readable(ap, "--a")?;
        let b = read_matrix_csv(read_text(bp, "--b")?.as_bytes()).map_err(|e| format!("--b: {e}"))?;
        let am = read_matrix_csv(read_text(ap, "--a")?.as_bytes()).map_err(|e| format!("--a: {e}"))?;
        if b.shape() != am.shape() {
            return Err(format!("--a is {:?} but --b is {:?}", am.shape(), b.shape()));
        }
        let interval = a.interval.as_deref().map(pair).unwrap_or([0.0, 1.0]);
        let mu = MinimalFunction::identity(interval);
        match &a.probe {
            Some(p) => {
                let kind = family_kind(p).map_err(|e| e.replace("--family", "--probe"))?;
                let upper = b.nrows().max(b.ncols()) as f64;
                let fam = make_family(kind, interval, [0.0, upper]).map_err(|e| format!("--probe: {e}"))?;
                let t = SampledFamily::first(fam, b.nrows()).map_err(lib)?;
                let s = SampledFamily::first(fam, b.ncols()).map_err(lib)?;
                localize_targets(&b, &am, &mu, a.threshold, Some((&t, &s))).map_err(lib)?
            }
            None => localize_targets(&b, &am, &mu, a.threshold, None).map_err(lib)?,
        }
    };
    let mut out = io::stdout().lock();
    let w = |e: io::Error| e.to_string();
    writeln!(out, "targets: {}", loc.positions.len()).map_err(w)?;
    for x in &loc.positions {
        writeln!(out, "{x:.16e}").map_err(w)?;
    }
    writeln!(out, "classification: {}", loc.classification.describe()).map_err(w)?;
    if let Scattering::Scalar(refl) = &loc.classification {
        for z in refl {
            writeln!(out, "reflectivity: {:.16e}", z.re).map_err(w)?;
        }
    }
    Ok(if loc.positions.is_empty() { EXIT_REJECTED } else { EXIT_OK })
}

fn parse_domain(words: &[String]) -> Result<Domain2D> {
    let nums = |s: &[String]| -> Result<Vec<f64>> { s.iter().map(|w| crate::args::parse_number(w).map_err(|e| format!("--domain: {e}"))).collect() };
    match words.first().map(String::as_str) {
        Some("triangle") if words.len() == 7 => {
            let v = nums(&words[1..])?;
            Domain2D::triangle([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]).map_err(|e| format!("--domain: {e}"))
        }
        Some("rectangle") if words.len() == 5 => {
            let v = nums(&words[1..])?;
            let d = Domain2D::Rectangle { x: [v[0], v[1]], y: [v[2], v[3]] };
            d.validate().map_err(|e| format!("--domain: {e}"))?;
            Ok(d)
        }
        _ => Err("--domain: expected 'triangle X0 Y0 X1 Y1 X2 Y2' or 'rectangle X0 X1 Y0 Y1'".into()),
    }
}

fn read_atoms(p: &Path) -> Result<Vec<Node2D>> {
    check_readable(p, "--atoms")?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(p)
        .map_err(|e| format!("--atoms: {e}"))?;
    let mut atoms = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("--atoms: line {line}: {e}"))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| format!("--atoms: line {line}: malformed number '{s}'")))
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(format!("--atoms: line {line}: expected x,y,w"));
        }
        atoms.push(Node2D { x: v[0], y: v[1], w: v[2] });
    }
    Ok(atoms)
}

fn cmd_design2d(a: Design2dArgs) -> Result<u8> {
    if a.degree == 0 {
        return Err("--degree must be at least 1".into());
    }
    let n = a.degree.div_ceil(2);
    let budget = node_budget(n);
    if a.budget_only {
        println!("n: {n}");
        println!("dim_n: {}", budget.dim_n);
        println!("dim_2n: {}", budget.dim_2n);
        println!("min_nodes: {}", budget.min_nodes);
        println!("eigen_nodes: {}", budget.eigen_nodes);
        println!("extra_nodes: {}", budget.extra_nodes);
        return Ok(EXIT_OK);
    }
    check_writable(&a.out, "--out")?;
    let domain = parse_domain(a.domain.as_deref().unwrap_or_default())?;
    let u = match &a.atoms {
        Some(p) => {
            let atoms = read_atoms(p)?;
            if let Some(bad) = atoms.iter().find(|t| !domain.contains([t.x, t.y], 1e-12)) {
                return Err(format!("--atoms: ({}, {}) lies outside the domain", bad.x, bad.y));
            }
            Weight2D::Atoms(atoms)
        }
        None => Weight2D::Constant(a.weight),
    };
    let init = if a.init.is_empty() {
        None
    } else {
        let pts: Vec<[f64; 2]> = a.init.chunks(2).map(|c| [c[0], c[1]]).collect();
        if pts.len() != budget.extra_nodes {
            return Err(format!("--init: {} points given, the budget has {} extra nodes", pts.len(), budget.extra_nodes));
        }
        Some(pts)
    };
    let cfg = Config2D {
        init_nodes: init,
        max_iter: a.max_iter,
        tol: a.tol,
        oracle_tol: std::env::var(ORACLE_TOL_VAR).is_ok().then(oracle_tol).transpose()?.unwrap_or(Config2D::default().oracle_tol),
        ..Config2D::default()
    };
    let rule = design_2d_deflation(n, &domain, &u, &cfg, &thresholds(&a.thresholds)).map_err(lib)?;
    let json = rule2d_json(&rule);
    emit(&a.out, |w| w.write_all(json.as_bytes()))?;
    let mut log: Box<dyn Write> = if a.out.is_some() { Box::new(io::stdout()) } else { Box::new(io::stderr()) };
    let w = |e: io::Error| e.to_string();
    writeln!(log, "outcome: {:?}", rule.outcome).map_err(w)?;
    if let Some(r) = &rule.reason {
        writeln!(log, "reason: {r}").map_err(w)?;
    }
    writeln!(log, "nodes: {}  iterations: {}  moment_error: {:.3e}", rule.nodes.len(), rule.iterations, rule.moment_error).map_err(w)?;
    for p in &rule.nodes {
        writeln!(log, "  {:>24.16e} {:>24.16e}  {:>24.16e}", p.x, p.y, p.w).map_err(w)?;
    }
    Ok(match rule.outcome {
        Outcome2D::Accepted => EXIT_OK,
        Outcome2D::Rejected => EXIT_REJECTED,
        Outcome2D::NotConverged => EXIT_NOT_CONVERGED,
    })
}
