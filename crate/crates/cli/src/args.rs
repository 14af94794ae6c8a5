use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gramquad", version, about = "Quadrature design from Gramian pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design a 1-D rule for a function family and weight.
    Design(DesignArgs),
    /// Fold a sampled moment signal into a Gramian pair, optionally designing from it.
    Fold(FoldArgs),
    /// Error curve of a rule over a family's parameter range.
    Verify(VerifyArgs),
    /// Point-target positions and weight classification from a Gramian pair.
    Localize(LocalizeArgs),
    /// Design a 2-D rule by the deflation iteration.
    Design2d(Design2dArgs),
}

/// Decimal or `p/q`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("malformed number '{s}'"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("malformed number '{s}'"))?;
            if q == 0.0 {
                return Err(format!("zero denominator in '{s}'"));
            }
            p / q
        }
        None => s.parse().map_err(|_| format!("malformed number '{s}'"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number '{s}'"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol_imag: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_pos: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_gram: f64,
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// Weight expression in x (numbers, pi, + - * / ^, sin cos exp log abs sqrt).
    #[arg(long, default_value = "1", conflicts_with = "weight_file")]
    pub weight: String,
    /// Sampled weight: CSV with header `x,u`, linearly interpolated.
    #[arg(long)]
    pub weight_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// monomial, chebyshev, power_xk, exp_ikx, exp_kx, trig, bessel_j
    #[arg(long)]
    pub family: String,
    #[arg(long, required = true, num_args = 2, value_names = ["A", "B"], allow_hyphen_values = true, value_parser = parse_number)]
    pub interval: Vec<f64>,
    /// Parameter range; integer families default to k in [0, 2n-1].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_hyphen_values = true, value_parser = parse_number)]
    pub krange: Option<Vec<f64>>,
    /// Number of nodes (direct design).
    #[arg(long, required_unless_present = "epsilon", conflicts_with = "epsilon")]
    pub n: Option<usize>,
    /// SVD cutoff (folded design; the rank decides the node count).
    #[arg(long, value_parser = parse_number)]
    pub epsilon: Option<f64>,
    /// Fold size for --epsilon: the signal has 2N-1 samples.
    #[arg(long, default_value_t = 40)]
    pub fold_n: usize,
    /// Fixed endpoint nodes (Radau: left/right, Lobatto: both); needs --n.
    #[arg(long, value_parser = ["left", "right", "both"], requires = "n")]
    pub endpoint: Option<String>,
    #[command(flatten)]
    pub weight: WeightArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Rule JSON destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// CSV with header `kappa,s_re,s_im[,sp_re,sp_im]`.
    #[arg(long)]
    pub signal: PathBuf,
    /// toeplitz, hankel, hyperbolic
    #[arg(long)]
    pub kind: String,
    /// Fold size; defaults to the largest the signal allows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Design from the folded pair instead of writing it.
    #[arg(long)]
    pub design: bool,
    #[arg(long, default_value = "1e-12", value_parser = parse_number)]
    pub epsilon: f64,
    /// Family behind the signal (needed with --design).
    #[arg(long, requires = "interval")]
    pub family: Option<String>,
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_hyphen_values = true, value_parser = parse_number)]
    pub interval: Option<Vec<f64>>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Output for B (or the rule JSON with --design).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output for A.
    #[arg(long)]
    pub out_a: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Rule JSON.
    #[arg(long)]
    pub rule: PathBuf,
    /// Family to test against; defaults to the rule's family.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_hyphen_values = true, value_parser = parse_number)]
    pub interval: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_hyphen_values = true, value_parser = parse_number)]
    pub krange: Option<Vec<f64>>,
    #[arg(long, default_value_t = gramquad::verify::DEFAULT_POINTS)]
    pub points: usize,
    #[command(flatten)]
    pub weight: WeightArgs,
    /// Error CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Number of planted targets in a seeded synthetic scene.
    #[arg(long, conflicts_with_all = ["b", "a"])]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Couple the synthetic targets (matrix weights).
    #[arg(long, requires = "synthetic")]
    pub matrix_weights: bool,
    /// Probe counts of the synthetic scene (default r + 2 each).
    #[arg(long, requires = "synthetic")]
    pub m: Option<usize>,
    #[arg(long, requires = "synthetic")]
    pub n: Option<usize>,
    /// Gramian B as CSV (complex entries allowed).
    #[arg(long, requires = "a", required_unless_present = "synthetic")]
    pub b: Option<PathBuf>,
    /// Gramian A as CSV.
    #[arg(long, requires = "b")]
    pub a: Option<PathBuf>,
    /// Interval of the targets for CSV input; mu = x there.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_hyphen_values = true, value_parser = parse_number)]
    pub interval: Option<Vec<f64>>,
    /// Probe family of the CSV Gramians, for weight classification.
    #[arg(long)]
    pub probe: Option<String>,
    /// Relative singular-value cutoff for the target count.
    #[arg(long, default_value = "1e-10", value_parser = parse_number)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct Design2dArgs {
    /// Exactness for polynomials of degree < D; n = ceil(D/2).
    #[arg(long)]
    pub degree: usize,
    /// `triangle X0 Y0 X1 Y1 X2 Y2` or `rectangle X0 X1 Y0 Y1`.
    #[arg(long, num_args = 5..=7, allow_negative_numbers = true, required_unless_present = "budget_only")]
    pub domain: Option<Vec<String>>,
    /// Constant weight.
    #[arg(long, default_value = "1", value_parser = parse_number, conflicts_with = "atoms")]
    pub weight: f64,
    /// Atomic weight: CSV with header `x,y,w`.
    #[arg(long)]
    pub atoms: Option<PathBuf>,
    /// Initial extra node; repeat once per extra node.
    #[arg(long = "init", num_args = 2, value_names = ["X", "Y"], action = clap::ArgAction::Append, allow_hyphen_values = true, value_parser = parse_number)]
    pub init: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value = "1e-10", value_parser = parse_number)]
    pub tol: f64,
    /// Print the node budget and stop.
    #[arg(long)]
    pub budget_only: bool,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
