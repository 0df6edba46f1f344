use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use robust_trim::bounds::{compute_report, BoundInputs, BoundOptions, BoundReport, SigmaMode};
use robust_trim::{Coefficients, TrimPenaltyConfig};

use crate::exit::{self, Failure};
use crate::io::{read_coefficients, to_json, write_output};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SigmaArg {
    /// Noise level treated as known.
    Known,
    /// Noise level estimated from the data; the failure probability is split three ways.
    Estimated,
}

impl From<SigmaArg> for SigmaMode {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::Known => SigmaMode::Known,
            SigmaArg::Estimated => SigmaMode::Estimated,
        }
    }
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Sample size.
    #[arg(long)]
    n: usize,
    /// Number of coefficients including the intercept [required without --beta0-file].
    #[arg(long)]
    p: Option<usize>,
    /// Trimming size [default: ceil(0.75 n)].
    #[arg(long)]
    h: Option<usize>,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Failure probability; bounds hold with probability at least 1 - delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// l1 norm of the true coefficients [required without --beta0-file].
    #[arg(long)]
    norm_beta0: Option<f64>,
    /// Number of nonzero true coefficients, if known.
    #[arg(long)]
    s0: Option<usize>,
    /// JSON file with the true coefficients (bare array or a report with a
    /// `coefficients` field); sets p, the l1 norm and s0.
    #[arg(long, conflicts_with_all = ["p", "norm_beta0", "s0"])]
    beta0_file: Option<PathBuf>,
    /// lambda2 override in [0, q1]; 0 selects the lasso bounds and the
    /// sparse estimation bound [default: q1].
    #[arg(long)]
    lambda2: Option<f64>,
    /// Whether the noise level is known or estimated.
    #[arg(long, value_enum, default_value_t = SigmaArg::Known)]
    sigma_mode: SigmaArg,
    /// Noise level used in eta [default: --sigma].
    #[arg(long)]
    sigma_hat: Option<f64>,
    /// Incoherence level [default: max(s0, (p - s0)/20), at least 1].
    #[arg(long)]
    k: Option<usize>,
    /// Realized trimmed prediction error, to evaluate the estimation bound.
    #[arg(long)]
    mse: Option<f64>,
    /// Output JSON file [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema_version: u32,
    command: &'static str,
    #[serde(flatten)]
    report: &'a BoundReport,
}

pub fn run(args: BoundsArgs) -> Result<u8, Failure> {
    let h = args.h.unwrap_or_else(|| TrimPenaltyConfig::default_h(args.n));
    let inputs = match &args.beta0_file {
        Some(path) => {
            let beta0 = Coefficients::new(read_coefficients(path)?).map_err(|e| Failure::data(e.to_string()))?;
            BoundInputs::from_beta0(&beta0, args.n, h, args.sigma, args.delta)?
        }
        None => {
            let p = args.p.ok_or_else(|| Failure::usage("--p is required without --beta0-file"))?;
            let norm = args
                .norm_beta0
                .ok_or_else(|| Failure::usage("--norm-beta0 is required without --beta0-file"))?;
            BoundInputs::new(args.n, p, h, args.sigma, args.delta, norm, args.s0)?
        }
    };
    let opts = BoundOptions {
        lambda2_override: args.lambda2,
        sigma_mode: args.sigma_mode.into(),
        sigma_hat: args.sigma_hat,
        k: args.k,
        mse: args.mse,
        incoherence_deviation: None,
    };
    let report = compute_report(&inputs, &opts)?;
    let envelope = Envelope { schema_version: 1, command: "bounds", report: &report };
    write_output(args.output.as_ref(), &to_json(&envelope)?)?;
    Ok(exit::OK)
}
