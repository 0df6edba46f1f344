use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use robust_trim::simulate::{chi_square_tail_check, subgaussian_max_check, TailCheck};

use crate::exit::{self, Failure};
use crate::io::write_output;

const MIN_REPS: usize = 1000;

#[derive(Args, Debug)]
pub struct TailArgs {
    /// Chi-square degrees of freedom to check.
    #[arg(long, value_delimiter = ',', default_value = "5,20,100")]
    df: Vec<usize>,
    /// Deviation levels t; each tail bound is exp(-t).
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    t: Vec<f64>,
    /// Chi-square draws per cell.
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    /// Sample size of the sub-Gaussian maximum check.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Columns (with intercept) of the sub-Gaussian maximum check.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Kept rows of the sub-Gaussian maximum check.
    #[arg(long, default_value_t = 75)]
    h: usize,
    /// Noise standard deviation of the sub-Gaussian maximum check.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Failure probability setting the threshold of the maximum check.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Noise draws for the sub-Gaussian maximum check.
    #[arg(long, default_value_t = 10_000)]
    max_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output table file [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn line(out: &mut String, check: &str, params: &str, c: &TailCheck) -> bool {
    let limit = c.level + 3.0 * c.standard_error();
    let ok = c.passes();
    let _ = writeln!(
        out,
        "{check:<16} {params:<28} {:>10.6} {:>10.6} {:>10.6} {}",
        c.rate,
        c.level,
        limit,
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

pub fn run(args: TailArgs) -> Result<u8, Failure> {
    if args.reps < MIN_REPS || args.max_reps < MIN_REPS {
        return Err(Failure::usage(format!("--reps and --max-reps must be at least {MIN_REPS}")));
    }
    if args.df.is_empty() || args.t.is_empty() {
        return Err(Failure::usage("--df and --t need at least one value"));
    }
    if args.t.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Failure::usage("--t values must be positive"));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:<28} {:>10} {:>10} {:>10} result", "check", "parameters", "rate", "level", "limit");
    let mut all = true;
    let mut cell = 0u64;
    for &h in &args.df {
        for &t in &args.t {
            let c = chi_square_tail_check(h, t, args.reps, args.seed.wrapping_add(cell))?;
            cell += 1;
            let params = format!("df={h} t={t}");
            all &= line(&mut out, "chi2_upper", &params, &c.upper);
            all &= line(&mut out, "chi2_lower", &params, &c.lower);
        }
    }
    let m = subgaussian_max_check(args.n, args.p, args.h, args.sigma, args.delta, args.max_reps, args.seed)?;
    let params = format!("n={} p={} h={} delta={}", args.n, args.p, args.h, args.delta);
    all &= line(&mut out, "subgaussian_max", &params, &m);
    write_output(args.output.as_ref(), out.as_bytes())?;
    Ok(if all { exit::OK } else { exit::VERIFICATION })
}
