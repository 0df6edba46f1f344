use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use robust_trim::enet::lambda1_max;
use robust_trim::lts::{fit_cstep, fit_exact, fit_path, refine_from, DEFAULT_STARTS, DEFAULT_SUBSET_CAP};
use robust_trim::{Coefficients, FitResult, Method, TrimPenaltyConfig, TrimSet};

use crate::exit::{self, Failure};
use crate::io::{dataset_from_table, read_coefficients, read_table, to_json, write_output, Loaded};

const SCHEMA_VERSION: u32 = 1;

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Input CSV with a header row and numeric columns.
    #[arg(long, short)]
    input: PathBuf,
    /// Response column [default: last column].
    #[arg(long)]
    response: Option<String>,
    /// Do not add an intercept; the first predictor column must be all ones.
    #[arg(long)]
    no_intercept: bool,
    /// Trimming size: residuals kept in the loss [default: ceil(0.75 n)].
    #[arg(long)]
    h: Option<usize>,
    /// Leave the intercept out of the penalty.
    #[arg(long)]
    exempt_intercept: bool,
    /// Convergence and KKT tolerance of the inner solver.
    #[arg(long, default_value_t = TrimPenaltyConfig::DEFAULT_TOL)]
    tol: f64,
    /// Sweep cap of the inner solver.
    #[arg(long, default_value_t = TrimPenaltyConfig::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Random starts for the C-step solver.
    #[arg(long, default_value_t = DEFAULT_STARTS)]
    starts: usize,
    /// Seed for the random starting subsets.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// l1 penalty weight.
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    /// Squared l2 penalty weight.
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    /// Enumerate every h-subset for the global minimizer.
    #[arg(long)]
    exact: bool,
    /// Largest number of subsets the exact solver may enumerate.
    #[arg(long, default_value_t = DEFAULT_SUBSET_CAP)]
    subset_cap: u64,
    /// Run C-steps from the coefficients of an earlier fit report.
    #[arg(long, conflicts_with = "exact")]
    warm_start: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated, strictly decreasing lambda1 values [default: log grid from the data].
    #[arg(long, value_delimiter = ',')]
    lambda1_grid: Option<Vec<f64>>,
    /// Points in the default log grid.
    #[arg(long, default_value_t = 20)]
    grid_size: usize,
    /// Smallest over largest lambda1 in the default grid.
    #[arg(long, default_value_t = 1e-3)]
    min_ratio: f64,
    /// lambda2 = ratio * lambda1 at every grid point.
    #[arg(long, default_value_t = 0.0)]
    lambda2_ratio: f64,
}

#[derive(Serialize)]
struct ResolvedData {
    input: String,
    response: String,
    add_intercept: bool,
    n: usize,
    p: usize,
    h: usize,
    gamma: f64,
    penalize_intercept: bool,
    tol: f64,
    max_iter: usize,
    starts: usize,
    seed: u64,
}

#[derive(Serialize)]
struct FitConfigEcho {
    #[serde(flatten)]
    data: ResolvedData,
    lambda1: f64,
    lambda2: f64,
    exact: bool,
    subset_cap: u64,
    warm_start: Option<String>,
}

#[derive(Serialize)]
struct Diagnostics {
    starts_used: usize,
    cstep_iterations: usize,
    unique_flag: Option<bool>,
    kkt_residual: f64,
    min_norm_fallback: bool,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct FitBody {
    coefficient_names: Vec<String>,
    coefficients: Vec<f64>,
    /// 1-based row numbers of the kept observations.
    trim_indices: Vec<usize>,
    objective: f64,
    method: Method,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    command: &'static str,
    config: FitConfigEcho,
    #[serde(flatten)]
    fit: FitBody,
}

#[derive(Serialize)]
struct PathPoint {
    lambda1: f64,
    lambda2: f64,
    #[serde(flatten)]
    fit: FitBody,
}

#[derive(Serialize)]
struct PathReport {
    schema_version: u32,
    command: &'static str,
    config: ResolvedData,
    lambda2_ratio: f64,
    entries: Vec<PathPoint>,
}

fn one_based(trim: &TrimSet) -> Vec<usize> {
    trim.indices().iter().map(|i| i + 1).collect()
}

fn body(names: &[String], fit: FitResult) -> FitBody {
    FitBody {
        coefficient_names: names.to_vec(),
        coefficients: fit.beta.as_slice().to_vec(),
        trim_indices: one_based(&fit.trim),
        objective: fit.objective_value,
        method: fit.method,
        diagnostics: Diagnostics {
            starts_used: fit.starts_used,
            cstep_iterations: fit.cstep_iterations,
            unique_flag: fit.unique_flag,
            kkt_residual: fit.kkt_residual,
            min_norm_fallback: fit.min_norm_fallback,
            seed: fit.seed,
        },
    }
}

fn load(args: &DataArgs) -> Result<(Loaded, TrimPenaltyConfig, ResolvedData), Failure> {
    let table = read_table(&args.input)?;
    let loaded = dataset_from_table(&table, args.response.as_deref(), !args.no_intercept)?;
    let n = loaded.data.n();
    let h = args.h.unwrap_or_else(|| TrimPenaltyConfig::default_h(n));
    let mut cfg = TrimPenaltyConfig::new(h, 0.0, 0.0);
    cfg.tol = args.tol;
    cfg.max_iter = args.max_iter;
    cfg.penalize_intercept = !args.exempt_intercept;
    cfg.validate(n)?;
    if !(args.tol > 0.0) || args.max_iter == 0 || args.starts == 0 {
        return Err(Failure::usage("--tol, --max-iter and --starts must be positive"));
    }
    let echo = ResolvedData {
        input: args.input.display().to_string(),
        response: loaded.response.clone(),
        add_intercept: !args.no_intercept,
        n,
        p: loaded.data.p(),
        h,
        gamma: cfg.gamma,
        penalize_intercept: cfg.penalize_intercept,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        starts: args.starts,
        seed: args.seed,
    };
    Ok((loaded, cfg, echo))
}

fn check_lambdas(l1: f64, l2: f64) -> Result<(), Failure> {
    if !(l1 >= 0.0 && l1.is_finite() && l2 >= 0.0 && l2.is_finite()) {
        return Err(Failure::usage("--lambda1 and --lambda2 must be finite and nonnegative"));
    }
    Ok(())
}

pub fn run_fit(args: FitArgs) -> Result<u8, Failure> {
    check_lambdas(args.lambda1, args.lambda2)?;
    let (loaded, base, echo) = load(&args.data)?;
    let cfg = base.with_lambdas(args.lambda1, args.lambda2);
    let data = &loaded.data;
    let fit = if let Some(path) = &args.warm_start {
        let values = read_coefficients(path)?;
        if values.len() != data.p() {
            return Err(Failure::data(format!(
                "warm start has {} coefficients, the design has {}",
                values.len(),
                data.p()
            )));
        }
        let beta = Coefficients::new(values).map_err(|e| Failure::data(e.to_string()))?;
        refine_from(data, &beta, &cfg)?
    } else if args.exact {
        fit_exact(data, &cfg, args.subset_cap)?
    } else {
        fit_cstep(data, &cfg, args.data.starts, args.data.seed)?
    };
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        config: FitConfigEcho {
            data: echo,
            lambda1: args.lambda1,
            lambda2: args.lambda2,
            exact: args.exact,
            subset_cap: args.subset_cap,
            warm_start: args.warm_start.as_ref().map(|p| p.display().to_string()),
        },
        fit: body(&loaded.coefficient_names, fit),
    };
    write_output(args.data.output.as_ref(), &to_json(&report)?)?;
    Ok(exit::OK)
}

fn default_grid(top: f64, size: usize, min_ratio: f64) -> Result<Vec<f64>, Failure> {
    if size == 0 || !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Failure::usage("--grid-size must be positive and --min-ratio in (0, 1)"));
    }
    if !(top > 0.0) {
        return Err(Failure::data("the response is orthogonal to every column; the path is identically zero"));
    }
    if size == 1 {
        return Ok(vec![top]);
    }
    let step = min_ratio.ln() / (size - 1) as f64;
    Ok((0..size).map(|k| top * (step * k as f64).exp()).collect())
}

pub fn run_path(args: PathArgs) -> Result<u8, Failure> {
    let (loaded, cfg, echo) = load(&args.data)?;
    let data = &loaded.data;
    let grid = match &args.lambda1_grid {
        Some(g) => g.clone(),
        None => default_grid(lambda1_max(data, &TrimSet::all(data.n())), args.grid_size, args.min_ratio)?,
    };
    let path = fit_path(data, &cfg, &grid, args.lambda2_ratio, args.data.starts, args.data.seed)?;
    let report = PathReport {
        schema_version: SCHEMA_VERSION,
        command: "fit-path",
        config: echo,
        lambda2_ratio: args.lambda2_ratio,
        entries: path
            .entries
            .into_iter()
            .map(|e| PathPoint {
                lambda1: e.lambda1,
                lambda2: e.lambda2,
                fit: body(&loaded.coefficient_names, e.fit),
            })
            .collect(),
    };
    write_output(args.data.output.as_ref(), &to_json(&report)?)?;
    Ok(exit::OK)
}
