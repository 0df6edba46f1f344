use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use robust_trim::simulate::{
    run_coverage_experiment, run_robustness_experiment, Claim, ErrorDist, ExperimentSettings, SimConfig,
};

use crate::bounds::SigmaArg;
use crate::exit::{self, Failure};
use crate::io::{csv_bytes, to_json, write_output};

/// Share of failed trials above which the run exits with a solver failure.
const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    /// Tally how often each bound holds.
    Coverage,
    /// Compare the trimmed fit with the untrimmed fit on contaminated data.
    Robustness,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistArg {
    Gaussian,
    /// Uniform on [-sqrt(3) sigma, sqrt(3) sigma].
    BoundedSubgaussian,
}

/// TOML layout: a `[model]` table of data-generating settings and a
/// `[solver]` table of fitting settings. Both are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: SimConfig,
    #[serde(default)]
    solver: ExperimentSettings,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML file with [model] and [solver] tables; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Coverage)]
    mode: Mode,
    /// Sample size [default: 100].
    #[arg(long)]
    n: Option<usize>,
    /// Coefficients including the intercept [default: 20].
    #[arg(long)]
    p: Option<usize>,
    /// Nonzero true coefficients [default: 3].
    #[arg(long)]
    s0: Option<usize>,
    /// Magnitude of each nonzero true coefficient [default: 1].
    #[arg(long)]
    amplitude: Option<f64>,
    /// Noise standard deviation [default: 1].
    #[arg(long)]
    sigma: Option<f64>,
    /// Trimming size [default: 75].
    #[arg(long)]
    h: Option<usize>,
    /// Failure probability [default: 0.1].
    #[arg(long)]
    delta: Option<f64>,
    /// Noise distribution [default: gaussian].
    #[arg(long, value_enum)]
    error_dist: Option<DistArg>,
    /// Fraction of responses replaced by outliers [default: 0].
    #[arg(long)]
    contamination: Option<f64>,
    /// Outlier shift as a multiple of the largest clean |y| [default: 100].
    #[arg(long)]
    magnitude: Option<f64>,
    /// Number of trials [default: 100].
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Random starts per C-step fit [default: 50].
    #[arg(long)]
    starts: Option<usize>,
    /// lambda2 override in [0, q1] [default: q1].
    #[arg(long)]
    lambda2: Option<f64>,
    /// Fixed lambda1,lambda2 pair instead of the q1 rule.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Known or estimated noise level [default: known].
    #[arg(long, value_enum)]
    sigma_mode: Option<SigmaArg>,
    /// Output JSON report [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Per-trial CSV: one row per trial and claim (coverage) or per trial (robustness).
    #[arg(long)]
    trials_csv: Option<PathBuf>,
    /// Plot data CSV: realized error against the prediction bound, sorted by error.
    #[arg(long)]
    plot_csv: Option<PathBuf>,
}

fn resolve(args: &SimulateArgs) -> Result<(SimConfig, ExperimentSettings), Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let mut m = file.model;
    let mut s = file.solver;
    macro_rules! set {
        ($target:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $target = v;
            }
        };
    }
    set!(m.n, args.n);
    set!(m.p, args.p);
    set!(m.s0, args.s0);
    set!(m.beta_amplitude, args.amplitude);
    set!(m.sigma, args.sigma);
    set!(m.h, args.h);
    set!(m.delta, args.delta);
    set!(m.contamination_fraction, args.contamination);
    set!(m.contamination_magnitude, args.magnitude);
    set!(m.n_trials, args.trials);
    set!(m.seed, args.seed);
    set!(s.n_starts, args.starts);
    if let Some(d) = args.error_dist {
        m.error_dist = match d {
            DistArg::Gaussian => ErrorDist::Gaussian,
            DistArg::BoundedSubgaussian => ErrorDist::BoundedSubgaussian,
        };
    }
    if let Some(l2) = args.lambda2 {
        s.lambda2_override = Some(l2);
    }
    if let Some(l) = &args.lambdas {
        let [l1, l2] = l[..] else {
            return Err(Failure::usage("--lambdas takes exactly two values: lambda1,lambda2"));
        };
        s.fixed_lambdas = Some((l1, l2));
    }
    if let Some(mode) = args.sigma_mode {
        s.sigma_mode = mode.into();
    }
    m.validate()?;
    if s.n_starts == 0 {
        return Err(Failure::usage("--starts must be positive"));
    }
    Ok((m, s))
}

fn check_failures(failed: usize, total: usize) -> Result<(), Failure> {
    if failed as f64 > MAX_FAILED_SHARE * total as f64 {
        return Err(Failure::new(
            exit::SOLVER,
            format!("{failed} of {total} trials failed (limit {:.0}%)", MAX_FAILED_SHARE * 100.0),
        ));
    }
    Ok(())
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    command: &'static str,
    mode: &'static str,
    #[serde(flatten)]
    report: T,
}

fn coverage(args: &SimulateArgs, cfg: &SimConfig, settings: &ExperimentSettings) -> Result<u8, Failure> {
    let report = run_coverage_experiment(cfg, settings)?;
    if let Some(path) = &args.trials_csv {
        let mut rows = Vec::new();
        for r in &report.records {
            for c in Claim::ALL {
                let (value, bound) = match c {
                    Claim::Prediction => (Some(r.realized_error), r.prediction_bound),
                    Claim::PredictionLasso => (Some(r.realized_error), r.prediction_bound_lasso),
                    Claim::Cone => (r.cone_gap, r.cone_gap.map(|_| 0.0)),
                    Claim::BasicInequality => (Some(-r.basic_inequality_slack), Some(0.0)),
                    Claim::EstimationHighdim => (Some(r.estimation_error), r.estimation_bound_highdim),
                    Claim::EstimationLowdim => (Some(r.estimation_error), r.estimation_bound_lowdim),
                };
                let outcome = c.outcome(r);
                rows.push(vec![
                    r.trial.to_string(),
                    c.name().to_string(),
                    r.failed.to_string(),
                    outcome.is_some().to_string(),
                    outcome.map(|b| b.to_string()).unwrap_or_default(),
                    if r.failed { String::new() } else { opt(value) },
                    opt(bound),
                ]);
            }
        }
        let bytes = csv_bytes(&["trial", "claim", "failed", "applicable", "held", "value", "bound"], rows)?;
        write_output(Some(path), &bytes)?;
    }
    if let Some(path) = &args.plot_csv {
        let mut points: Vec<_> = report
            .records
            .iter()
            .filter(|r| !r.failed)
            .map(|r| (r.trial, r.realized_error, r.prediction_bound))
            .collect();
        points.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let rows = points
            .into_iter()
            .enumerate()
            .map(|(rank, (t, e, b))| vec![(rank + 1).to_string(), t.to_string(), num(e), opt(b)]);
        write_output(Some(path), &csv_bytes(&["rank", "trial", "realized_error", "prediction_bound"], rows)?)?;
    }
    write_output(
        args.output.as_ref(),
        &to_json(&Envelope { schema_version: 1, command: "simulate", mode: "coverage", report: &report })?,
    )?;
    check_failures(report.failed_trials, report.n_trials)?;
    Ok(exit::OK)
}

fn robustness(args: &SimulateArgs, cfg: &SimConfig, settings: &ExperimentSettings) -> Result<u8, Failure> {
    let report = run_robustness_experiment(cfg, settings)?;
    if let Some(path) = &args.trials_csv {
        let rows = report.records.iter().map(|r| {
            vec![
                r.trial.to_string(),
                num(r.trimmed_error),
                num(r.untrimmed_error),
                r.contaminated.to_string(),
                r.contaminated_in_trim.to_string(),
            ]
        });
        let header = ["trial", "trimmed_error", "untrimmed_error", "contaminated", "contaminated_in_trim"];
        write_output(Some(path), &csv_bytes(&header, rows)?)?;
    }
    if let Some(path) = &args.plot_csv {
        let mut pts: Vec<_> = report.records.iter().map(|r| (r.trial, r.trimmed_error, r.untrimmed_error)).collect();
        pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let rows = pts
            .into_iter()
            .enumerate()
            .map(|(rank, (t, a, b))| vec![(rank + 1).to_string(), t.to_string(), num(a), num(b)]);
        write_output(Some(path), &csv_bytes(&["rank", "trial", "trimmed_error", "untrimmed_error"], rows)?)?;
    }
    write_output(
        args.output.as_ref(),
        &to_json(&Envelope { schema_version: 1, command: "simulate", mode: "robustness", report: &report })?,
    )?;
    check_failures(report.failed_trials, report.n_trials)?;
    Ok(exit::OK)
}

pub fn run(args: SimulateArgs) -> Result<u8, Failure> {
    let (cfg, settings) = resolve(&args)?;
    match args.mode {
        Mode::Coverage => coverage(&args, &cfg, &settings),
        Mode::Robustness => robustness(&args, &cfg, &settings),
    }
}
