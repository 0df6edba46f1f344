//! Synthetic sparse models and Monte Carlo checks of the probabilistic bounds.
//!
//! Trial `t` of a run seeded with `s` draws everything from
//! `stream_rng(s, t)`, so serial and parallel runs agree bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    basic_inequality, cone_gap, estimation_bound_highdim, estimation_bound_lowdim, eta_zeta,
    incoherence_check, log_binomial, mse_trimmed, prediction_bound, prediction_bound_lasso,
    q1_with, q2_q3_with, required_incoherence, select_lambdas, trimmed_design, BoundInputs,
    SigmaMode,
};
use crate::error::{invalid, Result};
use crate::lts::{fit_cstep, fit_exact, subset_count, FitResult, DEFAULT_SUBSET_CAP};
use crate::model::{rescale_columns, residuals, Coefficients, Dataset, TrimPenaltyConfig};
use crate::rng::{stream_rng, stream_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`: variance `sigma^2`.
    BoundedSubgaussian,
}

/// Data-generating process and run size. `p` counts the intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub beta_amplitude: f64,
    pub sigma: f64,
    pub h: usize,
    pub delta: f64,
    pub error_dist: ErrorDist,
    pub contamination_fraction: f64,
    /// Outlier shift as a multiple of the largest clean `|y|`.
    pub contamination_magnitude: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 20,
            s0: 3,
            beta_amplitude: 1.0,
            sigma: 1.0,
            h: 75,
            delta: 0.1,
            error_dist: ErrorDist::Gaussian,
            contamination_fraction: 0.0,
            contamination_magnitude: 100.0,
            n_trials: 100,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(invalid("need n >= 2 and p >= 2"));
        }
        if self.s0 > self.p - 1 {
            return Err(invalid(format!(
                "s0 = {} exceeds the {} non-intercept coordinates",
                self.s0,
                self.p - 1
            )));
        }
        if !(self.beta_amplitude.is_finite() && self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid("beta_amplitude and sigma must be finite, sigma >= 0"));
        }
        if self.h < self.n.div_ceil(2) || self.h > self.n {
            return Err(invalid(format!("h = {} outside [ceil(n/2), n]", self.h)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.contamination_fraction) {
            return Err(invalid("contamination_fraction must lie in [0, 1)"));
        }
        if !(self.contamination_magnitude.is_finite() && self.contamination_magnitude >= 0.0) {
            return Err(invalid("contamination_magnitude must be finite and nonnegative"));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials must be at least 1"));
        }
        Ok(())
    }

    pub fn contaminated_count(&self) -> usize {
        (self.contamination_fraction * self.n as f64).floor() as usize
    }
}

/// One simulated data set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub data: Dataset,
    pub beta0: Coefficients,
    pub errors: DVector<f64>,
    /// Rows whose response was replaced by an outlier, sorted.
    pub contaminated: Vec<usize>,
}

pub fn generate_instance(cfg: &SimConfig, trial: u64) -> Result<Instance> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = stream_rng(cfg.seed, trial);

    let features = DMatrix::from_fn(n, p - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let raw = Dataset::with_intercept(&features, DVector::zeros(n))?;
    let (design, _) = rescale_columns(&raw)?;

    let mut beta = vec![0.0; p];
    let mut support = sample(&mut rng, p - 1, cfg.s0).into_vec();
    support.sort_unstable();
    for j in support {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[j + 1] = sign * cfg.beta_amplitude;
    }
    let beta0 = Coefficients::new(beta)?;

    let errors = match cfg.error_dist {
        ErrorDist::Gaussian => {
            DVector::from_fn(n, |_, _| cfg.sigma * rng.sample::<f64, _>(StandardNormal))
        }
        ErrorDist::BoundedSubgaussian => {
            let unit = Uniform::new_inclusive(-3f64.sqrt(), 3f64.sqrt()).expect("valid range");
            DVector::from_fn(n, |_, _| cfg.sigma * unit.sample(&mut rng))
        }
    };
    let mut y = design.x() * beta0.as_vector() + &errors;

    let m = cfg.contaminated_count();
    let mut contaminated = sample(&mut rng, n, m).into_vec();
    contaminated.sort_unstable();
    let scale = y.amax();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for &i in &contaminated {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        y[i] += sign * cfg.contamination_magnitude * scale;
    }

    Ok(Instance {
        data: Dataset::new(design.x().clone(), y)?,
        beta0,
        errors,
        contaminated,
    })
}

/// Trimmed residual scale `sqrt((1/h) sum_{i in trim} r_i^2)` at the fit.
/// Biased low, since the kept residuals are the smallest ones.
pub fn estimate_sigma(data: &Dataset, fit: &FitResult) -> Result<f64> {
    let r = residuals(data, &fit.beta)?;
    let idx = fit.trim.indices();
    let ss: f64 = idx.iter().map(|&i| r[i] * r[i]).sum();
    Ok((ss / idx.len() as f64).sqrt())
}

/// Empirical exceedance rate of a probability bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    pub rate: f64,
    pub level: f64,
    pub reps: usize,
}

impl TailCheck {
    /// Binomial standard error at the theoretical level.
    pub fn standard_error(&self) -> f64 {
        (self.level * (1.0 - self.level) / self.reps as f64).sqrt()
    }

    /// Within three standard errors of the level.
    pub fn passes(&self) -> bool {
        self.rate <= self.level + 3.0 * self.standard_error()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareCheck {
    pub h: usize,
    pub t: f64,
    /// `P(chi2_h - h >= 2 sqrt(h t) + 2t) <= exp(-t)`
    pub upper: TailCheck,
    /// `P(h - chi2_h >= 2 sqrt(h t)) <= exp(-t)`
    pub lower: TailCheck,
}

const CHUNK: usize = 1000;

fn chunked<T: Send>(reps: usize, seed: u64, f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> T + Sync) -> Vec<T> {
    (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(reps - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

pub fn chi_square_tail_check(h: usize, t: f64, reps: usize, seed: u64) -> Result<ChiSquareCheck> {
    if h == 0 || !(t >= 0.0 && t.is_finite()) || reps == 0 {
        return Err(invalid("need h >= 1, t >= 0 and reps >= 1"));
    }
    let hf = h as f64;
    let upper_at = hf + 2.0 * (hf * t).sqrt() + 2.0 * t;
    let lower_at = hf - 2.0 * (hf * t).sqrt();
    let draws = chunked(reps, seed, |rng| {
        (0..h).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum::<f64>()
    });
    let above = draws.iter().filter(|&&v| v >= upper_at).count();
    let below = draws.iter().filter(|&&v| v <= lower_at).count();
    let level = (-t).exp();
    Ok(ChiSquareCheck {
        h,
        t,
        upper: TailCheck { rate: above as f64 / reps as f64, level, reps },
        lower: TailCheck { rate: below as f64 / reps as f64, level, reps },
    })
}

/// Estimates `P(max_j 2 |e^T D x_j| / n > q1)` for a fixed normalized
/// Gaussian design and a fixed trim set of the first `h` rows, with `q1`
/// taken at the single-subset level. The level is `2p exp(-n q1^2 / (8 sigma^2))`,
/// which equals `delta / 2` there.
pub fn subgaussian_max_check(
    n: usize,
    p: usize,
    h: usize,
    sigma: f64,
    delta: f64,
    reps: usize,
    seed: u64,
) -> Result<TailCheck> {
    if n < 1 || p < 2 || h < 1 || h > n || reps == 0 {
        return Err(invalid("need p >= 2, 1 <= h <= n and reps >= 1"));
    }
    let q1 = q1_with(SigmaMode::Known, sigma, n, p, 0.0, delta)?;
    let mut rng = stream_rng(seed, u64::MAX);
    let features = DMatrix::from_fn(n, p - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (design, _) = rescale_columns(&Dataset::with_intercept(&features, DVector::zeros(n))?)?;
    let kept = design.x().rows(0, h).into_owned();
    let nf = n as f64;
    let hits = chunked(reps, seed, |rng| {
        let e = DVector::from_fn(h, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        let proj = kept.tr_mul(&e);
        2.0 * proj.amax() / nf > q1
    });
    let rate = hits.iter().filter(|&&b| b).count() as f64 / reps as f64;
    let level = if sigma > 0.0 {
        2.0 * p as f64 * (-nf * q1 * q1 / (8.0 * sigma * sigma)).exp()
    } else {
        0.0
    };
    Ok(TailCheck { rate, level, reps })
}

/// Solver and bound settings shared by every trial of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub n_starts: usize,
    /// Use the exact solver whenever `C(n, h)` is at most this.
    pub exact_cap: u64,
    pub lambda2_override: Option<f64>,
    /// Fixed `(lambda1, lambda2)`, bypassing the rule driven by `q1`.
    pub fixed_lambdas: Option<(f64, f64)>,
    pub sigma_mode: SigmaMode,
    /// Smallest `q1` used to pick the penalties, so `sigma = 0` still gives a
    /// well-posed fit.
    pub q1_floor: f64,
    pub penalize_intercept: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_starts: 50,
            exact_cap: DEFAULT_SUBSET_CAP,
            lambda2_override: None,
            fixed_lambdas: None,
            sigma_mode: SigmaMode::Known,
            q1_floor: 1e-12,
            penalize_intercept: true,
        }
    }
}

/// Outcome of a single coverage trial. Bound-dependent fields are `None`
/// where the bound does not apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub failed: bool,
    pub error: Option<String>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma_hat: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    /// `(1/n) ||X (beta_hat - beta0)||^2_{D(beta_hat)}`
    pub realized_error: f64,
    pub prediction_bound: Option<f64>,
    pub prediction_bound_lasso: Option<f64>,
    pub cone_gap: Option<f64>,
    pub basic_inequality_slack: f64,
    pub incoherence_deviation: f64,
    pub incoherent: bool,
    /// `||beta_hat - beta0||_2^2`
    pub estimation_error: f64,
    pub estimation_bound_highdim: Option<f64>,
    pub estimation_bound_lowdim: Option<f64>,
    pub contaminated_in_trim: usize,
}

impl TrialRecord {
    fn failed(trial: u64, err: String) -> Self {
        Self {
            trial,
            failed: true,
            error: Some(err),
            lambda1: f64::NAN,
            lambda2: f64::NAN,
            sigma_hat: f64::NAN,
            objective: f64::NAN,
            kkt_residual: f64::NAN,
            realized_error: f64::NAN,
            prediction_bound: None,
            prediction_bound_lasso: None,
            cone_gap: None,
            basic_inequality_slack: f64::NAN,
            incoherence_deviation: f64::NAN,
            incoherent: false,
            estimation_error: f64::NAN,
            estimation_bound_highdim: None,
            estimation_bound_lowdim: None,
            contaminated_in_trim: 0,
        }
    }
}

/// Slack allowed on deterministic inequalities for rounding.
pub const DETERMINISTIC_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Prediction,
    PredictionLasso,
    Cone,
    BasicInequality,
    EstimationHighdim,
    EstimationLowdim,
}

impl Claim {
    pub const ALL: [Claim; 6] = [
        Claim::Prediction,
        Claim::PredictionLasso,
        Claim::Cone,
        Claim::BasicInequality,
        Claim::EstimationHighdim,
        Claim::EstimationLowdim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Claim::Prediction => "prediction",
            Claim::PredictionLasso => "prediction_lasso",
            Claim::Cone => "cone",
            Claim::BasicInequality => "basic_inequality",
            Claim::EstimationHighdim => "estimation_highdim",
            Claim::EstimationLowdim => "estimation_lowdim",
        }
    }

    fn deterministic(self) -> bool {
        matches!(self, Claim::BasicInequality | Claim::EstimationLowdim)
    }

    /// `Some(held)` when the claim applies to this trial.
    pub fn outcome(self, r: &TrialRecord) -> Option<bool> {
        if r.failed {
            return None;
        }
        match self {
            Claim::Prediction => r.prediction_bound.map(|b| r.realized_error <= b),
            Claim::PredictionLasso => r.prediction_bound_lasso.map(|b| r.realized_error <= b),
            Claim::Cone => r.cone_gap.map(|g| g <= 0.0),
            Claim::BasicInequality => Some(r.basic_inequality_slack >= -DETERMINISTIC_SLACK),
            Claim::EstimationHighdim => r.estimation_bound_highdim.map(|b| r.estimation_error <= b),
            Claim::EstimationLowdim => r
                .estimation_bound_lowdim
                .map(|b| r.estimation_error <= b * (1.0 + DETERMINISTIC_SLACK) + DETERMINISTIC_SLACK),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimSummary {
    pub claim: Claim,
    /// Trials where the claim applied.
    pub evaluated: usize,
    pub times_held: usize,
    /// `times_held / evaluated`; `None` when nothing was evaluated.
    pub empirical_rate: Option<f64>,
    pub target: f64,
    /// `target - 2 sqrt(delta (1 - delta) / evaluated)` for probabilistic claims.
    pub binomial_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub config: SimConfig,
    pub settings: ExperimentSettings,
    pub n_trials: usize,
    pub failed_trials: usize,
    pub claims: Vec<ClaimSummary>,
    pub mean_realized_error: f64,
    pub median_realized_error: f64,
    pub mean_prediction_bound: Option<f64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

impl CoverageReport {
    pub fn claim(&self, c: Claim) -> &ClaimSummary {
        self.claims.iter().find(|s| s.claim == c).expect("every claim is summarized")
    }
}

/// Penalties used for a trial and the quantiles behind them.
struct Tuning {
    q1: f64,
    q2: f64,
    lambda1: f64,
    lambda2: f64,
}

fn tuning(cfg: &SimConfig, settings: &ExperimentSettings) -> Result<Tuning> {
    let log_l = log_binomial(cfg.n, cfg.h)?;
    let q1 = q1_with(settings.sigma_mode, cfg.sigma, cfg.n, cfg.p, log_l, cfg.delta)?;
    let (q2, _) = q2_q3_with(settings.sigma_mode, cfg.h, log_l, cfg.delta)?;
    let (lambda1, lambda2) = match settings.fixed_lambdas {
        Some((l1, l2)) => (l1, l2),
        None => select_lambdas(q1.max(settings.q1_floor), settings.lambda2_override)?,
    };
    Ok(Tuning { q1, q2, lambda1, lambda2 })
}

fn fit_instance(
    data: &Dataset,
    cfg: &TrimPenaltyConfig,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<FitResult> {
    match subset_count(data.n(), cfg.h) {
        Some(c) if c <= settings.exact_cap => fit_exact(data, cfg, settings.exact_cap),
        _ => fit_cstep(data, cfg, settings.n_starts, seed),
    }
}

fn solver_config(settings: &ExperimentSettings, h: usize, l1: f64, l2: f64) -> TrimPenaltyConfig {
    let mut solver = TrimPenaltyConfig::new(h, l1, l2);
    solver.penalize_intercept = settings.penalize_intercept;
    solver
}

fn fit_seed(cfg: &SimConfig, trial: u64) -> u64 {
    stream_seed(!cfg.seed, trial)
}

fn run_trial(cfg: &SimConfig, settings: &ExperimentSettings, tune: &Tuning, trial: u64) -> Result<TrialRecord> {
    let inst = generate_instance(cfg, trial)?;
    let data = &inst.data;
    let solver = solver_config(settings, cfg.h, tune.lambda1, tune.lambda2);
    let fit = fit_instance(data, &solver, settings, fit_seed(cfg, trial))?;

    let realized = mse_trimmed(data, &fit.beta, &inst.beta0, &fit.trim)?;
    let delta = fit.beta.sub(&inst.beta0)?;
    let sigma_hat = match settings.sigma_mode {
        SigmaMode::Known => cfg.sigma,
        SigmaMode::Estimated => estimate_sigma(data, &fit)?,
    };

    let inputs = BoundInputs::from_beta0(&inst.beta0, cfg.n, cfg.h, cfg.sigma, cfg.delta)?;
    let q1_used = tune.q1.max(settings.q1_floor);
    let signal = inputs.beta0_l1 > 0.0;
    let pb = if signal { Some(prediction_bound(&inputs, q1_used, tune.q2)?) } else { None };
    let lasso = tune.lambda2 == 0.0;
    let pb_lasso = if signal && lasso {
        Some(prediction_bound_lasso(&inputs, tune.lambda1, tune.q2)?)
    } else {
        None
    };

    let support = inst.beta0.support();
    let (_, zeta) = if tune.lambda1 > 0.0 {
        eta_zeta(sigma_hat, tune.q2, cfg.n, tune.lambda1)?
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let cone = if lasso && tune.lambda1 > 0.0 {
        let (eta, _) = eta_zeta(sigma_hat, tune.q2, cfg.n, tune.lambda1)?;
        Some(cone_gap(&fit.beta, &inst.beta0, &support, eta, tune.lambda1)?)
    } else {
        None
    };

    let bi = basic_inequality(data, &fit.beta, &inst.beta0, &solver)?;

    let x_star = trimmed_design(data, &fit.trim);
    let (k, _) = required_incoherence(support.len(), cfg.p);
    let (deviation, incoherent) = incoherence_check(&x_star, k)?;
    let highdim = if incoherent && lasso && zeta.is_finite() {
        Some(estimation_bound_highdim(realized, k, zeta)?)
    } else {
        None
    };
    let lowdim = if cfg.p < cfg.n {
        estimation_bound_lowdim(realized, &x_star).ok()
    } else {
        None
    };

    Ok(TrialRecord {
        trial,
        failed: false,
        error: None,
        lambda1: tune.lambda1,
        lambda2: tune.lambda2,
        sigma_hat,
        objective: fit.objective_value,
        kkt_residual: fit.kkt_residual,
        realized_error: realized,
        prediction_bound: pb,
        prediction_bound_lasso: pb_lasso,
        cone_gap: cone,
        basic_inequality_slack: bi.slack(),
        incoherence_deviation: deviation,
        incoherent,
        estimation_error: delta.squared_norm(),
        estimation_bound_highdim: highdim,
        estimation_bound_lowdim: lowdim,
        contaminated_in_trim: inst.contaminated.iter().filter(|&&i| fit.trim.contains(i)).count(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs `cfg.n_trials` independent trials and tallies how often each bound
/// held. Trials whose solver fails are excluded from every rate and counted.
pub fn run_coverage_experiment(cfg: &SimConfig, settings: &ExperimentSettings) -> Result<CoverageReport> {
    cfg.validate()?;
    if settings.n_starts == 0 {
        return Err(invalid("n_starts must be at least 1"));
    }
    let tune = tuning(cfg, settings)?;
    let records: Vec<TrialRecord> = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| match run_trial(cfg, settings, &tune, t) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("trial {t} failed: {e}");
                TrialRecord::failed(t, e.to_string())
            }
        })
        .collect();

    let ok: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed).collect();
    let claims = Claim::ALL
        .iter()
        .map(|&c| {
            let outcomes: Vec<bool> = ok.iter().filter_map(|r| c.outcome(r)).collect();
            let evaluated = outcomes.len();
            let held = outcomes.iter().filter(|&&b| b).count();
            let target = if c.deterministic() { 1.0 } else { 1.0 - cfg.delta };
            let floor = (!c.deterministic() && evaluated > 0)
                .then(|| target - 2.0 * (cfg.delta * (1.0 - cfg.delta) / evaluated as f64).sqrt());
            ClaimSummary {
                claim: c,
                evaluated,
                times_held: held,
                empirical_rate: (evaluated > 0).then(|| held as f64 / evaluated as f64),
                target,
                binomial_floor: floor,
            }
        })
        .collect();

    let mut realized: Vec<f64> = ok.iter().map(|r| r.realized_error).collect();
    let bounds: Vec<f64> = ok.iter().filter_map(|r| r.prediction_bound).collect();
    Ok(CoverageReport {
        config: cfg.clone(),
        settings: settings.clone(),
        n_trials: cfg.n_trials,
        failed_trials: records.len() - ok.len(),
        claims,
        mean_realized_error: if realized.is_empty() { f64::NAN } else { mean(&realized) },
        median_realized_error: median(&mut realized),
        mean_prediction_bound: (!bounds.is_empty()).then(|| mean(&bounds)),
        records,
    })
}

/// Paired comparison of the trimmed fit against the untrimmed (`h = n`) fit
/// with the same penalties on the same contaminated instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRecord {
    pub trial: u64,
    pub trimmed_error: f64,
    pub untrimmed_error: f64,
    pub contaminated: usize,
    pub contaminated_in_trim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub config: SimConfig,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_trials: usize,
    pub failed_trials: usize,
    /// Trials where no contaminated row entered the trim set.
    pub trims_all_outliers: usize,
    /// Trials where the trimmed fit has the smaller `l2` error.
    pub trimmed_wins: usize,
    pub median_trimmed_error: f64,
    pub median_untrimmed_error: f64,
    pub records: Vec<RobustnessRecord>,
}

pub fn run_robustness_experiment(cfg: &SimConfig, settings: &ExperimentSettings) -> Result<RobustnessReport> {
    cfg.validate()?;
    if cfg.contaminated_count() > cfg.n - cfg.h {
        return Err(invalid("more contaminated rows than the trim can drop"));
    }
    let tune = tuning(cfg, settings)?;
    let results: Vec<Option<RobustnessRecord>> = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let run = || -> Result<RobustnessRecord> {
                let inst = generate_instance(cfg, t)?;
                let trimmed_cfg = solver_config(settings, cfg.h, tune.lambda1, tune.lambda2);
                let trimmed = fit_instance(&inst.data, &trimmed_cfg, settings, fit_seed(cfg, t))?;
                let full_cfg = solver_config(settings, cfg.n, tune.lambda1, tune.lambda2);
                let full = fit_exact(&inst.data, &full_cfg, 1)?;
                Ok(RobustnessRecord {
                    trial: t,
                    trimmed_error: trimmed.beta.sub(&inst.beta0)?.squared_norm().sqrt(),
                    untrimmed_error: full.beta.sub(&inst.beta0)?.squared_norm().sqrt(),
                    contaminated: inst.contaminated.len(),
                    contaminated_in_trim: inst.contaminated.iter().filter(|&&i| trimmed.trim.contains(i)).count(),
                })
            };
            run().map_err(|e| log::warn!("trial {t} failed: {e}")).ok()
        })
        .collect();
    let records: Vec<RobustnessRecord> = results.into_iter().flatten().collect();
    let mut a: Vec<f64> = records.iter().map(|r| r.trimmed_error).collect();
    let mut b: Vec<f64> = records.iter().map(|r| r.untrimmed_error).collect();
    Ok(RobustnessReport {
        config: cfg.clone(),
        lambda1: tune.lambda1,
        lambda2: tune.lambda2,
        n_trials: cfg.n_trials,
        failed_trials: cfg.n_trials - records.len(),
        trims_all_outliers: records.iter().filter(|r| r.contaminated_in_trim == 0).count(),
        trimmed_wins: records.iter().filter(|r| r.trimmed_error < r.untrimmed_error).count(),
        median_trimmed_error: median(&mut a),
        median_untrimmed_error: median(&mut b),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objective;

    fn small(trials: usize) -> SimConfig {
        SimConfig { n: 30, p: 5, s0: 2, h: 23, n_trials: trials, seed: 11, ..Default::default() }
    }

    #[test]
    fn noiseless_instance_is_exact() {
        let cfg = SimConfig { sigma: 0.0, ..small(1) };
        let inst = generate_instance(&cfg, 0).unwrap();
        let fit = inst.data.x() * inst.beta0.as_vector();
        assert!((fit - inst.data.y()).amax() < 1e-12);
        assert!(inst.contaminated.is_empty());
    }

    #[test]
    fn null_model_returns_errors() {
        let cfg = SimConfig { s0: 0, ..small(1) };
        let inst = generate_instance(&cfg, 3).unwrap();
        assert_eq!(inst.beta0.l1_norm(), 0.0);
        assert_eq!(inst.data.y(), &inst.errors);
    }

    #[test]
    fn generated_designs_satisfy_column_bound() {
        for t in 0..20 {
            let inst = generate_instance(&small(1), t).unwrap();
            let worst = inst.data.column_norm_ratios().into_iter().fold(0.0, f64::max);
            assert!(worst <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn support_and_signs() {
        let cfg = SimConfig { beta_amplitude: 2.5, ..small(1) };
        let inst = generate_instance(&cfg, 1).unwrap();
        let s = inst.beta0.support();
        assert_eq!(s.len(), 2);
        assert!(!s.contains(&0));
        assert!(s.iter().all(|&j| inst.beta0[j].abs() == 2.5));
    }

    #[test]
    fn instances_are_reproducible() {
        let a = generate_instance(&small(1), 4).unwrap();
        let b = generate_instance(&small(1), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_instance(&small(1), 5).unwrap());
    }

    #[test]
    fn bounded_errors_stay_in_range() {
        let cfg = SimConfig { error_dist: ErrorDist::BoundedSubgaussian, sigma: 2.0, ..small(1) };
        let inst = generate_instance(&cfg, 0).unwrap();
        assert!(inst.errors.amax() <= 2.0 * 3f64.sqrt());
    }

    #[test]
    fn contamination_shifts_selected_rows() {
        let cfg = SimConfig { contamination_fraction: 0.2, ..small(1) };
        let clean = generate_instance(&SimConfig { contamination_fraction: 0.0, ..cfg.clone() }, 0).unwrap();
        let inst = generate_instance(&cfg, 0).unwrap();
        assert_eq!(inst.contaminated.len(), 6);
        let big = clean.data.y().amax();
        for &i in &inst.contaminated {
            assert!(inst.data.y()[i].abs() > 99.0 * big);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { s0: 20, p: 20, ..Default::default() }.validate().is_err());
        assert!(SimConfig { n_trials: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { delta: 1.5, ..Default::default() }.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
        let err: std::result::Result<SimConfig, _> = serde_json::from_str(r#"{"n": 10, "bogus": 1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn sigma_estimate_examples() {
        let cfg = SimConfig { sigma: 0.0, ..small(1) };
        let inst = generate_instance(&cfg, 0).unwrap();
        let tc = TrimPenaltyConfig::new(23, 0.0, 0.0);
        let fit = fit_cstep(&inst.data, &tc, 5, 0).unwrap();
        assert!(estimate_sigma(&inst.data, &fit).unwrap() < 1e-8);

        let huge = TrimPenaltyConfig::new(23, 1e6, 0.0);
        let fit = fit_cstep(&inst.data, &huge, 3, 0).unwrap();
        assert!(fit.beta.l1_norm() == 0.0);
        let mut ysq: Vec<f64> = inst.data.y().iter().map(|v| v * v).collect();
        ysq.sort_by(f64::total_cmp);
        let want = (ysq[..23].iter().sum::<f64>() / 23.0).sqrt();
        assert!((estimate_sigma(&inst.data, &fit).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn chi_square_zero_t_is_vacuous() {
        let c = chi_square_tail_check(5, 0.0, 2000, 1).unwrap();
        assert_eq!(c.upper.level, 1.0);
        assert!(c.upper.passes() && c.lower.passes());
    }

    #[test]
    fn chi_square_is_deterministic() {
        let a = chi_square_tail_check(10, 1.0, 3000, 2).unwrap();
        let b = chi_square_tail_check(10, 1.0, 3000, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subgaussian_degenerate_noise() {
        let c = subgaussian_max_check(50, 5, 40, 0.0, 0.1, 1000, 3).unwrap();
        assert_eq!(c.rate, 0.0);
    }

    #[test]
    fn subgaussian_level_is_half_delta() {
        let c = subgaussian_max_check(50, 5, 50, 1.0, 0.1, 1000, 3).unwrap();
        assert!((c.level - 0.05).abs() < 1e-12);
        assert!(c.passes());
    }

    #[test]
    fn noiseless_coverage_is_total() {
        let cfg = SimConfig { sigma: 0.0, ..small(10) };
        let r = run_coverage_experiment(&cfg, &ExperimentSettings { n_starts: 5, ..Default::default() }).unwrap();
        assert_eq!(r.failed_trials, 0);
        let a = r.claim(Claim::Prediction);
        assert_eq!(a.evaluated, 10);
        assert_eq!(a.empirical_rate, Some(1.0));
        assert!(r.median_realized_error < 1e-10);
    }

    #[test]
    fn coverage_is_reproducible_and_consistent() {
        let settings = ExperimentSettings { n_starts: 5, lambda2_override: Some(0.0), ..Default::default() };
        let a = run_coverage_experiment(&small(8), &settings).unwrap();
        let b = run_coverage_experiment(&small(8), &settings).unwrap();
        assert_eq!(a, b);
        for s in &a.claims {
            if let Some(rate) = s.empirical_rate {
                assert_eq!(rate, s.times_held as f64 / s.evaluated as f64);
            }
        }
        assert_eq!(a.claim(Claim::BasicInequality).times_held, 8);
        assert!(a.claim(Claim::Cone).evaluated == 8);
        // The basic inequality slack is the objective gap to the truth.
        let r = &a.records[0];
        let inst = generate_instance(&small(8), 0).unwrap();
        let cfg = TrimPenaltyConfig::new(23, r.lambda1, r.lambda2);
        let gap = objective(&inst.data, &inst.beta0, &cfg).unwrap() - r.objective;
        assert!((gap - r.basic_inequality_slack).abs() < 1e-9);
    }

    #[test]
    fn lowdim_claim_always_holds() {
        let r = run_coverage_experiment(&small(6), &ExperimentSettings { n_starts: 5, ..Default::default() }).unwrap();
        let s = r.claim(Claim::EstimationLowdim);
        assert_eq!(s.evaluated, 6);
        assert_eq!(s.times_held, 6);
    }

    #[test]
    fn robustness_rejects_too_many_outliers() {
        let cfg = SimConfig { contamination_fraction: 0.4, ..small(2) };
        assert!(run_robustness_experiment(&cfg, &ExperimentSettings::default()).is_err());
    }
}
