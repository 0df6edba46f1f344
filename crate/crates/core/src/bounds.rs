//! Closed-form finite-sample quantities: noise quantiles, the penalty rule,
//! the prediction bound, cone-condition slack, incoherence and both
//! estimation bounds.
//!
//! `L = C(n, h)` is the number of h-subsets. It overflows every machine type
//! for realistic `n`, so it only ever appears as `log L`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    penalty, residuals, trim_for, trim_weights, trimmed_seminorm, Coefficients, Dataset,
    TrimPenaltyConfig, TrimSet,
};

/// `log C(n, h)`.
pub fn log_binomial(n: usize, h: usize) -> Result<f64> {
    if h > n {
        return Err(invalid(format!("h = {h} exceeds n = {n}")));
    }
    let k = h.min(n - h);
    if k == 0 {
        return Ok(0.0);
    }
    let m = (n - k) as f64;
    if k <= 32 {
        // ln prod_{i=1..k} (m + i) / i
        return Ok((1..=k).map(|i| (m / i as f64).ln_1p()).sum());
    }
    // Stirling with the correction series; the leading terms are regrouped so
    // nothing of order n log n cancels.
    let (nf, kf) = (n as f64, k as f64);
    let series = |x: f64| {
        let x2 = x * x;
        (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x
    };
    let lead = kf * (nf / kf).ln() + m * (kf / m).ln_1p();
    let half = 0.5 * (nf / (2.0 * std::f64::consts::PI * kf * m)).ln();
    Ok(lead + half + series(nf) - series(kf) - series(m))
}

/// How the failure probability is split across the noise events.
///
/// With known noise level the split uses `delta/(2L)`, `delta/(4L)`; when the
/// noise level is estimated a third event is paid for and the split becomes
/// `delta/(3L)`, `delta/(6L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    #[default]
    Known,
    Estimated,
}

impl SigmaMode {
    fn factor(self) -> f64 {
        match self {
            SigmaMode::Known => 4.0,
            SigmaMode::Estimated => 6.0,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// `q1 = 2 sigma sqrt(2 log(4 p L / delta) / n)`.
pub fn q1(sigma: f64, n: usize, p: usize, log_l: f64, delta: f64) -> Result<f64> {
    q1_with(SigmaMode::Known, sigma, n, p, log_l, delta)
}

pub fn q1_with(
    mode: SigmaMode,
    sigma: f64,
    n: usize,
    p: usize,
    log_l: f64,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    if !(sigma >= 0.0) || n == 0 || p == 0 {
        return Err(invalid("q1 needs sigma >= 0, n >= 1, p >= 1"));
    }
    let log_term = mode.factor().ln() + (p as f64).ln() + log_l - delta.ln();
    Ok(2.0 * sigma * (2.0 * log_term / n as f64).sqrt())
}

/// `q2 = 2 sqrt(t) (sqrt(h) + sqrt(t))` and `q3 = q2 - 2t` with
/// `t = log(4L/delta)`.
pub fn q2_q3(h: usize, log_l: f64, delta: f64) -> Result<(f64, f64)> {
    q2_q3_with(SigmaMode::Known, h, log_l, delta)
}

pub fn q2_q3_with(mode: SigmaMode, h: usize, log_l: f64, delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let t = mode.factor().ln() + log_l - delta.ln();
    let q2 = 2.0 * t.sqrt() * ((h as f64).sqrt() + t.sqrt());
    Ok((q2, q2 - 2.0 * t))
}

/// `lambda1 = 2 q1`, `lambda2 = q1` unless overridden by a value in `[0, q1]`.
pub fn select_lambdas(q1: f64, lambda2_override: Option<f64>) -> Result<(f64, f64)> {
    if !(q1 > 0.0 && q1.is_finite()) {
        return Err(invalid("q1 must be positive"));
    }
    let lambda2 = match lambda2_override {
        None => q1,
        Some(l2) if (0.0..=q1).contains(&l2) => l2,
        Some(l2) => {
            return Err(invalid(format!(
                "lambda2 = {l2} violates 0 <= lambda2 <= q1 = {q1}"
            )))
        }
    };
    Ok((2.0 * q1, lambda2))
}

/// Inputs of the bounds calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub sigma: f64,
    pub delta: f64,
    /// `||beta0||_1` of the true coefficients.
    pub beta0_l1: f64,
    /// Sparsity `|S0|`, when the true support is known.
    pub s0: Option<usize>,
    /// `log C(n, h)`.
    pub log_l: f64,
}

impl BoundInputs {
    pub fn new(
        n: usize,
        p: usize,
        h: usize,
        sigma: f64,
        delta: f64,
        beta0_l1: f64,
        s0: Option<usize>,
    ) -> Result<Self> {
        check_delta(delta)?;
        if n == 0 || p == 0 {
            return Err(invalid("n and p must be positive"));
        }
        if h < n.div_ceil(2) || h > n {
            return Err(invalid(format!("h = {h} outside [ceil(n/2), n]")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma must be finite and nonnegative"));
        }
        if !(beta0_l1 >= 0.0 && beta0_l1.is_finite()) {
            return Err(invalid("||beta0||_1 must be finite and nonnegative"));
        }
        if let Some(s) = s0 {
            if s > p {
                return Err(invalid("s0 exceeds p"));
            }
        }
        Ok(Self {
            n,
            p,
            h,
            sigma,
            delta,
            beta0_l1,
            s0,
            log_l: log_binomial(n, h)?,
        })
    }

    pub fn from_beta0(beta0: &Coefficients, n: usize, h: usize, sigma: f64, delta: f64) -> Result<Self> {
        Self::new(n, beta0.len(), h, sigma, delta, beta0.l1_norm(), Some(beta0.support().len()))
    }
}

fn check_signal(beta0_l1: f64) -> Result<()> {
    if beta0_l1 == 0.0 {
        return Err(Error::UndefinedBound(
            "||beta0||_1 = 0 leaves the constant C undefined".into(),
        ));
    }
    Ok(())
}

/// `C = 2 n q1 (2 + ||beta0||_1) / sigma^2 + 2 q2 / ||beta0||_1`.
pub fn c_constant(inputs: &BoundInputs, q1: f64, q2: f64) -> Result<f64> {
    check_signal(inputs.beta0_l1)?;
    if inputs.sigma == 0.0 {
        return Err(Error::UndefinedBound("sigma = 0 leaves C undefined".into()));
    }
    let b = inputs.beta0_l1;
    Ok(2.0 * inputs.n as f64 * q1 * (2.0 + b) / inputs.sigma.powi(2) + 2.0 * q2 / b)
}

/// `(sigma^2 / n) ||beta0||_1 C`, evaluated in the expanded form
/// `2 q1 ||beta0||_1 (2 + ||beta0||_1) + 2 sigma^2 q2 / n`, which stays
/// finite at `sigma = 0`.
pub fn prediction_bound(inputs: &BoundInputs, q1: f64, q2: f64) -> Result<f64> {
    check_signal(inputs.beta0_l1)?;
    let b = inputs.beta0_l1;
    Ok(2.0 * q1 * b * (2.0 + b) + 2.0 * inputs.sigma.powi(2) * q2 / inputs.n as f64)
}

/// Prediction bound when `lambda2 = 0`: `2 lambda1 ||beta0||_1 + 2 sigma^2 q2 / n`.
///
/// Without the ridge term the `||beta0||_1^2` contribution drops out of the
/// penalty difference, which makes this tighter than [`prediction_bound`].
pub fn prediction_bound_lasso(inputs: &BoundInputs, lambda1: f64, q2: f64) -> Result<f64> {
    check_signal(inputs.beta0_l1)?;
    Ok(2.0 * lambda1 * inputs.beta0_l1 + 2.0 * inputs.sigma.powi(2) * q2 / inputs.n as f64)
}

/// `eta = 4 sigma_hat^2 q2 / n` and `zeta = eta / lambda`.
pub fn eta_zeta(sigma_hat: f64, q2: f64, n: usize, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let eta = 4.0 * sigma_hat * sigma_hat * q2 / n as f64;
    Ok((eta, eta / lambda))
}

/// `||D_{S0^c}||_1 - 3 ||D_{S0}||_1 - eta / lambda` for `D = beta_hat - beta0`.
/// Nonpositive exactly when the relaxed cone condition holds.
pub fn cone_gap(
    beta_hat: &Coefficients,
    beta0: &Coefficients,
    s0: &[usize],
    eta: f64,
    lambda: f64,
) -> Result<f64> {
    let diff = beta_hat.sub(beta0)?;
    if let Some(&j) = s0.iter().find(|&&j| j >= diff.len()) {
        return Err(invalid(format!("support index {j} out of range")));
    }
    if !(lambda > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    let mut on = 0.0;
    let mut off = 0.0;
    for (j, v) in diff.as_slice().iter().enumerate() {
        if s0.contains(&j) {
            on += v.abs();
        } else {
            off += v.abs();
        }
    }
    Ok(off - 3.0 * on - eta / lambda)
}

/// `D X`: the design with every row outside `trim` zeroed.
pub fn trimmed_design(data: &Dataset, trim: &TrimSet) -> DMatrix<f64> {
    let mut xs = data.x().clone();
    for i in 0..data.n() {
        if !trim.contains(i) {
            xs.row_mut(i).fill(0.0);
        }
    }
    xs
}

/// Entrywise `max |X^T X / n - I|` and whether it is within `1 / (32 k)`.
pub fn incoherence_check(x_star: &DMatrix<f64>, k: usize) -> Result<(f64, bool)> {
    if k == 0 {
        return Err(invalid("incoherence level k must be at least 1"));
    }
    let n = x_star.nrows() as f64;
    let gram = x_star.tr_mul(x_star) / n;
    let mut dev: f64 = 0.0;
    for ((i, j), v) in gram.iter().enumerate().map(|(idx, v)| ((idx % gram.nrows(), idx / gram.nrows()), v)) {
        let target = if i == j { 1.0 } else { 0.0 };
        dev = dev.max((v - target).abs());
    }
    Ok((dev, dev <= 1.0 / (32.0 * k as f64)))
}

/// Largest incoherence deviation over trim sets of size `h`. Every subset is
/// visited when there are at most `samples` of them; otherwise `samples`
/// uniformly random subsets are drawn.
pub fn worst_case_incoherence(data: &Dataset, h: usize, samples: usize, seed: u64) -> Result<f64> {
    use itertools::Itertools;
    let n = data.n();
    if h == 0 || h > n || samples == 0 {
        return Err(invalid("need 1 <= h <= n and samples >= 1"));
    }
    let deviation = |rows: Vec<usize>| -> Result<f64> {
        let trim = TrimSet::from_indices(n, rows)?;
        Ok(incoherence_check(&trimmed_design(data, &trim), 1)?.0)
    };
    let mut worst: f64 = 0.0;
    match crate::lts::subset_count(n, h) {
        Some(c) if c <= samples as u64 => {
            for rows in (0..n).combinations(h) {
                worst = worst.max(deviation(rows)?);
            }
        }
        _ => {
            for s in 0..samples as u64 {
                let mut rng = crate::rng::stream_rng(seed, s);
                let rows = rand::seq::index::sample(&mut rng, n, h).into_vec();
                worst = worst.max(deviation(rows)?);
            }
        }
    }
    Ok(worst)
}

/// `(1/n) ||X (beta_hat - beta0)||_D^2`.
pub fn mse_trimmed(
    data: &Dataset,
    beta_hat: &Coefficients,
    beta0: &Coefficients,
    trim: &TrimSet,
) -> Result<f64> {
    trimmed_seminorm(data, &beta_hat.sub(beta0)?, trim)
}

/// `mse / gamma_min(X*^T X* / n)`; requires `p < n` and a full-rank Gram matrix.
pub fn estimation_bound_lowdim(mse: f64, x_star: &DMatrix<f64>) -> Result<f64> {
    let (n, p) = x_star.shape();
    if p >= n {
        return Err(Error::RankDeficient { rank: n.min(p), required: p });
    }
    let a = x_star.tr_mul(x_star) / n as f64;
    let eig = a.symmetric_eigenvalues();
    let gmax = eig.max();
    let cutoff = 1e-12 * gmax.max(1.0);
    let rank = eig.iter().filter(|&&v| v > cutoff).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, required: p });
    }
    Ok(mse / eig.min())
}

/// `(8/3) mse + zeta^2 / (6 k)`.
pub fn estimation_bound_highdim(mse: f64, k: usize, zeta: f64) -> Result<f64> {
    if k < 1 {
        return Err(invalid("incoherence level k must be at least 1"));
    }
    Ok(8.0 / 3.0 * mse + zeta * zeta / (6.0 * k as f64))
}

/// Smallest admissible incoherence level, under the stated requirement
/// `k >= max(s0, (p - s0)/20)` and under the weaker `k >= min(...)` that the
/// estimation argument actually uses. Both are at least 1.
pub fn required_incoherence(s0: usize, p: usize) -> (usize, usize) {
    let a = s0 as f64;
    let b = p.saturating_sub(s0) as f64 / 20.0;
    let up = |v: f64| (v.ceil() as usize).max(1);
    (up(a.max(b)), up(a.min(b)))
}

/// Both sides of the deterministic basic inequality satisfied by any
/// minimizer `beta_hat`, with `e = y - X beta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasicInequality {
    /// `(1/n) ||X (beta_hat - beta0)||^2_{D(beta_hat)}`
    pub lhs: f64,
    /// `(2/n) e^T D(beta_hat) X (beta_hat - beta0)
    ///  + (1/n)(||e||^2_{D(beta0)} - ||e||^2_{D(beta_hat)}) + pen(beta0) - pen(beta_hat)`
    pub rhs: f64,
}

impl BasicInequality {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

pub fn basic_inequality(
    data: &Dataset,
    beta_hat: &Coefficients,
    beta0: &Coefficients,
    cfg: &TrimPenaltyConfig,
) -> Result<BasicInequality> {
    let n = data.n() as f64;
    let e = residuals(data, beta0)?;
    let d_hat = trim_for(data, beta_hat, cfg.h)?;
    let e_sq: Vec<f64> = e.iter().map(|v| v * v).collect();
    let d_true = trim_weights(&e_sq, cfg.h)?;
    let delta = beta_hat.sub(beta0)?;
    let fitted = data.x() * delta.as_vector();

    let lhs = trimmed_seminorm(data, &delta, &d_hat)?;
    let cross: f64 = d_hat.indices().iter().map(|&i| e[i] * fitted[i]).sum();
    let e_true: f64 = d_true.indices().iter().map(|&i| e_sq[i]).sum();
    let e_hat: f64 = d_hat.indices().iter().map(|&i| e_sq[i]).sum();
    let rhs = 2.0 / n * cross + (e_true - e_hat) / n + penalty(beta0, cfg) - penalty(beta_hat, cfg);
    Ok(BasicInequality { lhs, rhs })
}

/// Options of [`compute_report`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundOptions {
    /// `lambda2` in `[0, q1]`; defaults to `q1`.
    pub lambda2_override: Option<f64>,
    pub sigma_mode: SigmaMode,
    /// Noise level used in `eta`; defaults to `sigma`.
    pub sigma_hat: Option<f64>,
    /// Incoherence level; defaults to the stated minimum when `s0` is known,
    /// else 1.
    pub k: Option<usize>,
    /// Realized trimmed prediction error, when a fit is available.
    pub mse: Option<f64>,
    /// `max |X*^T X*/n - I|` of the fitted trimmed design, when available.
    pub incoherence_deviation: Option<f64>,
}

/// Every bound quantity with its inputs echoed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    #[serde(flatten)]
    pub inputs: BoundInputs,
    pub sigma_mode: SigmaMode,
    pub sigma_hat: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q1_known_sigma: f64,
    pub q2_known_sigma: f64,
    pub q1_estimated_sigma: f64,
    pub q2_estimated_sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `None` when `sigma = 0`.
    #[serde(rename = "C_const")]
    pub c_const: Option<f64>,
    pub prediction_bound: f64,
    /// Tighter bound valid when `lambda2 = 0`.
    pub prediction_bound_lasso: Option<f64>,
    /// `lambda2 = 0`: the cone condition and the sparse estimation bound apply.
    pub sparse_estimation_pathway: bool,
    pub eta: f64,
    pub zeta: f64,
    pub k: usize,
    pub k_min_stated: Option<usize>,
    pub k_min_proof: Option<usize>,
    pub incoherence_threshold: f64,
    pub incoherence_deviation: Option<f64>,
    pub incoherence_holds: Option<bool>,
    /// `zeta^2 / (6k)`, the additive part of the sparse estimation bound.
    pub estimation_slack: f64,
    pub mse: Option<f64>,
    pub estimation_bound: Option<f64>,
}

pub fn compute_report(inputs: &BoundInputs, opts: &BoundOptions) -> Result<BoundReport> {
    check_signal(inputs.beta0_l1)?;
    let (n, p, h, log_l, delta) = (inputs.n, inputs.p, inputs.h, inputs.log_l, inputs.delta);
    let q1_known = q1_with(SigmaMode::Known, inputs.sigma, n, p, log_l, delta)?;
    let q1_est = q1_with(SigmaMode::Estimated, inputs.sigma, n, p, log_l, delta)?;
    let (q2_known, _) = q2_q3_with(SigmaMode::Known, h, log_l, delta)?;
    let (q2_est, _) = q2_q3_with(SigmaMode::Estimated, h, log_l, delta)?;
    let q1 = match opts.sigma_mode {
        SigmaMode::Known => q1_known,
        SigmaMode::Estimated => q1_est,
    };
    let (q2, q3) = q2_q3_with(opts.sigma_mode, h, log_l, delta)?;
    let (lambda1, lambda2) = select_lambdas(q1, opts.lambda2_override)?;
    let sigma_hat = opts.sigma_hat.unwrap_or(inputs.sigma);
    let (eta, zeta) = eta_zeta(sigma_hat, q2, n, lambda1)?;
    let (k_stated, k_proof) = match inputs.s0 {
        Some(s0) => {
            let (a, b) = required_incoherence(s0, p);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let k = opts.k.or(k_stated).unwrap_or(1);
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let threshold = 1.0 / (32.0 * k as f64);
    let sparse = lambda2 == 0.0;
    let estimation_bound = match opts.mse {
        Some(mse) => Some(estimation_bound_highdim(mse, k, zeta)?),
        None => None,
    };
    Ok(BoundReport {
        inputs: inputs.clone(),
        sigma_mode: opts.sigma_mode,
        sigma_hat,
        q1,
        q2,
        q3,
        q1_known_sigma: q1_known,
        q2_known_sigma: q2_known,
        q1_estimated_sigma: q1_est,
        q2_estimated_sigma: q2_est,
        lambda1,
        lambda2,
        c_const: c_constant(inputs, q1, q2).ok(),
        prediction_bound: prediction_bound(inputs, q1, q2)?,
        prediction_bound_lasso: if sparse {
            Some(prediction_bound_lasso(inputs, lambda1, q2)?)
        } else {
            None
        },
        sparse_estimation_pathway: sparse,
        eta,
        zeta,
        k,
        k_min_stated: k_stated,
        k_min_proof: k_proof,
        incoherence_threshold: threshold,
        incoherence_deviation: opts.incoherence_deviation,
        incoherence_holds: opts.incoherence_deviation.map(|d| d <= threshold),
        estimation_slack: zeta * zeta / (6.0 * k as f64),
        mse: opts.mse,
        estimation_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn big_binomial(n: u64, k: u64) -> BigUint {
        let mut acc = BigUint::from(1u32);
        for i in 1..=k {
            acc = acc * BigUint::from(n - k + i) / BigUint::from(i);
        }
        acc
    }

    fn ln_big(v: &BigUint) -> f64 {
        let bits = v.bits();
        let shift = bits.saturating_sub(60);
        let top: BigUint = v >> shift;
        let top = top.to_u64_digits().first().copied().unwrap_or(0) as f64;
        top.ln() + shift as f64 * std::f64::consts::LN_2
    }

    #[test]
    fn log_binomial_small_cases() {
        assert!((log_binomial(4, 2).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(log_binomial(17, 17).unwrap(), 0.0);
        assert_eq!(log_binomial(17, 0).unwrap(), 0.0);
        assert!(log_binomial(3, 4).is_err());
    }

    #[test]
    fn log_binomial_matches_big_integers() {
        for &(n, k) in &[(100u64, 50u64), (100, 75), (60, 33), (250, 40), (1000, 300), (1000, 500), (2000, 1999)] {
            let want = ln_big(&big_binomial(n, k));
            let got = log_binomial(n as usize, k as usize).unwrap();
            assert!((got - want).abs() < 1e-10, "({n},{k}): {got} vs {want}");
        }
    }

    #[test]
    fn log_binomial_large_n_against_high_precision_values() {
        // Frozen from 40-digit arbitrary-precision evaluations.
        let cases = [
            (1_000_000, 500_000, 693_140.047_013_063_7),
            (1_000_000, 750_000, 562_328.154_912_851_838),
            (1_000_000, 37, 411.842_612_181_787_57),
            (100, 50, 66.783_841_652_017_43),
        ];
        for (n, k, want) in cases {
            let got = log_binomial(n, k).unwrap();
            assert!((got - want).abs() <= 1e-10_f64.max(want * 2e-16), "({n},{k}): {got} vs {want}");
        }
    }

    #[test]
    fn quantile_spot_values() {
        let q1v = q1(1.0, 100, 10, 0.0, 0.1).unwrap();
        assert!((q1v - 0.692_327_353_040_914_1).abs() < 1e-12);
        let (q2, q3) = q2_q3(100, 0.0, 0.1).unwrap();
        assert!((q2 - 45.790_670_561_024_70).abs() < 1e-10);
        assert!((q3 - 38.412_911_652_796_83).abs() < 1e-10);
        assert!((q3 - 2.0 * (100.0 * 40f64.ln()).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn q1_scales_and_is_monotone_in_delta() {
        let a = q1(1.0, 80, 12, 5.0, 0.05).unwrap();
        let b = q1(2.0, 80, 12, 5.0, 0.05).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
        let mut prev = 0.0;
        for d in [0.9, 0.5, 0.2, 0.1, 0.01, 1e-4, 1e-8] {
            let v = q1(1.0, 80, 12, 5.0, d).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(q1(1.0, 80, 12, 5.0, 1.5).is_err());
        assert!(q1(1.0, 80, 12, 5.0, 0.0).is_err());
    }

    #[test]
    fn estimated_sigma_constants_are_larger() {
        let k = q1_with(SigmaMode::Known, 1.0, 100, 20, 50.0, 0.1).unwrap();
        let e = q1_with(SigmaMode::Estimated, 1.0, 100, 20, 50.0, 0.1).unwrap();
        assert!(e > k);
        let want = 2.0 * (2.0 * (6f64.ln() + 20f64.ln() + 50.0 - 0.1f64.ln()) / 100.0).sqrt();
        assert!((e - want).abs() < 1e-14);
    }

    #[test]
    fn lambda_rule() {
        assert_eq!(select_lambdas(0.5, None).unwrap(), (1.0, 0.5));
        assert_eq!(select_lambdas(0.5, Some(0.0)).unwrap(), (1.0, 0.0));
        assert!(select_lambdas(0.5, Some(1.0)).is_err());
        assert!(select_lambdas(0.0, None).is_err());
    }

    fn spot_inputs() -> BoundInputs {
        BoundInputs::new(100, 10, 100, 1.0, 0.1, 1.0, None).unwrap()
    }

    #[test]
    fn prediction_bound_spot_value() {
        let inp = spot_inputs();
        assert_eq!(inp.log_l, 0.0);
        let q1v = q1(1.0, 100, 10, 0.0, 0.1).unwrap();
        let (q2, _) = q2_q3(100, 0.0, 0.1).unwrap();
        let c = c_constant(&inp, q1v, q2).unwrap();
        assert!((c - 506.977_752_946_597_9).abs() < 1e-9);
        let b = prediction_bound(&inp, q1v, q2).unwrap();
        assert!((b - 5.069_777_529_465_979).abs() < 1e-12);
        assert!((b - inp.sigma.powi(2) / 100.0 * inp.beta0_l1 * c).abs() < 1e-12);
    }

    #[test]
    fn prediction_bound_is_linear_in_q2() {
        let inp = spot_inputs();
        let a = prediction_bound(&inp, 0.3, 10.0).unwrap();
        let b = prediction_bound(&inp, 0.3, 11.0).unwrap();
        assert!((b - a - 2.0 / 100.0).abs() < 1e-14);
    }

    #[test]
    fn lasso_bound() {
        let inp = spot_inputs();
        let (l1, l2) = select_lambdas(0.4, Some(0.0)).unwrap();
        assert_eq!(l2, 0.0);
        let v = prediction_bound_lasso(&inp, l1, 30.0).unwrap();
        assert!((v - (2.0 * 0.8 * 1.0 + 2.0 * 30.0 / 100.0)).abs() < 1e-14);
        assert!(v <= prediction_bound(&inp, 0.4, 30.0).unwrap());
    }

    #[test]
    fn zero_signal_is_undefined() {
        let inp = BoundInputs::new(100, 10, 100, 1.0, 0.1, 0.0, None).unwrap();
        assert!(matches!(prediction_bound(&inp, 0.5, 40.0), Err(Error::UndefinedBound(_))));
        assert!(matches!(compute_report(&inp, &BoundOptions::default()), Err(Error::UndefinedBound(_))));
    }

    #[test]
    fn eta_zeta_examples() {
        let (q2, _) = q2_q3(100, 0.0, 0.1).unwrap();
        let (eta, zeta) = eta_zeta(1.0, q2, 100, 1.0).unwrap();
        assert!((eta - 1.831_626_822_440_988).abs() < 1e-12);
        assert_eq!(eta, zeta);
        let (eta2, _) = eta_zeta(3.0, q2, 100, 1.0).unwrap();
        assert!((eta2 - 9.0 * eta).abs() < 1e-12);
        let (_, z) = eta_zeta(1.0, q2, 100, 1e12).unwrap();
        assert!(z < 1e-11);
        assert!(eta_zeta(1.0, q2, 100, 0.0).is_err());
    }

    #[test]
    fn cone_gap_examples() {
        let b0 = Coefficients::new(vec![0.0, 1.0, -1.0, 0.0, 0.0]).unwrap();
        let s0 = b0.support();
        assert_eq!(cone_gap(&b0, &b0, &s0, 0.5, 2.0).unwrap(), -0.25);

        let on = Coefficients::new(vec![0.0, 1.5, -0.5, 0.0, 0.0]).unwrap();
        let g = cone_gap(&on, &b0, &s0, 0.5, 2.0).unwrap();
        assert!((g - (-3.0 - 0.25)).abs() < 1e-15);

        // ||D_S0||_1 = 1, so the off-support mass 3 + 0.25 + 1 gives gap +1.
        let forced = Coefficients::new(vec![4.25, 2.0, -1.0, 0.0, 0.0]).unwrap();
        let g = cone_gap(&forced, &b0, &s0, 0.5, 2.0).unwrap();
        assert!((g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn incoherence_examples() {
        let n = 4;
        let x = DMatrix::from_row_slice(n, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        for k in [1, 5, 1000] {
            let (d, ok) = incoherence_check(&x, k).unwrap();
            assert_eq!(d, 0.0);
            assert!(ok);
        }
        // Gram/n = I with one off-diagonal 1/(16k): violated at level k.
        let k = 3;
        let eps = 1.0 / (16.0 * k as f64);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, eps, eps, 1.0]);
        let chol = a.cholesky().unwrap().l();
        // X = sqrt(n) * L^T has X^T X / n = L L^T = A.
        let x = chol.transpose() * 2f64.sqrt();
        let (d, ok) = incoherence_check(&x, k).unwrap();
        assert!((d - eps).abs() < 1e-14);
        assert!(!ok);
    }

    #[test]
    fn incoherence_matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::StandardNormal;
        let x = DMatrix::from_fn(200, 5, |_, _| rng.sample::<f64, _>(normal));
        let (d, _) = incoherence_check(&x, 1).unwrap();
        let mut want: f64 = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                let mut s = 0.0;
                for i in 0..200 {
                    s += x[(i, a)] * x[(i, b)];
                }
                let v = s / 200.0 - if a == b { 1.0 } else { 0.0 };
                want = want.max(v.abs());
            }
        }
        assert!((d - want).abs() < 1e-13);
    }

    #[test]
    fn worst_case_incoherence_dominates_each_subset() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let f = DMatrix::from_fn(7, 2, |_, _| rng.random_range(-1.0..1.0));
        let d = Dataset::with_intercept(&f, DVector::zeros(7)).unwrap();
        let all = worst_case_incoherence(&d, 5, 1000, 0).unwrap();
        let sampled = worst_case_incoherence(&d, 5, 3, 0).unwrap();
        assert!(sampled <= all + 1e-15);
        let t = TrimSet::from_indices(7, vec![0, 2, 3, 5, 6]).unwrap();
        let (one, _) = incoherence_check(&trimmed_design(&d, &t), 1).unwrap();
        assert!(one <= all + 1e-15);
    }

    #[test]
    fn lowdim_bound_examples() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        assert!((estimation_bound_lowdim(0.7, &x).unwrap() - 0.7).abs() < 1e-14);
        let x2 = &x * 2f64.sqrt();
        assert!((estimation_bound_lowdim(0.7, &x2).unwrap() - 0.35).abs() < 1e-14);
        let flat = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(estimation_bound_lowdim(1.0, &flat), Err(Error::RankDeficient { .. })));
        let wide = DMatrix::from_element(2, 3, 1.0);
        assert!(estimation_bound_lowdim(1.0, &wide).is_err());
    }

    /// Smallest eigenvalue of a symmetric 3x3 matrix from its characteristic
    /// polynomial (trigonometric cubic solution).
    fn min_eig_3x3(a: &DMatrix<f64>) -> f64 {
        let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let q = (a[(0, 0)] + a[(1, 1)] + a[(2, 2)]) / 3.0;
        let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (a - DMatrix::identity(3, 3) * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
    }

    #[test]
    fn lowdim_eigenvalue_matches_cubic_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let x = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = x.tr_mul(&x) / 10.0;
            let gmin = min_eig_3x3(&a);
            let b = estimation_bound_lowdim(1.0, &x).unwrap();
            assert!((1.0 / b - gmin).abs() < 1e-10, "{} vs {gmin}", 1.0 / b);
        }
    }

    #[test]
    fn highdim_bound_examples() {
        let v = estimation_bound_highdim(1.5, 10, 2.0).unwrap();
        assert!((v - (4.0 + 4.0 / 60.0)).abs() < 1e-14);
        assert_eq!(estimation_bound_highdim(1.5, 10, 0.0).unwrap(), 4.0);
        let far = estimation_bound_highdim(1.5, 1 << 40, 2.0).unwrap();
        assert!((far - 4.0).abs() < 1e-10);
        assert!(estimation_bound_highdim(1.5, 0, 2.0).is_err());
    }

    #[test]
    fn required_incoherence_levels() {
        assert_eq!(required_incoherence(3, 20), (3, 1));
        assert_eq!(required_incoherence(2, 1002), (50, 2));
        assert_eq!(required_incoherence(0, 10), (1, 1));
    }

    #[test]
    fn basic_inequality_holds_at_the_exact_minimizer() {
        use crate::lts::fit_exact;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let f = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
            let beta0 = Coefficients::new(vec![0.0, 1.0, -0.5]).unwrap();
            let mut y = DVector::from_fn(9, |i, _| f[(i, 0)] - 0.5 * f[(i, 1)]);
            for v in y.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
            let d = Dataset::with_intercept(&f, y).unwrap();
            let cfg = TrimPenaltyConfig::new(6, 0.05, 0.02);
            let fit = fit_exact(&d, &cfg, 1000).unwrap();
            let bi = basic_inequality(&d, &fit.beta, &beta0, &cfg).unwrap();
            assert!(bi.slack() >= -1e-12, "{bi:?}");
            // It is exactly O(beta0) - O(beta_hat) >= 0.
            let gap = crate::model::objective(&d, &beta0, &cfg).unwrap() - fit.objective_value;
            assert!((bi.slack() - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn report_echoes_inputs() {
        let inp = BoundInputs::new(100, 20, 75, 1.0, 0.1, 3.0, Some(3)).unwrap();
        let opts = BoundOptions {
            lambda2_override: Some(0.0),
            mse: Some(0.2),
            ..Default::default()
        };
        let r = compute_report(&inp, &opts).unwrap();
        assert!(r.sparse_estimation_pathway);
        assert!((r.q3 - (r.q2 - 2.0 * (4f64.ln() + inp.log_l - 0.1f64.ln()))).abs() < 1e-12);
        assert_eq!(r.k, 3);
        assert_eq!(r.k_min_proof, Some(1));
        let json = serde_json::to_value(&r).unwrap();
        for key in ["n", "p", "h", "sigma", "delta", "beta0_l1", "log_l", "q1", "q2", "q3", "C_const", "prediction_bound", "eta", "zeta", "estimation_bound"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(r.prediction_bound >= 0.0 && r.estimation_bound.unwrap() >= 0.0);
    }

    proptest! {
        #[test]
        fn q3_identity(h in 1usize..10_000, log_l in 0.0f64..500.0, delta in 1e-6f64..0.999) {
            let (q2, q3) = q2_q3(h, log_l, delta).unwrap();
            let t = 4f64.ln() + log_l - delta.ln();
            prop_assert!((q3 - (q2 - 2.0 * t)).abs() <= 1e-12 * q2.max(1.0));
            prop_assert!(q2 > 0.0 && q3 > 0.0);
        }

        #[test]
        fn prediction_bound_monotone(
            sigma in 0.1f64..5.0, q1v in 0.01f64..3.0, q2 in 1.0f64..200.0, b in 0.01f64..20.0, bump in 1.0001f64..2.0,
        ) {
            let n = 100;
            let inp = |s: f64, l1n: f64| BoundInputs::new(n, 10, 80, s, 0.1, l1n, None).unwrap();
            let base = prediction_bound(&inp(sigma, b), q1v, q2).unwrap();
            prop_assert!(prediction_bound(&inp(sigma * bump, b), q1v, q2).unwrap() >= base);
            prop_assert!(prediction_bound(&inp(sigma, b), q1v * bump, q2).unwrap() >= base);
            prop_assert!(prediction_bound(&inp(sigma, b), q1v, q2 * bump).unwrap() >= base);
            prop_assert!(prediction_bound(&inp(sigma, b * bump), q1v, q2).unwrap() >= base);
        }

        #[test]
        fn c_has_a_turning_point_in_signal_size(
            sigma in 0.1f64..5.0, q1v in 0.01f64..3.0, q2 in 1.0f64..200.0,
        ) {
            // C falls in ||beta0||_1 below sqrt(q2 sigma^2 / (n q1)) and rises above it.
            let n = 100usize;
            let turn = (q2 * sigma * sigma / (n as f64 * q1v)).sqrt();
            let c = |b: f64| {
                let inp = BoundInputs::new(n, 10, 80, sigma, 0.1, b, None).unwrap();
                c_constant(&inp, q1v, q2).unwrap()
            };
            let (lo, hi) = (turn * 0.5, turn * 2.0);
            prop_assert!(c(lo * 0.9) > c(lo));
            prop_assert!(c(hi * 1.1) > c(hi));
            prop_assert!(c(turn) <= c(lo) && c(turn) <= c(hi));
        }

        #[test]
        fn incoherence_is_row_permutation_invariant(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
            let perm: Vec<usize> = (0..30).map(|i| (i * 7 + seed as usize) % 30).collect();
            let px = x.select_rows(&perm);
            let (a, _) = incoherence_check(&x, 2).unwrap();
            let (b, _) = incoherence_check(&px, 2).unwrap();
            prop_assert!((a - b).abs() < 1e-13);
        }

        #[test]
        fn joint_scaling(c in 0.1f64..10.0, seed in 0u64..200) {
            // Scaling y, e, sigma and beta0 by c scales the mse by c^2; the
            // noise-driven part of the bound scales by c^2 as well.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
            let d = Dataset::with_intercept(&f, DVector::zeros(12)).unwrap();
            let bh = Coefficients::new(vec![0.1, 0.4, -0.2]).unwrap();
            let b0 = Coefficients::new(vec![0.0, 0.5, 0.0]).unwrap();
            let t = TrimSet::from_indices(12, (0..9).collect()).unwrap();
            let scale = |b: &Coefficients| Coefficients::new(b.as_slice().iter().map(|v| v * c).collect()).unwrap();
            let m1 = mse_trimmed(&d, &bh, &b0, &t).unwrap();
            let m2 = mse_trimmed(&d, &scale(&bh), &scale(&b0), &t).unwrap();
            prop_assert!((m2 - c * c * m1).abs() <= 1e-12 * m2.max(1.0));
            let noise = |s: f64| 2.0 * s * s * 40.0 / 12.0;
            prop_assert!((noise(c) - c * c * noise(1.0)).abs() <= 1e-12 * noise(c));
            // q1 scales by c, so 2 q1 ||beta0|| (2 + ||beta0||) picks up c^2 in
            // the quadratic ||beta0||^2 part.
            let q = |s: f64| q1(s, 12, 3, 5.0, 0.1).unwrap();
            prop_assert!((2.0 * q(c) * (c * 0.5).powi(2) - c.powi(3) * 2.0 * q(1.0) * 0.25).abs() < 1e-9 * c.powi(3));
        }
    }
}
