//! Regression data model and the penalized trimmed objective.
//!
//! The loss is `(1/n) * sum of the h smallest squared residuals`. The divisor
//! is the full sample size `n`, not `h`; many LTS codebases divide by `h`, and
//! the two scalings give different minimizers once a penalty is added.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Design matrix with a leading all-ones intercept column, plus the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Builds a dataset from a full design matrix whose first column must be
    /// identically one.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 {
            return Err(invalid("dataset needs at least one row"));
        }
        if p < 2 {
            return Err(invalid(
                "design needs an intercept column and at least one predictor",
            ));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response length vs design rows",
                expected: n,
                actual: y.len(),
            });
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(invalid("first design column must be identically 1"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self { x, y })
    }

    /// Prepends the intercept column to `features` (n x (p-1)).
    pub fn with_intercept(features: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = features.nrows();
        let mut x = DMatrix::from_element(n, features.ncols() + 1, 1.0);
        x.columns_mut(1, features.ncols()).copy_from(features);
        Self::new(x, y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Dataset made of the given rows, in the given order (rows may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(invalid(format!("row index {bad} out of range")));
        }
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self::new(x, y)
    }

    /// `||x^(j)||_2 / sqrt(n)` for every column.
    pub fn column_norm_ratios(&self) -> Vec<f64> {
        let sqrt_n = (self.n() as f64).sqrt();
        self.x.column_iter().map(|c| c.norm() / sqrt_n).collect()
    }

    fn check_len(&self, beta: &Coefficients) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "coefficient length vs design columns",
                expected: self.p(),
                actual: beta.len(),
            });
        }
        Ok(())
    }
}

/// Regression coefficients; component 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Coefficients(DVector<f64>);

impl Coefficients {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub(crate) fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|b| b.abs()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Component-wise `self - other`.
    pub fn sub(&self, other: &Coefficients) -> Result<Coefficients> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient lengths",
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(Self(&self.0 - &other.0))
    }

    pub fn max_abs_diff(&self, other: &Coefficients) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Indices of the nonzero components.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.0[j] != 0.0).collect()
    }
}

impl From<Coefficients> for Vec<f64> {
    fn from(c: Coefficients) -> Self {
        c.0.as_slice().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Coefficients {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Coefficients::new(v)
    }
}

impl std::ops::Index<usize> for Coefficients {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Trimming size, penalty weights and solver controls of the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPenaltyConfig {
    /// Number of residuals kept.
    pub h: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Exponent of the first penalty term; solvers require 1.
    pub gamma: f64,
    /// KKT and coordinate-change tolerance of the convex subproblem.
    pub tol: f64,
    /// Maximum coordinate-descent sweeps per subproblem.
    pub max_iter: usize,
    /// When false the intercept is left unpenalized.
    pub penalize_intercept: bool,
}

impl TrimPenaltyConfig {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITER: usize = 10_000;

    pub fn new(h: usize, lambda1: f64, lambda2: f64) -> Self {
        Self {
            h,
            lambda1,
            lambda2,
            gamma: 1.0,
            tol: Self::DEFAULT_TOL,
            max_iter: Self::DEFAULT_MAX_ITER,
            penalize_intercept: true,
        }
    }

    /// Default trimming size, `ceil(0.75 n)`.
    pub fn default_h(n: usize) -> usize {
        (3 * n).div_ceil(4).max(1)
    }

    pub fn with_lambdas(&self, lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..self.clone()
        }
    }

    pub fn with_h(&self, h: usize) -> Self {
        Self { h, ..self.clone() }
    }

    /// Checks the knobs against a sample of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let lo = n.div_ceil(2);
        if self.h < lo || self.h > n {
            return Err(invalid(format!(
                "h = {} outside [{lo}, {n}] for n = {n}",
                self.h
            )));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(invalid("lambda1 must be finite and nonnegative"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(invalid("lambda2 must be finite and nonnegative"));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        Ok(())
    }

    /// Per-coordinate (lambda1, lambda2), honoring the intercept exemption.
    pub(crate) fn lambdas_for(&self, j: usize) -> (f64, f64) {
        if j == 0 && !self.penalize_intercept {
            (0.0, 0.0)
        } else {
            (self.lambda1, self.lambda2)
        }
    }
}

/// An h-subset of rows: one 0/1 diagonal trimming matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrimSet {
    indices: Vec<usize>,
    mask: Vec<bool>,
}

impl TrimSet {
    pub fn from_indices(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        let mut mask = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(invalid(format!("trim index {i} out of range for n = {n}")));
            }
            if mask[i] {
                return Err(invalid(format!("duplicate trim index {i}")));
            }
            mask[i] = true;
        }
        if indices.is_empty() {
            return Err(invalid("trim set must be nonempty"));
        }
        Ok(Self { indices, mask })
    }

    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            mask: vec![true; n],
        }
    }

    /// Sorted, 0-based row indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// The 0/1 diagonal of the trimming matrix.
    pub fn weights(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    pub fn h(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch {
                what: "trim set size vs dataset rows",
                expected: n,
                actual: self.n(),
            });
        }
        Ok(())
    }
}

/// `r_i = y_i - v_i^T beta`.
pub fn residuals(data: &Dataset, beta: &Coefficients) -> Result<DVector<f64>> {
    data.check_len(beta)?;
    Ok(data.y() - data.x() * beta.as_vector())
}

/// Selects the rows holding the `h` smallest squared residuals. Ties at the
/// h-th order statistic go to the smallest row index.
pub fn trim_weights(residual_sq: &[f64], h: usize) -> Result<TrimSet> {
    let n = residual_sq.len();
    if h == 0 || h > n {
        return Err(invalid(format!("h = {h} outside [1, {n}]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |&a: &usize, &b: &usize| {
        residual_sq[a]
            .total_cmp(&residual_sq[b])
            .then_with(|| a.cmp(&b))
    };
    if h < n {
        order.select_nth_unstable_by(h - 1, cmp);
    }
    order.truncate(h);
    TrimSet::from_indices(n, order)
}

/// Trim set selected by `beta`'s own residuals.
pub fn trim_for(data: &Dataset, beta: &Coefficients, h: usize) -> Result<TrimSet> {
    let r = residuals(data, beta)?;
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    trim_weights(&sq, h)
}

/// `lambda1 * sum |beta_j|^gamma + lambda2 * ||beta||^2`.
pub fn penalty(beta: &Coefficients, cfg: &TrimPenaltyConfig) -> f64 {
    beta.as_slice()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let (l1, l2) = cfg.lambdas_for(j);
            let lasso = if cfg.gamma == 1.0 {
                b.abs()
            } else {
                b.abs().powf(cfg.gamma)
            };
            l1 * lasso + l2 * b * b
        })
        .sum()
}

/// Loss plus penalty for a fixed trim set: `(1/n) sum_{i in trim} r_i^2 + penalty`.
pub fn subset_objective(
    data: &Dataset,
    beta: &Coefficients,
    trim: &TrimSet,
    cfg: &TrimPenaltyConfig,
) -> Result<f64> {
    trim.check_n(data.n())?;
    let r = residuals(data, beta)?;
    let loss: f64 = trim.indices().iter().map(|&i| r[i] * r[i]).sum();
    Ok(loss / data.n() as f64 + penalty(beta, cfg))
}

/// The penalized trimmed objective, with the trim set recomputed from `beta`.
pub fn objective(data: &Dataset, beta: &Coefficients, cfg: &TrimPenaltyConfig) -> Result<f64> {
    let trim = trim_for(data, beta, cfg.h)?;
    subset_objective(data, beta, &trim, cfg)
}

/// `(1/n) ||X delta||_D^2` for the trimming matrix `D` of `trim`.
pub fn trimmed_seminorm(data: &Dataset, delta: &Coefficients, trim: &TrimSet) -> Result<f64> {
    data.check_len(delta)?;
    trim.check_n(data.n())?;
    let fitted = data.x() * delta.as_vector();
    let s: f64 = trim.indices().iter().map(|&i| fitted[i] * fitted[i]).sum();
    Ok(s / data.n() as f64)
}

/// Per-column multipliers applied by [`normalize_columns`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScales(pub Vec<f64>);

impl ColumnScales {
    /// Maps coefficients fitted on the normalized design back to the original
    /// design, so that predictions agree.
    pub fn to_original(&self, beta: &Coefficients) -> Coefficients {
        Coefficients::from_vector(beta.as_vector().component_mul(&DVector::from_column_slice(&self.0)))
    }

    pub fn to_normalized(&self, beta: &Coefficients) -> Coefficients {
        Coefficients::from_vector(beta.as_vector().component_div(&DVector::from_column_slice(&self.0)))
    }
}

/// Rescales every column with `||x^(j)||_2 / sqrt(n) > 1` down to ratio 1.
/// Compliant columns are never scaled up.
pub fn normalize_columns(data: &Dataset) -> Result<(Dataset, ColumnScales)> {
    let (out, scales) = rescale_columns(data)?;
    let rescaled = scales.0.iter().filter(|&&s| s != 1.0).count();
    if rescaled > 0 {
        log::warn!("normalize_columns: rescaled {rescaled} column(s) to unit norm ratio");
    }
    Ok((out, scales))
}

/// [`normalize_columns`] without the warning, for generated designs where
/// rescaling is expected.
pub(crate) fn rescale_columns(data: &Dataset) -> Result<(Dataset, ColumnScales)> {
    let ratios = data.column_norm_ratios();
    let mut x = data.x().clone();
    let mut scales = vec![1.0; data.p()];
    for (j, &ratio) in ratios.iter().enumerate() {
        if ratio == 0.0 {
            return Err(Error::DegenerateColumn(j));
        }
        if ratio > 1.0 && j > 0 {
            let s = 1.0 / ratio;
            x.column_mut(j).scale_mut(s);
            scales[j] = s;
        }
    }
    Ok((Dataset::new(x, data.y().clone())?, ColumnScales(scales)))
}
