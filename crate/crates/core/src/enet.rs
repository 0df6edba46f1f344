//! Elastic-net least squares on a fixed h-subset of rows.
//!
//! Minimizes `(1/n) sum_{i in S} (y_i - v_i^T beta)^2 + lambda1 ||beta||_1 +
//! lambda2 ||beta||_2^2` by cyclic coordinate descent. The loss keeps the
//! full-sample divisor `n` so that subset minimizers plug straight into the
//! trimmed objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Coefficients, Dataset, TrimPenaltyConfig, TrimSet};

/// Result of one restricted solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub beta: Coefficients,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when both penalties vanish and the restricted Gram matrix is
    /// singular; `beta` is then the minimum-norm least squares solution.
    pub min_norm_fallback: bool,
}

/// `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Row subset copied out of the dataset, column-major for the sweeps.
struct Restricted {
    x: DMatrix<f64>,
    y: DVector<f64>,
    inv_n: f64,
}

impl Restricted {
    fn new(data: &Dataset, trim: &TrimSet) -> Self {
        Self {
            x: data.x().select_rows(trim.indices()),
            y: DVector::from_iterator(trim.h(), trim.indices().iter().map(|&i| data.y()[i])),
            inv_n: 1.0 / data.n() as f64,
        }
    }

    fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// Max violation of the elastic-net stationarity conditions.
    fn kkt(&self, beta: &DVector<f64>, r: &DVector<f64>, cfg: &TrimPenaltyConfig) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..beta.len() {
            let (l1, l2) = cfg.lambdas_for(j);
            let grad = -2.0 * self.inv_n * self.x.column(j).dot(r);
            let v = if beta[j] != 0.0 {
                (grad + l1 * beta[j].signum() + 2.0 * l2 * beta[j]).abs()
            } else {
                (grad.abs() - l1).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn objective(&self, beta: &DVector<f64>, r: &DVector<f64>, cfg: &TrimPenaltyConfig) -> f64 {
        let pen: f64 = (0..beta.len())
            .map(|j| {
                let (l1, l2) = cfg.lambdas_for(j);
                l1 * beta[j].abs() + l2 * beta[j] * beta[j]
            })
            .sum();
        self.inv_n * r.norm_squared() + pen
    }
}

fn check_inputs(data: &Dataset, trim: &TrimSet, cfg: &TrimPenaltyConfig) -> Result<()> {
    if trim.n() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "trim set size vs dataset rows",
            expected: data.n(),
            actual: trim.n(),
        });
    }
    if !(cfg.lambda1 >= 0.0 && cfg.lambda1.is_finite() && cfg.lambda2 >= 0.0 && cfg.lambda2.is_finite()) {
        return Err(invalid("penalty weights must be finite and nonnegative"));
    }
    if cfg.gamma != 1.0 {
        return Err(invalid("the subproblem solver requires gamma = 1"));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(invalid("tol must be positive and max_iter nonzero"));
    }
    Ok(())
}

/// Solves the elastic-net problem restricted to the rows of `trim`.
///
/// The trimming size in `cfg.h` is not consulted; `trim` alone defines the
/// subset. Non-convergence is reported through `converged = false` with the
/// last iterate, not as an error.
pub fn solve_enet_on_subset(
    data: &Dataset,
    trim: &TrimSet,
    cfg: &TrimPenaltyConfig,
    warm_start: Option<&Coefficients>,
) -> Result<SubproblemSolution> {
    solve_traced(data, trim, cfg, warm_start, &mut |_| {})
}

/// Same as [`solve_enet_on_subset`], calling `on_sweep` with the restricted
/// objective after every coordinate-descent sweep.
pub(crate) fn solve_traced(
    data: &Dataset,
    trim: &TrimSet,
    cfg: &TrimPenaltyConfig,
    warm_start: Option<&Coefficients>,
    on_sweep: &mut dyn FnMut(f64),
) -> Result<SubproblemSolution> {
    check_inputs(data, trim, cfg)?;
    let p = data.p();
    if let Some(w) = warm_start {
        if w.len() != p {
            return Err(Error::DimensionMismatch {
                what: "warm start length vs design columns",
                expected: p,
                actual: w.len(),
            });
        }
    }
    let sub = Restricted::new(data, trim);
    let unpenalized = cfg.lambda1 == 0.0 && cfg.lambda2 == 0.0;
    if unpenalized {
        return Ok(least_squares(&sub, cfg));
    }

    let mut beta = warm_start
        .map(|w| w.as_vector().clone())
        .unwrap_or_else(|| DVector::zeros(p));
    let mut r = sub.residuals(&beta);
    let curvature: Vec<f64> = (0..p)
        .map(|j| 2.0 * sub.inv_n * sub.x.column(j).norm_squared())
        .collect();

    let mut kkt = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < cfg.max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let (l1, l2) = cfg.lambdas_for(j);
            let denom = curvature[j] + 2.0 * l2;
            let col = sub.x.column(j);
            let old = beta[j];
            let new = if denom > 0.0 {
                let rho = 2.0 * sub.inv_n * col.dot(&r) + curvature[j] * old;
                soft_threshold(rho, l1) / denom
            } else {
                // Column vanishes on the subset and carries no ridge term.
                0.0
            };
            if new != old {
                r.axpy(old - new, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        on_sweep(sub.objective(&beta, &r, cfg));
        if max_change <= cfg.tol {
            r = sub.residuals(&beta);
            kkt = sub.kkt(&beta, &r, cfg);
            if kkt <= cfg.tol {
                return Ok(SubproblemSolution {
                    beta: Coefficients::from_vector(beta),
                    kkt_residual: kkt,
                    iterations: sweeps,
                    converged: true,
                    min_norm_fallback: false,
                });
            }
        }
    }
    if kkt.is_infinite() {
        r = sub.residuals(&beta);
        kkt = sub.kkt(&beta, &r, cfg);
    }
    Ok(SubproblemSolution {
        beta: Coefficients::from_vector(beta),
        kkt_residual: kkt,
        iterations: sweeps,
        converged: kkt <= cfg.tol,
        min_norm_fallback: false,
    })
}

/// Unpenalized case: exact (minimum-norm when singular) least squares via SVD.
fn least_squares(sub: &Restricted, cfg: &TrimPenaltyConfig) -> SubproblemSolution {
    let p = sub.x.ncols();
    let svd = sub.x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * f64::EPSILON * sub.x.nrows().max(p) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let beta = svd
        .solve(&sub.y, cutoff)
        .map(|m| m.column(0).into_owned())
        .unwrap_or_else(|_| DVector::zeros(p));
    let r = sub.residuals(&beta);
    let kkt = sub.kkt(&beta, &r, cfg);
    SubproblemSolution {
        beta: Coefficients::from_vector(beta),
        kkt_residual: kkt,
        iterations: 1,
        converged: kkt <= cfg.tol,
        min_norm_fallback: rank < p,
    }
}

/// Largest `lambda1` for which the all-zero vector is optimal on `trim`
/// (ridge term irrelevant at zero): `max_j |(2/n) sum_{i in trim} x_ij y_i|`.
pub fn lambda1_max(data: &Dataset, trim: &TrimSet) -> f64 {
    let inv_n = 1.0 / data.n() as f64;
    data.x()
        .column_iter()
        .map(|col| {
            let s: f64 = trim.indices().iter().map(|&i| col[i] * data.y()[i]).sum();
            (2.0 * inv_n * s).abs()
        })
        .fold(0.0, f64::max)
}
