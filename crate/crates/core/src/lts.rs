//! Minimizers of the penalized trimmed objective.
//!
//! The objective is the pointwise minimum of `C(n, h)` convex functions, one
//! per h-subset, so it is convex on each region of coefficient space where the
//! selected subset does not change. [`fit_exact`] visits every region;
//! [`fit_cstep`] alternates subset selection and convex solves from random
//! starting subsets until a fixed point.

use itertools::Itertools;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enet::solve_enet_on_subset;
use crate::error::{invalid, Error, Result};
use crate::model::{
    objective, subset_objective, trim_for, Coefficients, Dataset, TrimPenaltyConfig, TrimSet,
};
use crate::rng::{stream_rng, stream_seed};

/// Default enumeration cap for [`fit_exact`].
pub const DEFAULT_SUBSET_CAP: u64 = 100_000;
/// Default number of random starts for [`fit_cstep`].
pub const DEFAULT_STARTS: usize = 500;
/// Per-start cap on chained C-steps.
pub const MAX_CSTEPS: usize = 100;
/// A chain stops once one C-step lowers the objective by less than this.
pub const CSTEP_DECREASE_TOL: f64 = 1e-10;

const TIE_OBJECTIVE: f64 = 1e-9;
const TIE_COEFFICIENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Cstep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Coefficients,
    /// Trim set selected by `beta`'s own residuals.
    pub trim: TrimSet,
    pub objective_value: f64,
    pub method: Method,
    /// Subsets solved (exact) or random starts run (C-step).
    pub starts_used: usize,
    /// C-steps taken by the winning chain.
    pub cstep_iterations: usize,
    /// Exact solver only: false when another subset ties the optimum with
    /// different coefficients.
    pub unique_flag: Option<bool>,
    pub seed: Option<u64>,
    /// KKT residual of the subproblem solve that produced `beta`.
    pub kkt_residual: f64,
    pub min_norm_fallback: bool,
}

/// Fits along a decreasing `lambda1` grid with `lambda2 = ratio * lambda1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub entries: Vec<PathEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub lambda1: f64,
    pub lambda2: f64,
    pub fit: FitResult,
}

/// Exact `C(n, h)` if it fits in a `u64`.
pub fn subset_count(n: usize, h: usize) -> Option<u64> {
    if h > n {
        return Some(0);
    }
    let k = h.min(n - h) as u128;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul(n as u128 - k + i)? / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn check_solver_cfg(data: &Dataset, cfg: &TrimPenaltyConfig) -> Result<()> {
    cfg.validate(data.n())?;
    if cfg.gamma != 1.0 {
        return Err(invalid("solvers require gamma = 1"));
    }
    Ok(())
}

struct Solved {
    beta: Coefficients,
    kkt: f64,
    min_norm: bool,
}

fn solve_on(
    data: &Dataset,
    trim: &TrimSet,
    cfg: &TrimPenaltyConfig,
    warm: Option<&Coefficients>,
    context: &str,
) -> Result<Solved> {
    let sol = solve_enet_on_subset(data, trim, cfg, warm)?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            context: context.to_string(),
            iterations: sol.iterations,
            kkt: sol.kkt_residual,
        });
    }
    Ok(Solved {
        beta: sol.beta,
        kkt: sol.kkt_residual,
        min_norm: sol.min_norm_fallback,
    })
}

/// One concentration step: keep the `h` rows best fitted by `beta`, then
/// re-solve the convex problem on them, warm-started at `beta`.
///
/// Returns the new coefficients and the trim set they were fitted on.
pub fn c_step(
    data: &Dataset,
    beta: &Coefficients,
    cfg: &TrimPenaltyConfig,
) -> Result<(Coefficients, TrimSet)> {
    check_solver_cfg(data, cfg)?;
    let (solved, trim) = c_step_inner(data, beta, cfg)?;
    Ok((solved.beta, trim))
}

fn c_step_inner(
    data: &Dataset,
    beta: &Coefficients,
    cfg: &TrimPenaltyConfig,
) -> Result<(Solved, TrimSet)> {
    let trim = trim_for(data, beta, cfg.h)?;
    let solved = solve_on(data, &trim, cfg, Some(beta), "c-step subproblem")?;
    Ok((solved, trim))
}

struct Chain {
    solved: Solved,
    objective: f64,
    steps: usize,
}

/// Chains C-steps from `start` until the trim set repeats, the decrease
/// stalls, or [`MAX_CSTEPS`] is reached.
fn concentrate(data: &Dataset, start: Solved, cfg: &TrimPenaltyConfig) -> Result<Chain> {
    let mut current = start;
    let mut obj = objective(data, &current.beta, cfg)?;
    let mut steps = 0;
    while steps < MAX_CSTEPS {
        let (next, used) = c_step_inner(data, &current.beta, cfg)?;
        steps += 1;
        let next_obj = objective(data, &next.beta, cfg)?;
        let next_trim = trim_for(data, &next.beta, cfg.h)?;
        let decrease = obj - next_obj;
        current = next;
        obj = next_obj;
        if next_trim == used || decrease < CSTEP_DECREASE_TOL {
            break;
        }
    }
    Ok(Chain {
        solved: current,
        objective: obj,
        steps,
    })
}

fn random_start(data: &Dataset, cfg: &TrimPenaltyConfig, seed: u64, start: u64) -> Result<Chain> {
    let mut rng = stream_rng(seed, start);
    let rows = sample(&mut rng, data.n(), cfg.h).into_vec();
    let trim = TrimSet::from_indices(data.n(), rows)?;
    let solved = solve_on(data, &trim, cfg, None, "initial subset")?;
    concentrate(data, solved, cfg)
}

/// Lowest objective wins; ties go to the earliest candidate.
fn best_of(chains: Vec<Chain>) -> (usize, Chain) {
    let mut best: Option<(usize, Chain)> = None;
    for (i, c) in chains.into_iter().enumerate() {
        match &best {
            Some((_, b)) if b.objective <= c.objective => {}
            _ => best = Some((i, c)),
        }
    }
    best.expect("at least one candidate")
}

fn finish(
    data: &Dataset,
    cfg: &TrimPenaltyConfig,
    chain: Chain,
    method: Method,
    starts_used: usize,
    seed: Option<u64>,
) -> Result<FitResult> {
    let trim = trim_for(data, &chain.solved.beta, cfg.h)?;
    Ok(FitResult {
        objective_value: chain.objective,
        beta: chain.solved.beta,
        trim,
        method,
        starts_used,
        cstep_iterations: chain.steps,
        unique_flag: None,
        seed,
        kkt_residual: chain.solved.kkt,
        min_norm_fallback: chain.solved.min_norm,
    })
}

/// Multistart C-step heuristic from `n_starts` uniformly random h-subsets.
/// Deterministic for a given `seed`, regardless of thread count.
pub fn fit_cstep(
    data: &Dataset,
    cfg: &TrimPenaltyConfig,
    n_starts: usize,
    seed: u64,
) -> Result<FitResult> {
    check_solver_cfg(data, cfg)?;
    if n_starts == 0 {
        return Err(invalid("n_starts must be at least 1"));
    }
    let chains = (0..n_starts as u64)
        .into_par_iter()
        .map(|s| random_start(data, cfg, seed, s))
        .collect::<Result<Vec<_>>>()?;
    let (_, best) = best_of(chains);
    finish(data, cfg, best, Method::Cstep, n_starts, Some(seed))
}

/// Runs C-steps to a fixed point from a caller-supplied coefficient vector.
pub fn refine_from(
    data: &Dataset,
    beta: &Coefficients,
    cfg: &TrimPenaltyConfig,
) -> Result<FitResult> {
    check_solver_cfg(data, cfg)?;
    let (first, _) = c_step_inner(data, beta, cfg)?;
    let mut chain = concentrate(data, first, cfg)?;
    chain.steps += 1;
    finish(data, cfg, chain, Method::Cstep, 1, None)
}

/// Global minimizer by enumerating every h-subset and solving each convex
/// restricted problem.
pub fn fit_exact(data: &Dataset, cfg: &TrimPenaltyConfig, cap: u64) -> Result<FitResult> {
    check_solver_cfg(data, cfg)?;
    let n = data.n();
    match subset_count(n, cfg.h) {
        Some(c) if c <= cap => {}
        other => {
            let subsets = other
                .map(|c| c as f64)
                .unwrap_or_else(|| crate::bounds::log_binomial(n, cfg.h).map(f64::exp).unwrap_or(f64::INFINITY));
            return Err(Error::TooLarge { subsets, cap });
        }
    }
    let subsets: Vec<Vec<usize>> = (0..n).combinations(cfg.h).collect();
    let solved = subsets
        .into_par_iter()
        .map(|rows| {
            let trim = TrimSet::from_indices(n, rows)?;
            let s = solve_on(data, &trim, cfg, None, "exact subset solve")?;
            let value = subset_objective(data, &s.beta, &trim, cfg)?;
            Ok((value, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, (v, _)) in solved.iter().enumerate() {
        if *v < solved[best].0 {
            best = i;
        }
    }
    let best_value = solved[best].0;
    let unique = !solved.iter().enumerate().any(|(i, (v, s))| {
        i != best
            && (v - best_value).abs() <= TIE_OBJECTIVE
            && s.beta.max_abs_diff(&solved[best].1.beta) > TIE_COEFFICIENT
    });
    let starts = solved.len();
    let (_, winner) = solved.into_iter().nth(best).expect("index in range");
    let objective_value = objective(data, &winner.beta, cfg)?;
    let chain = Chain {
        solved: winner,
        objective: objective_value,
        steps: 0,
    };
    let mut fit = finish(data, cfg, chain, Method::Exact, starts, None)?;
    fit.unique_flag = Some(unique);
    Ok(fit)
}

/// Solves along a strictly decreasing `lambda1` grid. The first point is a
/// full multistart fit; later points chain C-steps from the previous solution
/// and also try `n_starts / 5` (at least one) fresh random starts.
pub fn fit_path(
    data: &Dataset,
    template: &TrimPenaltyConfig,
    lambda1_grid: &[f64],
    lambda2_ratio: f64,
    n_starts: usize,
    seed: u64,
) -> Result<PathResult> {
    if lambda1_grid.is_empty() {
        return Err(invalid("lambda1 grid is empty"));
    }
    if lambda1_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(invalid("lambda1 grid values must be positive"));
    }
    if lambda1_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("lambda1 grid must be strictly decreasing"));
    }
    if !(lambda2_ratio >= 0.0 && lambda2_ratio.is_finite()) {
        return Err(invalid("lambda2 ratio must be nonnegative"));
    }
    let mut entries: Vec<PathEntry> = Vec::with_capacity(lambda1_grid.len());
    for (k, &l1) in lambda1_grid.iter().enumerate() {
        let l2 = lambda2_ratio * l1;
        let cfg = template.with_lambdas(l1, l2);
        let fit = match entries.last() {
            None => fit_cstep(data, &cfg, n_starts, seed)?,
            Some(prev) => {
                check_solver_cfg(data, &cfg)?;
                let fresh = (n_starts / 5).max(1);
                let point_seed = stream_seed(seed, k as u64);
                let (first, _) = c_step_inner(data, &prev.fit.beta, &cfg)?;
                let mut warm = concentrate(data, first, &cfg)?;
                warm.steps += 1;
                let mut candidates = vec![warm];
                candidates.extend(
                    (0..fresh as u64)
                        .into_par_iter()
                        .map(|s| random_start(data, &cfg, point_seed, s))
                        .collect::<Result<Vec<_>>>()?,
                );
                let (_, best) = best_of(candidates);
                finish(data, &cfg, best, Method::Cstep, fresh + 1, Some(point_seed))?
            }
        };
        entries.push(PathEntry {
            lambda1: l1,
            lambda2: l2,
            fit,
        });
    }
    Ok(PathResult { entries })
}
