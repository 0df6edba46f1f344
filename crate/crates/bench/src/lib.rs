//! Shared fixtures for the solver benchmarks.

use robust_trim::simulate::{generate_instance, SimConfig};
use robust_trim::Dataset;

/// Gaussian design with a sparse truth, as used by the coverage experiments.
pub fn fixture(n: usize, p: usize, h: usize, seed: u64) -> Dataset {
    let cfg = SimConfig { n, p, s0: 3.min(p - 1), h, n_trials: 1, seed, ..Default::default() };
    generate_instance(&cfg, 0).expect("valid fixture config").data
}
