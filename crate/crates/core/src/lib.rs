//! Penalized least trimmed squares with an elastic-net penalty.

pub mod bounds;
pub mod enet;
pub mod error;
pub mod lts;
pub mod model;
mod rng;
pub mod simulate;

pub use enet::{solve_enet_on_subset, SubproblemSolution};
pub use error::{Error, Result};
pub use lts::{fit_cstep, fit_exact, fit_path, FitResult, Method, PathEntry, PathResult};
pub use model::{Coefficients, Dataset, TrimPenaltyConfig, TrimSet};
pub use rng::{stream_rng, stream_seed};

pub use nalgebra;
