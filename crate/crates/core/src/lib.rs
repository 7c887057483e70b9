//! Gaussian filtering and fixed-lag smoothing of a fluctuating magnetic field
//! seen through a continuously probed atomic ensemble.
//!
//! Covariances are stored as `gamma = 2 * Cov` throughout, so the variance of
//! coordinate `i` is `gamma[(i, i)] / 2`.

pub mod config;
pub mod delay;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod gaussian;
pub mod io;
pub mod physics;
pub mod smoother;
pub mod truth;

pub use error::{Error, Result};
pub use filter::{run_filter, EstimateTrace};
pub use gaussian::{BlockPartition, GaussianBelief};
pub use physics::{OuParams, PhysicsParams};
pub use smoother::{run_smoother, LagConfig, SmoothedTrace};
pub use truth::{run_truth, FieldSource, MeasurementRecord};

/// Generator used for every random draw.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Generator for realization `index` of an ensemble started from `master`.
pub fn realization_rng(master: u64, index: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(master.wrapping_add(index))
}
