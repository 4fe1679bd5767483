//! Chinchilla scaling-law estimation toolkit.
//!
//! The crate covers three families of estimators for compute-optimal
//! allocation (the parabolic IsoFLOP pipeline, direct five-parameter surface
//! fits, and variable projection over the exponents), a simulator for
//! IsoFLOP experiments with controlled sampling bias and noise, the
//! quality-control pipeline used on real IsoFLOP data, and the misallocation
//! metrics (deadweight compute, dollar cost) used to compare them.
//!
//! Conventions used throughout:
//! - allocation laws, intercepts and IsoFLOP sampling grids are in `log10`;
//! - the log-sum-exp reparameterization of direct fits uses natural logs;
//! - compute is exactly `C = 6 N D`.
//!
//! ```
//! use isoflop_core::fit::{fit_method, FitOptions};
//! use isoflop_core::simulate::{add_noise, build_experiment, standard_budgets, BiasSpec, GridSpec, NoiseSpec};
//! use isoflop_core::{LossSurface, Method};
//!
//! let grid = GridSpec::named("L", 15)?;
//! let exp = build_experiment(&LossSurface::CHINCHILLA, &standard_budgets(), &grid, BiasSpec::None)?;
//! let noisy = add_noise(&exp, NoiseSpec { sigma: 0.02, seed: 1 })?;
//! let fit = fit_method(Method::VpnlsQuasiNewton, &noisy.points, &FitOptions::default())?;
//! assert!((fit.law.b - 0.548).abs() < 0.05);
//! # Ok::<(), isoflop_core::Error>(())
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod approach2;
pub mod data;
pub mod direct;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod linsolve;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod qc;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod sweep;
pub mod vpnls;

pub use data::{Dataset, Observation};
pub use error::{Error, Result};
pub use fit::{FitResult, Method};
pub use model::{Allocation, AllocationLaw, LossSurface};

/// Crate version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
