//! Gramian-based model order reduction for large linear systems driven by
//! fractional Brownian motion with Hurst parameter `H ∈ [1/2, 1)`.
//!
//! The crate covers exact fBm increment sampling, Euler and implicit
//! midpoint time stepping, exact (H = 1/2) and empirical (any H) Gramians,
//! balancing and truncation, a-priori error bounds, and the spectral
//! Galerkin heat and wave benchmarks.

pub mod benchmarks;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod fbm;
pub mod gramians;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod reduce;

pub use benchmarks::{HeatConfig, WaveConfig};
pub use bounds::{Approximant, BoundReport, ErrorEstimate, ErrorSpec};
pub use error::{MorError, Result};
pub use fbm::{FbmIncrementSample, FbmSampler, HurstParam, UniformGrid};
pub use gramians::{EmpiricalSpec, GramianSet, Horizon, Provenance};
pub use integrate::{ControlSignal, FundamentalSample, Propagator, Scheme, Trajectory};
pub use model::{Interpretation, KroneckerGenerator, StabilityReport, StochasticLinearSystem};
pub use reduce::{BalancedRealization, PodBasis, Recipe, ReducedOrderModel, SplittingRom};
