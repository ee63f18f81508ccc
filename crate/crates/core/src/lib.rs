//! Selling an asset near its ultimate maximum.
//!
//! The library implements the drawdown-crossing selling rule — sell the first
//! time the gap between the running maximum and the current price reaches a
//! decreasing forecast of the maximal future increment — together with the
//! machinery needed to study it:
//!
//! - [`paths`]: exact piecewise-linear price trajectories, running maxima,
//!   drawdowns, CSV ingestion.
//! - [`forecast`]: the worst-case (Lipschitz) and Brownian-quantile forecast
//!   variants and their shape validation.
//! - [`models`]: Poisson slope-switching and Bachelier path samplers with
//!   reproducible per-path seed streams.
//! - [`stopping`]: the crossing rule, deterministic rules, realized and
//!   estimated regrets, and the Lipschitz closed forms.
//! - [`montecarlo`]: deterministic parallel regret experiments with
//!   confidence intervals, the small-intensity approximations, and the
//!   martingale (optional-sampling) consistency check.
//! - [`special`]: normal CDF/quantile, the Kummer function, and the solver
//!   linking q-mean-optimal thresholds to quantile levels.
//! - [`oracle`]: exhaustive verification of the rule's optimality, Pareto
//!   optimality, uniqueness, and the before/after conditions on finite
//!   scenario trees.

// `!(x > 0.0)`-style guards are kept as written: they reject NaN parameters,
// which the suggested `x <= 0.0` rewrites would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod forecast;
pub mod models;
pub mod montecarlo;
pub mod oracle;
pub mod paths;
pub mod special;
pub mod stopping;

pub use forecast::{ForecastKind, ForecastSpec};
pub use models::{BachelierParams, PoissonSlopeParams};
pub use montecarlo::{ExperimentSpec, ModelParams, RegretReport};
pub use oracle::{ScenarioTree, TreeStoppingRule, VerificationReport};
pub use paths::{PricePath, PathStatistics};
pub use special::ZqSolution;
pub use stopping::{StopResult, StoppingRuleSpec};
