//! Forecasts of the maximal future price increment.
//!
//! A forecast assigns to each time `t` an upper estimate (or quantile
//! surrogate) of how far the price can still rise above its current level
//! before the horizon. Two variants are provided:
//!
//! - worst case under a Lipschitz band: `up_slope · (T − t)`;
//! - Brownian quantile: `c_δ · √(T − t)` with `c_δ = σ · Φ⁻¹((1+δ)/2)`,
//!   the δ-quantile of the running maximum of Brownian motion over `[t, T]`.
//!
//! Both are continuous, strictly decreasing, and vanish exactly at the
//! horizon; `validate` checks those shape properties on a sample grid.
//!
//! Forecasts here depend on time and static parameters only. A forecast
//! could in principle read the observed history too; nothing downstream
//! needs that, so no such variant is provided.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("invalid forecast parameter: {0}")]
    InvalidParameter(String),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
}

/// Forecast variant and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastKind {
    /// Worst-case increment for paths with segment slopes at most `up_slope`.
    LipschitzWorstCase { up_slope: f64 },
    /// δ-quantile of the future running-maximum increment under arithmetic
    /// Brownian motion with volatility `sigma`. `c_delta` is precomputed at
    /// construction so evaluation stays quantile-solve free.
    BrownianQuantile { sigma: f64, delta: f64, c_delta: f64 },
}

/// A forecast function on `[0, T]`. Immutable; evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForecastRepr", into = "ForecastRepr")]
pub struct ForecastSpec {
    kind: ForecastKind,
    horizon: f64,
}

/// Default sample count for [`ForecastSpec::validate`].
pub const DEFAULT_SHAPE_CHECKS: usize = 1024;

impl ForecastSpec {
    /// Worst-case forecast `up_slope · (T − t)`.
    pub fn lipschitz(up_slope: f64, horizon: f64) -> Result<Self, ForecastError> {
        if !(up_slope > 0.0) || !up_slope.is_finite() {
            return Err(ForecastError::InvalidParameter(format!("up_slope must be > 0, got {up_slope}")));
        }
        check_horizon(horizon)?;
        Ok(Self { kind: ForecastKind::LipschitzWorstCase { up_slope }, horizon })
    }

    /// Quantile forecast `c_δ · √(T − t)` for Brownian prices.
    pub fn brownian_quantile(sigma: f64, delta: f64, horizon: f64) -> Result<Self, ForecastError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(ForecastError::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ForecastError::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
        }
        check_horizon(horizon)?;
        let c_delta = sigma
            * special::normal_quantile(0.5 * (1.0 + delta))
                .map_err(|e| ForecastError::InvalidParameter(e.to_string()))?;
        Ok(Self { kind: ForecastKind::BrownianQuantile { sigma, delta, c_delta }, horizon })
    }

    pub fn kind(&self) -> &ForecastKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The quantile threshold `c_δ`, if this is a quantile forecast.
    pub fn c_delta(&self) -> Option<f64> {
        match self.kind {
            ForecastKind::BrownianQuantile { c_delta, .. } => Some(c_delta),
            ForecastKind::LipschitzWorstCase { .. } => None,
        }
    }

    /// Forecast value at time `t`; exactly 0 at the horizon.
    pub fn value_at(&self, t: f64) -> Result<f64, ForecastError> {
        if !t.is_finite() || t < 0.0 || t > self.horizon {
            return Err(ForecastError::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(match self.kind {
            ForecastKind::LipschitzWorstCase { up_slope } => up_slope * (self.horizon - t),
            ForecastKind::BrownianQuantile { c_delta, .. } => c_delta * (self.horizon - t).sqrt(),
        })
    }

    /// Check the shape properties on an `n_check`-point grid: terminal value
    /// 0 (tolerance 1e-12) and strict decrease between consecutive samples.
    pub fn validate(&self, n_check: usize) -> ShapeReport {
        let horizon = self.horizon;
        validate_forecast_samples(|t| self.value_at(t).expect("grid point within horizon"), horizon, n_check)
    }
}

fn check_horizon(horizon: f64) -> Result<(), ForecastError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(ForecastError::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(())
}

/// Grid check of the forecast shape properties for an arbitrary sampler.
///
/// Violations are report entries, not errors, so deliberately broken
/// candidates (e.g. a constant function) can be inspected.
pub fn validate_forecast_samples(f: impl Fn(f64) -> f64, horizon: f64, n_check: usize) -> ShapeReport {
    assert!(n_check >= 2, "n_check must be at least 2");
    let mut violations = Vec::new();
    let mut prev = f(0.0);
    for i in 1..n_check {
        let t = if i == n_check - 1 { horizon } else { horizon * i as f64 / (n_check - 1) as f64 };
        let v = f(t);
        if v >= prev {
            violations.push(ShapeViolation::NotStrictlyDecreasing {
                t,
                value: v,
                previous: prev,
            });
        }
        prev = v;
    }
    let terminal = f(horizon);
    if terminal.abs() > 1e-12 {
        violations.push(ShapeViolation::TerminalNotZero { value: terminal });
    }
    ShapeReport { n_check, violations }
}

/// Result of a forecast shape check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub n_check: usize,
    pub violations: Vec<ShapeViolation>,
}

impl ShapeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShapeViolation {
    /// Value at the horizon differs from zero beyond tolerance.
    TerminalNotZero { value: f64 },
    /// Consecutive grid samples failed to strictly decrease.
    NotStrictlyDecreasing { t: f64, value: f64, previous: f64 },
}

// JSON wire format: {"kind":"lipschitz","L2":..,"T":..} or
// {"kind":"brownian_quantile","sigma":..,"delta":..,"T":..}
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ForecastRepr {
    #[serde(rename = "lipschitz")]
    Lipschitz {
        #[serde(rename = "L2")]
        up_slope: f64,
        #[serde(rename = "T")]
        horizon: f64,
    },
    #[serde(rename = "brownian_quantile")]
    BrownianQuantile {
        sigma: f64,
        delta: f64,
        #[serde(rename = "T")]
        horizon: f64,
    },
}

impl TryFrom<ForecastRepr> for ForecastSpec {
    type Error = ForecastError;
    fn try_from(repr: ForecastRepr) -> Result<Self, ForecastError> {
        match repr {
            ForecastRepr::Lipschitz { up_slope, horizon } => ForecastSpec::lipschitz(up_slope, horizon),
            ForecastRepr::BrownianQuantile { sigma, delta, horizon } => {
                ForecastSpec::brownian_quantile(sigma, delta, horizon)
            }
        }
    }
}

impl From<ForecastSpec> for ForecastRepr {
    fn from(spec: ForecastSpec) -> Self {
        match spec.kind {
            ForecastKind::LipschitzWorstCase { up_slope } => {
                ForecastRepr::Lipschitz { up_slope, horizon: spec.horizon }
            }
            ForecastKind::BrownianQuantile { sigma, delta, .. } => {
                ForecastRepr::BrownianQuantile { sigma, delta, horizon: spec.horizon }
            }
        }
    }
}
