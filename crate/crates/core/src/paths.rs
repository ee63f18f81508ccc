//! Continuous piecewise-linear price trajectories on a finite horizon.
//!
//! A [`PricePath`] is an ordered list of (time, price) knots starting at time
//! zero; the price at any interior time is the linear interpolation between
//! the bracketing knots, so running maxima and drawdowns are computed exactly
//! from the knot list with no grid.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from path construction, evaluation, and CSV ingestion.
#[derive(Debug, Error)]
pub enum PathError {
    #[error("a path needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("first knot must be at time 0, got {0}")]
    FirstKnotNotZero(f64),
    #[error("knot times must be strictly increasing: t[{index}]={t} after {prev}")]
    NonIncreasingTimes { index: usize, t: f64, prev: f64 },
    #[error("non-finite knot at index {0}")]
    NonFiniteKnot(usize),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("paths have different horizons: {0} vs {1}")]
    HorizonMismatch(f64, f64),
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("csv read error: {0}")]
    CsvIo(#[from] csv::Error),
}

/// One (time, price) sample of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub time: f64,
    pub price: f64,
}

/// Running maximum and drawdown of a path at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    /// Maximum price observed up to `at_time`.
    pub running_max: f64,
    /// Gap between the running maximum and the current price (≥ 0).
    pub drawdown: f64,
    pub at_time: f64,
}

/// A continuous piecewise-linear price trajectory on `[0, T]`.
///
/// Immutable after construction; all evaluation methods are pure, so values
/// can be shared freely across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Knot>", into = "Vec<Knot>")]
pub struct PricePath {
    knots: Vec<Knot>,
}

impl TryFrom<Vec<Knot>> for PricePath {
    type Error = PathError;
    fn try_from(knots: Vec<Knot>) -> Result<Self, PathError> {
        PricePath::from_knots(knots)
    }
}

impl From<PricePath> for Vec<Knot> {
    fn from(path: PricePath) -> Self {
        path.knots
    }
}

impl PricePath {
    /// Build a path from (time, price) pairs.
    ///
    /// Knot times must be finite, strictly increasing, and start at 0; the
    /// last knot time defines the horizon `T`.
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, PathError> {
        Self::from_knots(points.into_iter().map(|(time, price)| Knot { time, price }).collect())
    }

    pub fn from_knots(knots: Vec<Knot>) -> Result<Self, PathError> {
        if knots.len() < 2 {
            return Err(PathError::TooFewKnots(knots.len()));
        }
        if knots[0].time != 0.0 {
            return Err(PathError::FirstKnotNotZero(knots[0].time));
        }
        for (i, k) in knots.iter().enumerate() {
            if !k.time.is_finite() || !k.price.is_finite() {
                return Err(PathError::NonFiniteKnot(i));
            }
            if i > 0 && k.time <= knots[i - 1].time {
                return Err(PathError::NonIncreasingTimes { index: i, t: k.time, prev: knots[i - 1].time });
            }
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Horizon `T`, the time of the last knot.
    pub fn horizon(&self) -> f64 {
        self.knots[self.knots.len() - 1].time
    }

    pub fn initial_price(&self) -> f64 {
        self.knots[0].price
    }

    fn check_time(&self, t: f64) -> Result<(), PathError> {
        if !t.is_finite() || t < 0.0 || t > self.horizon() {
            return Err(PathError::TimeOutOfRange { t, horizon: self.horizon() });
        }
        Ok(())
    }

    /// Index of the segment `[knots[i], knots[i+1]]` containing `t`, assuming
    /// `t` is in range. Returns the left knot index; exact knot hits resolve
    /// to the knot's own index.
    fn segment_index(&self, t: f64) -> usize {
        // first knot with time > t, minus one
        let upper = self.knots.partition_point(|k| k.time <= t);
        upper.saturating_sub(1).min(self.knots.len() - 2)
    }

    /// Price at time `t` by linear interpolation; exact at the knots.
    pub fn price_at(&self, t: f64) -> Result<f64, PathError> {
        self.check_time(t)?;
        let i = self.segment_index(t);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        if t == a.time {
            return Ok(a.price);
        }
        if t == b.time {
            return Ok(b.price);
        }
        Ok(a.price + (b.price - a.price) * ((t - a.time) / (b.time - a.time)))
    }

    /// Running maximum `max_{s ≤ t} X_s`, exact for piecewise-linear paths:
    /// the max over knot prices up to `t` and the interpolated price at `t`.
    pub fn running_max(&self, t: f64) -> Result<f64, PathError> {
        self.check_time(t)?;
        let mut m = f64::NEG_INFINITY;
        for k in &self.knots {
            if k.time > t {
                break;
            }
            m = m.max(k.price);
        }
        Ok(m.max(self.price_at(t)?))
    }

    /// Drawdown `running_max(t) − price(t)` (always ≥ 0).
    pub fn drawdown(&self, t: f64) -> Result<f64, PathError> {
        Ok(self.running_max(t)? - self.price_at(t)?)
    }

    pub fn statistics_at(&self, t: f64) -> Result<PathStatistics, PathError> {
        let running_max = self.running_max(t)?;
        let price = self.price_at(t)?;
        Ok(PathStatistics { running_max, drawdown: running_max - price, at_time: t })
    }

    /// Maximum price over the whole horizon.
    pub fn global_max(&self) -> f64 {
        self.knots.iter().fold(f64::NEG_INFINITY, |m, k| m.max(k.price))
    }

    /// Whether two paths agree within `tol` on `[0, t]`.
    ///
    /// Checked on the union of both paths' knot times up to `t` plus `t`
    /// itself, which is sufficient for piecewise-linear paths.
    pub fn same_prefix(&self, other: &PricePath, t: f64, tol: f64) -> Result<bool, PathError> {
        if self.horizon() != other.horizon() {
            return Err(PathError::HorizonMismatch(self.horizon(), other.horizon()));
        }
        self.check_time(t)?;
        let times = self
            .knots
            .iter()
            .chain(other.knots.iter())
            .map(|k| k.time)
            .filter(|&s| s <= t)
            .chain(std::iter::once(t));
        for s in times {
            if (self.price_at(s)? - other.price_at(s)?).abs() > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Parse a path from CSV with header `t,price`, rows strictly increasing
    /// in `t` starting at 0; the final row's `t` defines the horizon.
    pub fn from_csv_reader(reader: impl io::Read) -> Result<Self, PathError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers()?;
            if headers.len() < 2 || headers.get(0) != Some("t") || headers.get(1) != Some("price") {
                return Err(PathError::Csv {
                    line: 1,
                    message: format!("expected header `t,price`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
                });
            }
        }
        let mut knots = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |idx: usize, name: &str| -> Result<f64, PathError> {
                record
                    .get(idx)
                    .ok_or_else(|| PathError::Csv { line, message: format!("missing {name} column") })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| PathError::Csv { line, message: format!("bad {name} value: {e}") })
            };
            knots.push(Knot { time: parse(0, "t")?, price: parse(1, "price")? });
        }
        Self::from_knots(knots).map_err(|e| match e {
            PathError::Csv { .. } | PathError::CsvIo(_) => e,
            other => PathError::Csv { line: 0, message: other.to_string() },
        })
    }

    pub fn from_csv_str(s: &str) -> Result<Self, PathError> {
        Self::from_csv_reader(s.as_bytes())
    }

    /// Serialize to the `t,price` CSV format at full precision.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,price\n");
        for k in &self.knots {
            out.push_str(&format!("{:?},{:?}\n", k.time, k.price));
        }
        out
    }
}
