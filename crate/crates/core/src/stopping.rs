//! Stopping rules and their regrets.
//!
//! The central operation is [`perfect_stop`]: the first time the drawdown
//! process `X*_s − X_s` reaches the forecast of the maximal future increment.
//! On a piecewise-linear path the drawdown is itself piecewise affine (with
//! extra breakpoints where the running maximum updates), so against an affine
//! forecast every crossing is solved in closed form, and against the
//! `√(T−s)` quantile forecast the crossing is bracketed per affine piece and
//! bisected. A stop always exists: the drawdown at the horizon is ≥ 0, where
//! the forecast has decayed to exactly 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{ForecastError, ForecastKind, ForecastSpec};
use crate::paths::{PathError, PricePath};

#[derive(Debug, Error)]
pub enum StoppingError {
    #[error("path horizon {path} does not match forecast horizon {forecast}")]
    HorizonMismatch { path: f64, forecast: f64 },
    #[error("crossing tolerance must be > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// A selling rule: either the drawdown-crossing rule attached to a forecast,
/// or an unconditional stop at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingRuleSpec {
    Perfect { forecast: ForecastSpec },
    Deterministic { u: f64 },
}

/// Where a rule stopped on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopResult {
    pub stop_time: f64,
    pub stop_price: f64,
    pub drawdown_at_stop: f64,
    /// Forecast value at the stop; `None` for deterministic rules, which
    /// carry no forecast of their own.
    pub psi_at_stop: Option<f64>,
}

/// One maximal piece of the drawdown on which it is affine:
/// `D(s) = d0 + slope · (s − s0)` for `s ∈ [s0, s1]`.
#[derive(Clone, Copy)]
struct AffinePiece {
    s0: f64,
    s1: f64,
    d0: f64,
    slope: f64,
}

impl AffinePiece {
    fn drawdown_at(&self, s: f64) -> f64 {
        self.d0 + self.slope * (s - self.s0)
    }
}

/// First time the drawdown reaches the forecast (the drawdown-crossing rule).
///
/// The crossing condition uses `≥`, so a tangential touch stops at its first
/// time. `tol` bounds both the time bracket and the residual
/// `|drawdown − forecast|` at an interior crossing.
pub fn perfect_stop(path: &PricePath, forecast: &ForecastSpec, tol: f64) -> Result<StopResult, StoppingError> {
    if path.horizon() != forecast.horizon() {
        return Err(StoppingError::HorizonMismatch { path: path.horizon(), forecast: forecast.horizon() });
    }
    if !(tol > 0.0) {
        return Err(StoppingError::InvalidTolerance(tol));
    }

    let knots = path.knots();
    let mut running_max = knots[0].price;
    let mut stop_time = path.horizon();

    'segments: for w in knots.windows(2) {
        let (t0, x0) = (w[0].time, w[0].price);
        let (t1, x1) = (w[1].time, w[1].price);
        let b = (x1 - x0) / (t1 - t0);

        let mut pieces = [None::<AffinePiece>; 2];
        if b > 0.0 && x0 >= running_max {
            // riding the running maximum: zero drawdown throughout
            pieces[0] = Some(AffinePiece { s0: t0, s1: t1, d0: 0.0, slope: 0.0 });
        } else if b > 0.0 && x1 > running_max {
            // recovers the maximum mid-segment
            let ts = (t0 + (running_max - x0) / b).clamp(t0, t1);
            if ts > t0 {
                pieces[0] = Some(AffinePiece { s0: t0, s1: ts, d0: running_max - x0, slope: -b });
            }
            if ts < t1 {
                pieces[1] = Some(AffinePiece { s0: ts, s1: t1, d0: 0.0, slope: 0.0 });
            }
        } else {
            pieces[0] = Some(AffinePiece { s0: t0, s1: t1, d0: running_max - x0, slope: -b });
        }

        for piece in pieces.into_iter().flatten() {
            if let Some(s) = crossing_in_piece(&piece, forecast, tol)? {
                stop_time = s;
                break 'segments;
            }
        }
        running_max = running_max.max(x1);
    }

    finish_stop(path, forecast, stop_time)
}

fn finish_stop(path: &PricePath, forecast: &ForecastSpec, stop_time: f64) -> Result<StopResult, StoppingError> {
    let stats = path.statistics_at(stop_time)?;
    Ok(StopResult {
        stop_time,
        stop_price: path.price_at(stop_time)?,
        drawdown_at_stop: stats.drawdown,
        psi_at_stop: Some(forecast.value_at(stop_time)?),
    })
}

/// First `s` in the piece with `drawdown(s) ≥ forecast(s)`, if any.
fn crossing_in_piece(
    piece: &AffinePiece,
    forecast: &ForecastSpec,
    tol: f64,
) -> Result<Option<f64>, StoppingError> {
    let g0 = piece.drawdown_at(piece.s0) - forecast.value_at(piece.s0)?;
    if g0 >= 0.0 {
        return Ok(Some(piece.s0));
    }
    let g1 = piece.drawdown_at(piece.s1) - forecast.value_at(piece.s1)?;
    if g1 < 0.0 {
        // no interior crossing: the gap is affine against an affine forecast,
        // and convex against the √(T−s) forecast, so negative endpoints mean
        // negative throughout
        return Ok(None);
    }
    let s = match *forecast.kind() {
        ForecastKind::LipschitzWorstCase { up_slope } => {
            // d0 + slope (s − s0) = up_slope (T − s)
            let denom = piece.slope + up_slope;
            debug_assert!(denom > 0.0, "crossing exists so the gap must rise");
            ((up_slope * forecast.horizon() - piece.d0 + piece.slope * piece.s0) / denom)
                .clamp(piece.s0, piece.s1)
        }
        ForecastKind::BrownianQuantile { .. } => bisect_crossing(piece, forecast, tol)?,
    };
    Ok(Some(s))
}

/// Bisection on `[s0, s1]` with `gap(s0) < 0 ≤ gap(s1)`; returns the upper
/// bracket end, the first time known to satisfy the crossing within `tol`.
fn bisect_crossing(piece: &AffinePiece, forecast: &ForecastSpec, tol: f64) -> Result<f64, StoppingError> {
    let mut lo = piece.s0;
    let mut hi = piece.s1;
    let gap = |s: f64| -> Result<f64, StoppingError> { Ok(piece.drawdown_at(s) - forecast.value_at(s)?) };
    for _ in 0..200 {
        if hi - lo <= tol && gap(hi)?.abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // float resolution exhausted
        }
        if gap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Evaluate a rule on a path.
pub fn apply_rule(path: &PricePath, rule: &StoppingRuleSpec, tol: f64) -> Result<StopResult, StoppingError> {
    match rule {
        StoppingRuleSpec::Perfect { forecast } => perfect_stop(path, forecast, tol),
        StoppingRuleSpec::Deterministic { u } => {
            let stats = path.statistics_at(*u)?;
            Ok(StopResult {
                stop_time: *u,
                stop_price: path.price_at(*u)?,
                drawdown_at_stop: stats.drawdown,
                psi_at_stop: None,
            })
        }
    }
}

/// Realized regret of selling at `stop_time`: the gap between the whole-path
/// maximum and the selling price. Unknowable before the horizon.
pub fn realized_regret(path: &PricePath, stop_time: f64) -> Result<f64, StoppingError> {
    Ok(path.global_max() - path.price_at(stop_time)?)
}

/// Estimated regret of selling at `stop_time`: the larger of the drawdown at
/// the stop and the forecast at the stop. Observable at the stop itself.
pub fn estimated_regret(path: &PricePath, stop_time: f64, forecast: &ForecastSpec) -> Result<f64, StoppingError> {
    if path.horizon() != forecast.horizon() {
        return Err(StoppingError::HorizonMismatch { path: path.horizon(), forecast: forecast.horizon() });
    }
    Ok(path.drawdown(stop_time)?.max(forecast.value_at(stop_time)?))
}

fn check_band_args(t: f64, drawdown_t: f64, down_slope: f64, up_slope: f64, horizon: f64) -> Result<(), StoppingError> {
    let bad = |msg: String| Err(StoppingError::InvalidParameter(msg));
    if !(down_slope > 0.0 && up_slope > 0.0) {
        return bad(format!("slopes must be > 0, got down={down_slope}, up={up_slope}"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return bad(format!("horizon must be > 0, got {horizon}"));
    }
    if !(0.0..=horizon).contains(&t) {
        return bad(format!("t={t} outside [0, {horizon}]"));
    }
    if !(drawdown_t >= 0.0) {
        return bad(format!("drawdown must be >= 0, got {drawdown_t}"));
    }
    Ok(())
}

/// Lower bound on the crossing time given the state `(t, drawdown)` under a
/// Lipschitz band: no band path can cross before
/// `(down·t + up·T − drawdown) / (down + up)`, and the steepest decline
/// attains the bound exactly.
pub fn perfect_stop_lower_bound(
    t: f64,
    drawdown_t: f64,
    down_slope: f64,
    up_slope: f64,
    horizon: f64,
) -> Result<f64, StoppingError> {
    check_band_args(t, drawdown_t, down_slope, up_slope, horizon)?;
    Ok((down_slope * t + up_slope * horizon - drawdown_t) / (down_slope + up_slope))
}

/// Worst-case estimated regret of the crossing rule from state `(t, drawdown)`
/// under a Lipschitz band: the convex combination
/// `up/(down+up) · drawdown + down/(down+up) · up · (T − t)`.
///
/// Requires `drawdown ≤ up·(T − t)` (otherwise the crossing already occurred).
pub fn worst_case_regret_lipschitz(
    t: f64,
    drawdown_t: f64,
    down_slope: f64,
    up_slope: f64,
    horizon: f64,
) -> Result<f64, StoppingError> {
    check_band_args(t, drawdown_t, down_slope, up_slope, horizon)?;
    let cap = up_slope * (horizon - t);
    if drawdown_t > cap + 1e-12 * (1.0 + cap) {
        return Err(StoppingError::InvalidParameter(format!(
            "drawdown {drawdown_t} exceeds the pre-crossing bound {cap}"
        )));
    }
    let total = down_slope + up_slope;
    Ok(up_slope / total * drawdown_t + down_slope / total * cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-10;

    fn path(points: &[(f64, f64)]) -> PricePath {
        PricePath::new(points.iter().copied()).unwrap()
    }

    fn lipschitz_unit() -> ForecastSpec {
        ForecastSpec::lipschitz(1.0, 1.0).unwrap()
    }

    /// Brute-force oracle: first grid time with drawdown ≥ forecast.
    fn grid_scan_stop(path: &PricePath, forecast: &ForecastSpec, n: usize) -> f64 {
        let horizon = path.horizon();
        for i in 0..=n {
            let t = horizon * i as f64 / n as f64;
            if path.drawdown(t).unwrap() >= forecast.value_at(t).unwrap() {
                return t;
            }
        }
        horizon
    }

    #[test]
    fn declining_path_stops_halfway() {
        let p = path(&[(0.0, 0.0), (1.0, -1.0)]);
        let r = perfect_stop(&p, &lipschitz_unit(), TOL).unwrap();
        assert!((r.stop_time - 0.5).abs() < 1e-12);
        assert!((r.drawdown_at_stop - r.psi_at_stop.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rising_path_stops_at_horizon() {
        let p = path(&[(0.0, 0.0), (0.4, 0.2), (1.0, 1.0)]);
        let r = perfect_stop(&p, &lipschitz_unit(), TOL).unwrap();
        assert_eq!(r.stop_time, 1.0);
        assert_eq!(r.drawdown_at_stop, 0.0);
        assert_eq!(r.psi_at_stop, Some(0.0));
    }

    #[test]
    fn peak_then_decline_crossing() {
        // peak 0.25 at t=0.25, then slope -1: drawdown s - 0.25 meets 1 - s
        // at s = 0.625
        let p = path(&[(0.0, 0.0), (0.25, 0.25), (1.0, -0.5)]);
        let r = perfect_stop(&p, &lipschitz_unit(), TOL).unwrap();
        assert!((r.stop_time - 0.625).abs() < 1e-12);
        // agrees with the brute-force grid scan up to grid resolution
        let g = grid_scan_stop(&p, &lipschitz_unit(), 100_000);
        assert!((r.stop_time - g).abs() < 2e-5);
    }

    #[test]
    fn crossing_matches_grid_scan_on_wiggly_path() {
        let p = path(&[(0.0, 0.0), (0.2, 0.15), (0.35, 0.05), (0.5, 0.3), (0.7, 0.1), (1.0, -0.2)]);
        let f = lipschitz_unit();
        let r = perfect_stop(&p, &f, TOL).unwrap();
        let g = grid_scan_stop(&p, &f, 200_000);
        assert!((r.stop_time - g).abs() < 1e-5, "exact {} vs grid {}", r.stop_time, g);
        assert!((r.drawdown_at_stop - r.psi_at_stop.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn sqrt_forecast_crossing_by_bisection() {
        let f = ForecastSpec::brownian_quantile(1.0, 0.74, 1.0).unwrap();
        let p = path(&[(0.0, 0.0), (0.3, 1.5), (1.0, -1.0)]);
        let r = perfect_stop(&p, &f, TOL).unwrap();
        let g = grid_scan_stop(&p, &f, 400_000);
        assert!((r.stop_time - g).abs() < 1e-5, "exact {} vs grid {}", r.stop_time, g);
        assert!((r.drawdown_at_stop - r.psi_at_stop.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let p = path(&[(0.0, 0.0), (2.0, 1.0)]);
        assert!(matches!(
            perfect_stop(&p, &lipschitz_unit(), TOL),
            Err(StoppingError::HorizonMismatch { .. })
        ));
        assert!(matches!(perfect_stop(&path(&[(0.0, 0.0), (1.0, 1.0)]), &lipschitz_unit(), 0.0),
            Err(StoppingError::InvalidTolerance(_))));
    }

    #[test]
    fn deterministic_rule_fields() {
        let p = path(&[(0.0, 1.0), (0.5, 2.0), (1.0, 0.5)]);
        let r = apply_rule(&p, &StoppingRuleSpec::Deterministic { u: 1.0 }, TOL).unwrap();
        assert_eq!(r.stop_time, 1.0);
        assert_eq!(r.stop_price, 0.5);
        assert_eq!(r.psi_at_stop, None);
        let r = apply_rule(&p, &StoppingRuleSpec::Deterministic { u: 0.0 }, TOL).unwrap();
        assert_eq!(r.stop_time, 0.0);
        assert_eq!(r.drawdown_at_stop, 0.0);
        assert!(apply_rule(&p, &StoppingRuleSpec::Deterministic { u: 1.5 }, TOL).is_err());
    }

    #[test]
    fn perfect_rule_via_apply() {
        let p = path(&[(0.0, 0.0), (1.0, -1.0)]);
        let rule = StoppingRuleSpec::Perfect { forecast: lipschitz_unit() };
        let r = apply_rule(&p, &rule, TOL).unwrap();
        assert!((r.stop_time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn realized_regret_cases() {
        let rising = path(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(realized_regret(&rising, 1.0).unwrap(), 0.0);
        let falling = path(&[(0.0, 0.0), (1.0, -1.0)]);
        assert!((realized_regret(&falling, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let tent = path(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        assert_eq!(realized_regret(&tent, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn estimated_regret_cases() {
        let f = lipschitz_unit();
        let tent = path(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.2)]);
        // at the horizon the forecast is 0, so only the drawdown remains
        assert!((estimated_regret(&tent, 1.0, &f).unwrap() - 0.8).abs() < 1e-15);
        // at time 0 the drawdown is 0, so only the forecast remains
        assert_eq!(estimated_regret(&tent, 0.0, &f).unwrap(), 1.0);
        // at the crossing both coincide
        let p = path(&[(0.0, 0.0), (1.0, -1.0)]);
        let r = perfect_stop(&p, &f, TOL).unwrap();
        let e = estimated_regret(&p, r.stop_time, &f).unwrap();
        assert!((e - r.psi_at_stop.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_values() {
        assert_eq!(perfect_stop_lower_bound(0.0, 0.0, 1.0, 1.0, 1.0).unwrap(), 0.5);
        assert!((perfect_stop_lower_bound(0.5, 0.2, 1.0, 1.0, 1.0).unwrap() - 0.65).abs() < 1e-15);
        // already at the crossing boundary: bound collapses to t
        let t = 0.3;
        let d = 1.0 * (1.0 - t);
        assert!((perfect_stop_lower_bound(t, d, 1.0, 1.0, 1.0).unwrap() - t).abs() < 1e-15);
        assert!(perfect_stop_lower_bound(-0.1, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(perfect_stop_lower_bound(0.0, -1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn worst_case_regret_values() {
        assert_eq!(worst_case_regret_lipschitz(0.0, 0.0, 1.0, 1.0, 1.0).unwrap(), 0.5);
        assert!((worst_case_regret_lipschitz(0.5, 0.2, 1.0, 1.0, 1.0).unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(worst_case_regret_lipschitz(1.0, 0.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(worst_case_regret_lipschitz(0.9, 0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn extremal_decline_attains_bound_and_regret() {
        // history rises to 0.3 then falls at slope -1 to (0.5, 0.1): drawdown 0.2
        // extremal continuation keeps slope -1
        let p = path(&[(0.0, 0.0), (0.3, 0.3), (1.0, -0.4)]);
        let f = lipschitz_unit();
        let r = perfect_stop(&p, &f, TOL).unwrap();
        let bound = perfect_stop_lower_bound(0.5, 0.2, 1.0, 1.0, 1.0).unwrap();
        assert!((r.stop_time - bound).abs() < 1e-9, "stop {} vs bound {}", r.stop_time, bound);
        let regret = estimated_regret(&p, r.stop_time, &f).unwrap();
        let worst = worst_case_regret_lipschitz(0.5, 0.2, 1.0, 1.0, 1.0).unwrap();
        assert!((regret - worst).abs() < 1e-9);
    }

    #[test]
    fn adapted_to_the_stopped_prefix() {
        let base = path(&[(0.0, 0.0), (0.2, 0.2), (0.6, -0.2), (1.0, 0.1)]);
        let f = lipschitz_unit();
        let r = perfect_stop(&base, &f, TOL).unwrap();
        assert!(r.stop_time < 1.0 - 1e-3);
        // splice arbitrary continuations just after the stop
        let eps = 1e-3;
        let cut = r.stop_time + eps;
        let price_at_cut = base.price_at(cut).unwrap();
        for cont in [0.9_f64, -0.9, 0.0] {
            let mut knots: Vec<(f64, f64)> =
                base.knots().iter().filter(|k| k.time < cut).map(|k| (k.time, k.price)).collect();
            knots.push((cut, price_at_cut));
            knots.push((1.0, price_at_cut + cont * (1.0 - cut)));
            let spliced = path(&knots);
            let r2 = perfect_stop(&spliced, &f, TOL).unwrap();
            assert!((r2.stop_time - r.stop_time).abs() < 1e-12, "continuation {cont}");
        }
    }

    #[test]
    fn monotone_in_the_forecast() {
        let small = ForecastSpec::lipschitz(0.5, 1.0).unwrap();
        let large = ForecastSpec::lipschitz(1.0, 1.0).unwrap();
        for pts in [
            vec![(0.0, 0.0), (0.3, 0.3), (1.0, -0.4)],
            vec![(0.0, 0.0), (0.5, -0.2), (0.8, 0.1), (1.0, -0.1)],
            vec![(0.0, 0.0), (1.0, 0.5)],
        ] {
            let p = path(&pts);
            let s_small = perfect_stop(&p, &small, TOL).unwrap().stop_time;
            let s_large = perfect_stop(&p, &large, TOL).unwrap().stop_time;
            assert!(s_small <= s_large + 1e-12);
        }
    }

    #[test]
    fn stop_result_json_shape() {
        let p = path(&[(0.0, 0.0), (1.0, -1.0)]);
        let r = perfect_stop(&p, &lipschitz_unit(), TOL).unwrap();
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for key in ["stop_time", "stop_price", "drawdown_at_stop", "psi_at_stop"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let d = apply_rule(&p, &StoppingRuleSpec::Deterministic { u: 0.25 }, TOL).unwrap();
        let v = serde_json::to_value(d).unwrap();
        assert!(v["psi_at_stop"].is_null());
    }
}
