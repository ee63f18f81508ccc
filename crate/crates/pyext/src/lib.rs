//! Python bindings: price paths, forecasts, the crossing rule, samplers,
//! special functions, Monte Carlo experiments, and tree verification.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ultimax::forecast::ForecastSpec as CoreForecast;
use ultimax::models;
use ultimax::montecarlo::{self, ExperimentSpec, ModelParams};
use ultimax::oracle::{random_tree, TreeGenConfig};
use ultimax::paths::PricePath as CorePath;
use ultimax::special;
use ultimax::stopping::{self, StoppingRuleSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A continuous piecewise-linear price trajectory on [0, T].
#[pyclass(name = "PricePath", frozen)]
struct PyPricePath {
    inner: CorePath,
}

#[pymethods]
impl PyPricePath {
    /// Build from (time, price) knots; times strictly increasing from 0.
    #[new]
    fn new(knots: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: CorePath::new(knots).map_err(value_err)? })
    }

    /// Parse the `t,price` CSV format.
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CorePath::from_csv_str(text).map_err(value_err)? })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn knots(&self) -> Vec<(f64, f64)> {
        self.inner.knots().iter().map(|k| (k.time, k.price)).collect()
    }

    fn price_at(&self, t: f64) -> PyResult<f64> {
        self.inner.price_at(t).map_err(value_err)
    }

    fn running_max(&self, t: f64) -> PyResult<f64> {
        self.inner.running_max(t).map_err(value_err)
    }

    fn drawdown(&self, t: f64) -> PyResult<f64> {
        self.inner.drawdown(t).map_err(value_err)
    }

    fn global_max(&self) -> f64 {
        self.inner.global_max()
    }

    fn same_prefix(&self, other: &PyPricePath, t: f64, tol: f64) -> PyResult<bool> {
        self.inner.same_prefix(&other.inner, t, tol).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("PricePath({} knots, horizon={})", self.inner.knots().len(), self.inner.horizon())
    }
}

/// Forecast of the maximal future price increment.
#[pyclass(name = "ForecastSpec", frozen)]
struct PyForecast {
    inner: CoreForecast,
}

#[pymethods]
impl PyForecast {
    /// Worst-case forecast `up_slope * (T - t)` for band-limited paths.
    #[staticmethod]
    fn lipschitz(up_slope: f64, horizon: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreForecast::lipschitz(up_slope, horizon).map_err(value_err)? })
    }

    /// Quantile forecast `c_delta * sqrt(T - t)` for Brownian prices.
    #[staticmethod]
    fn brownian_quantile(sigma: f64, delta: f64, horizon: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreForecast::brownian_quantile(sigma, delta, horizon).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(text).map_err(value_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn c_delta(&self) -> Option<f64> {
        self.inner.c_delta()
    }

    fn value_at(&self, t: f64) -> PyResult<f64> {
        self.inner.value_at(t).map_err(value_err)
    }

    /// Grid check of the shape properties; returns True when clean.
    #[pyo3(signature = (n_check = 1024))]
    fn validate(&self, n_check: usize) -> bool {
        self.inner.validate(n_check).passed()
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("ForecastSpec({})", self.to_json()?))
    }
}

/// Where a rule stopped on one path.
#[pyclass(name = "StopResult", frozen)]
struct PyStopResult {
    #[pyo3(get)]
    stop_time: f64,
    #[pyo3(get)]
    stop_price: f64,
    #[pyo3(get)]
    drawdown_at_stop: f64,
    #[pyo3(get)]
    psi_at_stop: Option<f64>,
}

#[pymethods]
impl PyStopResult {
    fn __repr__(&self) -> String {
        format!(
            "StopResult(stop_time={}, stop_price={}, drawdown_at_stop={}, psi_at_stop={:?})",
            self.stop_time, self.stop_price, self.drawdown_at_stop, self.psi_at_stop
        )
    }
}

impl From<stopping::StopResult> for PyStopResult {
    fn from(r: stopping::StopResult) -> Self {
        Self {
            stop_time: r.stop_time,
            stop_price: r.stop_price,
            drawdown_at_stop: r.drawdown_at_stop,
            psi_at_stop: r.psi_at_stop,
        }
    }
}

/// First time the drawdown reaches the forecast.
#[pyfunction]
#[pyo3(signature = (path, forecast, tol = 1e-10))]
fn perfect_stop(path: &PyPricePath, forecast: &PyForecast, tol: f64) -> PyResult<PyStopResult> {
    stopping::perfect_stop(&path.inner, &forecast.inner, tol).map(Into::into).map_err(value_err)
}

/// Unconditional stop at time `u`.
#[pyfunction]
fn stop_at(path: &PyPricePath, u: f64) -> PyResult<PyStopResult> {
    stopping::apply_rule(&path.inner, &StoppingRuleSpec::Deterministic { u }, 1e-10)
        .map(Into::into)
        .map_err(value_err)
}

/// Whole-path maximum minus the selling price.
#[pyfunction]
fn realized_regret(path: &PyPricePath, stop_time: f64) -> PyResult<f64> {
    stopping::realized_regret(&path.inner, stop_time).map_err(value_err)
}

/// max(drawdown at the stop, forecast at the stop).
#[pyfunction]
fn estimated_regret(path: &PyPricePath, stop_time: f64, forecast: &PyForecast) -> PyResult<f64> {
    stopping::estimated_regret(&path.inner, stop_time, &forecast.inner).map_err(value_err)
}

/// Earliest possible crossing time from state (t, drawdown) under a band.
#[pyfunction]
fn perfect_stop_lower_bound(t: f64, drawdown: f64, down_slope: f64, up_slope: f64, horizon: f64) -> PyResult<f64> {
    stopping::perfect_stop_lower_bound(t, drawdown, down_slope, up_slope, horizon).map_err(value_err)
}

/// Worst-case estimated regret of the crossing rule from state (t, drawdown).
#[pyfunction]
fn worst_case_regret_lipschitz(t: f64, drawdown: f64, down_slope: f64, up_slope: f64, horizon: f64) -> PyResult<f64> {
    stopping::worst_case_regret_lipschitz(t, drawdown, down_slope, up_slope, horizon).map_err(value_err)
}

/// Sample one slope-switching path (event-driven, exact).
#[pyfunction]
#[pyo3(signature = (lambda_, p_up, down_slope, up_slope, x0, horizon, seed))]
#[allow(clippy::too_many_arguments)]
fn sample_poisson_slope(
    lambda_: f64,
    p_up: f64,
    down_slope: f64,
    up_slope: f64,
    x0: f64,
    horizon: f64,
    seed: u64,
) -> PyResult<PyPricePath> {
    let params = models::PoissonSlopeParams { lambda: lambda_, p_up, down_slope, up_slope, x0, horizon };
    Ok(PyPricePath { inner: models::sample_poisson_slope(&params, seed).map_err(value_err)? })
}

/// Sample one Bachelier path on a uniform grid.
#[pyfunction]
fn sample_bachelier(x0: f64, sigma: f64, horizon: f64, n_steps: usize, seed: u64) -> PyResult<PyPricePath> {
    let params = models::BachelierParams { x0, sigma, horizon, n_steps };
    Ok(PyPricePath { inner: models::sample_bachelier(&params, seed).map_err(value_err)? })
}

#[pyfunction]
fn normal_cdf(y: f64) -> f64 {
    special::normal_cdf(y)
}

#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    special::normal_quantile(p).map_err(value_err)
}

#[pyfunction]
fn kummer_m(a: f64, b: f64, z: f64) -> PyResult<f64> {
    special::kummer_m(a, b, z).map_err(value_err)
}

#[pyfunction]
fn h_function(z: f64, q: f64) -> PyResult<f64> {
    special::h_function(z, q).map_err(value_err)
}

#[pyfunction]
fn h_derivative(z: f64, q: f64) -> PyResult<f64> {
    special::h_derivative(z, q).map_err(value_err)
}

/// Solve the q-mean threshold equation; returns a dict with q, z_q, delta,
/// c_delta, and the equation residual.
#[pyfunction]
#[pyo3(signature = (q, sigma = 1.0))]
fn solve_zq<'py>(py: Python<'py>, q: f64, sigma: f64) -> PyResult<Bound<'py, PyDict>> {
    let sol = special::solve_zq(q, sigma).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("q", sol.q)?;
    d.set_item("z_q", sol.z_q)?;
    d.set_item("delta", sol.delta)?;
    d.set_item("c_delta", sol.c_delta)?;
    d.set_item("residual", sol.residual)?;
    Ok(d)
}

/// Monte Carlo regret experiment on the slope-switching model: the crossing
/// rule plus one fixed-time rule per entry of `fixed_stops`, evaluated on
/// common paths. Returns a dict with per-rule means, stderrs, and CI99
/// half-widths.
#[pyfunction]
#[pyo3(signature = (lambda_, p_up, down_slope, up_slope, x0, horizon, fixed_stops, n_paths, seed))]
#[allow(clippy::too_many_arguments)]
fn run_poisson_experiment<'py>(
    py: Python<'py>,
    lambda_: f64,
    p_up: f64,
    down_slope: f64,
    up_slope: f64,
    x0: f64,
    horizon: f64,
    fixed_stops: Vec<f64>,
    n_paths: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let forecast = CoreForecast::lipschitz(up_slope, horizon).map_err(value_err)?;
    let mut rules = vec![StoppingRuleSpec::Perfect { forecast: forecast.clone() }];
    rules.extend(fixed_stops.iter().map(|&u| StoppingRuleSpec::Deterministic { u }));
    let spec = ExperimentSpec {
        model: ModelParams::PoissonSlope(models::PoissonSlopeParams {
            lambda: lambda_,
            p_up,
            down_slope,
            up_slope,
            x0,
            horizon,
        }),
        rules,
        forecast,
        n_paths,
        master_seed: seed,
    };
    let report = montecarlo::run_experiment(&spec).map_err(value_err)?;

    let rules_list = PyList::empty(py);
    for stats in &report.rules {
        let d = PyDict::new(py);
        let label = match &stats.rule {
            StoppingRuleSpec::Perfect { .. } => "perfect".to_string(),
            StoppingRuleSpec::Deterministic { u } => format!("fixed_{u}"),
        };
        d.set_item("rule", label)?;
        d.set_item("mean_realized_regret", stats.mean_realized_regret)?;
        d.set_item("stderr_realized_regret", stats.stderr_realized_regret)?;
        d.set_item("ci99_realized_regret", stats.ci99_realized_regret)?;
        d.set_item("mean_estimated_regret", stats.mean_estimated_regret)?;
        d.set_item("stderr_estimated_regret", stats.stderr_estimated_regret)?;
        d.set_item("ci99_estimated_regret", stats.ci99_estimated_regret)?;
        d.set_item("mean_stop_time", stats.mean_stop_time)?;
        d.set_item("stderr_stop_time", stats.stderr_stop_time)?;
        d.set_item("ci99_stop_time", stats.ci99_stop_time)?;
        rules_list.append(d)?;
    }
    let out = PyDict::new(py);
    out.set_item("rules", rules_list)?;
    out.set_item("n_paths", report.n_paths)?;
    out.set_item("master_seed", report.master_seed)?;
    out.set_item("paths_digest", report.paths_digest)?;
    Ok(out)
}

/// Two-trajectory approximations for a slope ±1 model whose switching
/// intensity is negligible; dict with the expected stop time, the crossing
/// rule's regrets, and callables are replaced by per-u dicts for the fixed
/// rules in `fixed_stops`.
#[pyfunction]
#[pyo3(signature = (p_up, horizon, fixed_stops = vec![]))]
fn small_lambda_approximation<'py>(
    py: Python<'py>,
    p_up: f64,
    horizon: f64,
    fixed_stops: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let approx = montecarlo::small_lambda_approximation(p_up, horizon).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("expected_stop_time", approx.expected_stop_time)?;
    out.set_item("estimated_regret_perfect", approx.estimated_regret_perfect)?;
    out.set_item("realized_regret_perfect", approx.realized_regret_perfect)?;
    let fixed = PyList::empty(py);
    for u in fixed_stops {
        let d = PyDict::new(py);
        d.set_item("u", u)?;
        d.set_item("estimated_regret", approx.estimated_regret_deterministic(u))?;
        d.set_item("realized_regret", approx.realized_regret_deterministic(u))?;
        fixed.append(d)?;
    }
    out.set_item("fixed_stops", fixed)?;
    Ok(out)
}

/// Estimate the realized regret of fixed stop times on common Bachelier
/// paths; under a driftless price the means must agree (optional sampling).
#[pyfunction]
#[pyo3(signature = (x0, sigma, horizon, n_steps, stop_times, n_paths, seed))]
#[allow(clippy::too_many_arguments)]
fn doob_check<'py>(
    py: Python<'py>,
    x0: f64,
    sigma: f64,
    horizon: f64,
    n_steps: usize,
    stop_times: Vec<f64>,
    n_paths: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = models::BachelierParams { x0, sigma, horizon, n_steps };
    let report = montecarlo::doob_check(&params, &stop_times, n_paths, seed).map_err(value_err)?;
    let estimates = PyList::empty(py);
    for e in &report.estimates {
        let d = PyDict::new(py);
        d.set_item("u", e.u)?;
        d.set_item("mean_realized_regret", e.mean_realized_regret)?;
        d.set_item("stderr", e.stderr)?;
        d.set_item("ci99", e.ci99)?;
        estimates.append(d)?;
    }
    let out = PyDict::new(py);
    out.set_item("estimates", estimates)?;
    out.set_item("max_abs_difference", report.max_abs_difference)?;
    out.set_item("max_z", report.max_z)?;
    out.set_item("within_ci99", report.within_ci99)?;
    Ok(out)
}

/// Generate random scenario trees and exhaustively verify the crossing
/// rule's optimality properties on each.
#[pyfunction]
#[pyo3(signature = (tree_count, max_depth = 4, max_branching = 3, max_rules = 20_000, seed = 42))]
fn verify_random_trees<'py>(
    py: Python<'py>,
    tree_count: u64,
    max_depth: usize,
    max_branching: usize,
    max_rules: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    if max_depth == 0 || max_depth > 5 {
        return Err(value_err("max_depth must lie in 1..=5"));
    }
    let mut passed = 0u64;
    let mut total_rules = 0u64;
    for i in 0..tree_count {
        let config = TreeGenConfig {
            depth: 1 + (i as usize % max_depth),
            max_branching,
            max_rules,
            horizon: 1.0,
        };
        let tree = random_tree(&config, seed.wrapping_add(i)).map_err(value_err)?;
        let report = tree.verify_perfection(max_rules).map_err(value_err)?;
        total_rules += report.rule_count;
        if report.pass {
            passed += 1;
        }
    }
    let out = PyDict::new(py);
    out.set_item("trees", tree_count)?;
    out.set_item("passed", passed)?;
    out.set_item("failed", tree_count - passed)?;
    out.set_item("total_rules_enumerated", total_rules)?;
    Ok(out)
}

#[pymodule]
fn ultimax_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPricePath>()?;
    m.add_class::<PyForecast>()?;
    m.add_class::<PyStopResult>()?;
    m.add_function(wrap_pyfunction!(perfect_stop, m)?)?;
    m.add_function(wrap_pyfunction!(stop_at, m)?)?;
    m.add_function(wrap_pyfunction!(realized_regret, m)?)?;
    m.add_function(wrap_pyfunction!(estimated_regret, m)?)?;
    m.add_function(wrap_pyfunction!(perfect_stop_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_regret_lipschitz, m)?)?;
    m.add_function(wrap_pyfunction!(sample_poisson_slope, m)?)?;
    m.add_function(wrap_pyfunction!(sample_bachelier, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(kummer_m, m)?)?;
    m.add_function(wrap_pyfunction!(h_function, m)?)?;
    m.add_function(wrap_pyfunction!(h_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(solve_zq, m)?)?;
    m.add_function(wrap_pyfunction!(run_poisson_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(doob_check, m)?)?;
    m.add_function(wrap_pyfunction!(small_lambda_approximation, m)?)?;
    m.add_function(wrap_pyfunction!(verify_random_trees, m)?)?;
    Ok(())
}
