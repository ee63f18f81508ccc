//! Monte Carlo regret experiments.
//!
//! [`run_experiment`] samples paths from a model and evaluates every rule on
//! the same path (common random numbers), reporting means, standard errors,
//! and 99% confidence half-widths for realized regret, estimated regret, and
//! the stop time.
//!
//! Determinism: the path index space is split into fixed-size chunks; each
//! path draws its own ChaCha8 stream seeded from `(master_seed, index)`, each
//! chunk accumulates with compensated summation, and chunk subtotals are
//! combined in index order. Results are bitwise identical regardless of how
//! many workers rayon schedules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{ForecastError, ForecastSpec};
use crate::models::{self, BachelierParams, ModelError, PoissonSlopeParams};
use crate::paths::{PathError, PricePath};
use crate::stopping::{self, StoppingError, StoppingRuleSpec};

#[derive(Debug, Error)]
pub enum McError {
    #[error("n_paths must be >= 1")]
    ZeroPaths,
    #[error("horizon mismatch: {0}")]
    HorizonMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// z multiplier for the 99% confidence interval.
pub const CI99_Z: f64 = 2.576;

/// Crossing tolerance used for perfect rules inside experiments.
pub const CROSSING_TOL: f64 = 1e-10;

const CHUNK: u64 = 4096;

/// Which stochastic model an experiment samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    PoissonSlope(PoissonSlopeParams),
    Bachelier(BachelierParams),
}

impl ModelParams {
    pub fn horizon(&self) -> f64 {
        match self {
            ModelParams::PoissonSlope(p) => p.horizon,
            ModelParams::Bachelier(p) => p.horizon,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<PricePath, ModelError> {
        match self {
            ModelParams::PoissonSlope(p) => models::sample_poisson_slope(p, seed),
            ModelParams::Bachelier(p) => models::sample_bachelier(p, seed),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelParams::PoissonSlope(p) => p.validate(),
            ModelParams::Bachelier(p) => p.validate(),
        }
    }
}

/// Full description of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelParams,
    /// Rules evaluated side by side on the same sampled paths.
    pub rules: Vec<StoppingRuleSpec>,
    /// Forecast used for the estimated regret of deterministic rules
    /// (perfect rules use their own).
    pub forecast: ForecastSpec,
    pub n_paths: u64,
    pub master_seed: u64,
}

/// Sample statistics for one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub rule: StoppingRuleSpec,
    pub mean_realized_regret: f64,
    pub stderr_realized_regret: f64,
    pub ci99_realized_regret: f64,
    pub mean_estimated_regret: f64,
    pub stderr_estimated_regret: f64,
    pub ci99_estimated_regret: f64,
    pub mean_stop_time: f64,
    pub stderr_stop_time: f64,
    pub ci99_stop_time: f64,
}

/// Result of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub rules: Vec<RuleStats>,
    pub n_paths: u64,
    pub master_seed: u64,
    /// FNV-1a digest of every sampled knot, in path order; equal digests
    /// mean rule evaluations saw identical path sequences.
    pub paths_digest: u64,
}

#[derive(Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Clone, Copy, Default)]
struct MomentAccum {
    sum: KahanSum,
    sumsq: KahanSum,
}

impl MomentAccum {
    fn add(&mut self, x: f64) {
        self.sum.add(x);
        self.sumsq.add(x * x);
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

// FNV-1a folded over whole words; cheap enough to run on every knot
fn fnv_step(hash: u64, word: u64) -> u64 {
    (hash ^ word).wrapping_mul(FNV_PRIME)
}

fn digest_path(mut hash: u64, index: u64, path: &PricePath) -> u64 {
    hash = fnv_step(hash, index);
    for k in path.knots() {
        hash = fnv_step(hash, k.time.to_bits());
        hash = fnv_step(hash, k.price.to_bits());
    }
    hash
}

struct ChunkAccum {
    per_rule: Vec<[MomentAccum; 3]>, // realized, estimated, stop time
    digest: u64,
}

/// Run one experiment: sample `n_paths` paths, evaluate every rule on each
/// path, and summarize. Deterministic given the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RegretReport, McError> {
    if spec.n_paths == 0 {
        return Err(McError::ZeroPaths);
    }
    spec.model.validate()?;
    let horizon = spec.model.horizon();
    if spec.forecast.horizon() != horizon {
        return Err(McError::HorizonMismatch(format!(
            "model horizon {} vs forecast horizon {}",
            horizon,
            spec.forecast.horizon()
        )));
    }
    for rule in &spec.rules {
        match rule {
            StoppingRuleSpec::Perfect { forecast } => {
                if forecast.horizon() != horizon {
                    return Err(McError::HorizonMismatch(format!(
                        "model horizon {} vs rule forecast horizon {}",
                        horizon,
                        forecast.horizon()
                    )));
                }
            }
            StoppingRuleSpec::Deterministic { u } => {
                if !(0.0..=horizon).contains(u) {
                    return Err(McError::InvalidParameter(format!("deterministic stop {u} outside [0, {horizon}]")));
                }
            }
        }
    }

    let n_chunks = spec.n_paths.div_ceil(CHUNK);
    let chunks: Vec<ChunkAccum> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(spec.n_paths);
            let mut acc =
                ChunkAccum { per_rule: vec![[MomentAccum::default(); 3]; spec.rules.len()], digest: FNV_OFFSET };
            for index in lo..hi {
                let seed = models::derive_stream_seed(spec.master_seed, index);
                let path = spec.model.sample(seed)?;
                acc.digest = digest_path(acc.digest, index, &path);
                let global_max = path.global_max();
                for (rule, moments) in spec.rules.iter().zip(acc.per_rule.iter_mut()) {
                    let stop = stopping::apply_rule(&path, rule, CROSSING_TOL)?;
                    let psi = match rule {
                        StoppingRuleSpec::Perfect { .. } => stop.psi_at_stop.expect("perfect rules report a forecast"),
                        StoppingRuleSpec::Deterministic { .. } => spec.forecast.value_at(stop.stop_time)?,
                    };
                    moments[0].add(global_max - stop.stop_price);
                    moments[1].add(stop.drawdown_at_stop.max(psi));
                    moments[2].add(stop.stop_time);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, McError>>()?;

    // combine in chunk order so thread scheduling cannot reorder the sums
    let mut totals = vec![[(0.0_f64, 0.0_f64); 3]; spec.rules.len()];
    let mut digest = FNV_OFFSET;
    for chunk in &chunks {
        for (t, m) in totals.iter_mut().zip(chunk.per_rule.iter()) {
            for i in 0..3 {
                t[i].0 += m[i].sum.sum;
                t[i].1 += m[i].sumsq.sum;
            }
        }
        digest = fnv_step(digest, chunk.digest);
    }

    let n = spec.n_paths as f64;
    let stats = |&(sum, sumsq): &(f64, f64)| {
        let mean = sum / n;
        let var = if spec.n_paths > 1 { ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        let stderr = (var / n).sqrt();
        (mean, stderr, CI99_Z * stderr)
    };

    let rules = spec
        .rules
        .iter()
        .cloned()
        .zip(totals.iter())
        .map(|(rule, t)| {
            let (mean_r, se_r, ci_r) = stats(&t[0]);
            let (mean_e, se_e, ci_e) = stats(&t[1]);
            let (mean_s, se_s, ci_s) = stats(&t[2]);
            RuleStats {
                rule,
                mean_realized_regret: mean_r,
                stderr_realized_regret: se_r,
                ci99_realized_regret: ci_r,
                mean_estimated_regret: mean_e,
                stderr_estimated_regret: se_e,
                ci99_estimated_regret: ci_e,
                mean_stop_time: mean_s,
                stderr_stop_time: se_s,
                ci99_stop_time: ci_s,
            }
        })
        .collect();

    Ok(RegretReport { rules, n_paths: spec.n_paths, master_seed: spec.master_seed, paths_digest: digest })
}

/// Two-trajectory approximations valid when the switching intensity is so
/// small that paths are straight lines up (probability p) or down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallLambdaApprox {
    pub p_up: f64,
    pub horizon: f64,
    /// E of the crossing time: the up line stops at T, the down line at T/2.
    pub expected_stop_time: f64,
    /// Expected estimated regret of the crossing rule, (1−p)·T/2.
    pub estimated_regret_perfect: f64,
    /// Expected realized regret of the crossing rule, also (1−p)·T/2.
    pub realized_regret_perfect: f64,
}

impl SmallLambdaApprox {
    /// Expected estimated regret of the fixed-time rule `u`.
    pub fn estimated_regret_deterministic(&self, u: f64) -> f64 {
        let (p, q, t) = (self.p_up, 1.0 - self.p_up, self.horizon);
        (p * t + (q - p) * u).max(t - u)
    }

    /// Expected realized regret of the fixed-time rule `u`.
    pub fn realized_regret_deterministic(&self, u: f64) -> f64 {
        let (p, q, t) = (self.p_up, 1.0 - self.p_up, self.horizon);
        p * t + (q - p) * u
    }
}

/// Build the small-intensity approximations for slope ±1 paths.
pub fn small_lambda_approximation(p_up: f64, horizon: f64) -> Result<SmallLambdaApprox, McError> {
    if !(p_up > 0.0 && p_up < 1.0) {
        return Err(McError::InvalidParameter(format!("p_up must be in (0,1), got {p_up}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(McError::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
    }
    let q = 1.0 - p_up;
    Ok(SmallLambdaApprox {
        p_up,
        horizon,
        expected_stop_time: horizon - q * horizon / 2.0,
        estimated_regret_perfect: q * horizon / 2.0,
        realized_regret_perfect: q * horizon / 2.0,
    })
}

/// Mean realized regret for one fixed stop time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoobEstimate {
    pub u: f64,
    pub mean_realized_regret: f64,
    pub stderr: f64,
    pub ci99: f64,
}

/// Paired comparison of two fixed stop times on common paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoobPair {
    pub u_first: f64,
    pub u_second: f64,
    /// Mean of the per-path regret difference (second minus first... the
    /// whole-path maximum cancels, so this is mean(X_{u1} − X_{u2})).
    pub mean_difference: f64,
    pub stderr: f64,
    /// |mean_difference| in units of its standard error (0 when both vanish).
    pub z: f64,
}

/// Martingale consistency report: under Bachelier prices the expected
/// realized regret cannot depend on the (deterministic) stop time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobReport {
    pub estimates: Vec<DoobEstimate>,
    pub pairs: Vec<DoobPair>,
    pub max_abs_difference: f64,
    /// Largest pairwise |mean| / stderr.
    pub max_z: f64,
    /// Whether every pairwise difference sits inside its own 99% interval.
    pub within_ci99: bool,
    pub n_paths: u64,
    pub master_seed: u64,
}

/// Estimate the realized regret of each fixed stop time on common Bachelier
/// paths and compare all pairs.
pub fn doob_check(
    params: &BachelierParams,
    stop_times: &[f64],
    n_paths: u64,
    master_seed: u64,
) -> Result<DoobReport, McError> {
    if n_paths == 0 {
        return Err(McError::ZeroPaths);
    }
    params.validate()?;
    if stop_times.is_empty() {
        return Err(McError::InvalidParameter("need at least one stop time".into()));
    }
    for &u in stop_times {
        if !(0.0..=params.horizon).contains(&u) {
            return Err(McError::InvalidParameter(format!("stop time {u} outside [0, {}]", params.horizon)));
        }
    }

    let k = stop_times.len();
    let n_chunks = n_paths.div_ceil(CHUNK);
    struct DoobChunk {
        regret: Vec<MomentAccum>,
        diffs: Vec<MomentAccum>,
    }
    let chunks: Vec<DoobChunk> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            let mut acc = DoobChunk {
                regret: vec![MomentAccum::default(); k],
                diffs: vec![MomentAccum::default(); k * (k - 1) / 2],
            };
            let mut prices = vec![0.0_f64; k];
            for index in lo..hi {
                let seed = models::derive_stream_seed(master_seed, index);
                let path = models::sample_bachelier(params, seed)?;
                let global_max = path.global_max();
                for (price, &u) in prices.iter_mut().zip(stop_times) {
                    *price = path.price_at(u)?;
                }
                for (i, &pi) in prices.iter().enumerate() {
                    acc.regret[i].add(global_max - pi);
                }
                let mut pair = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        acc.diffs[pair].add(prices[j] - prices[i]);
                        pair += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, McError>>()?;

    let n = n_paths as f64;
    let collapse = |pick: &dyn Fn(&DoobChunk) -> &[MomentAccum], len: usize| -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); len];
        for chunk in &chunks {
            for (o, m) in out.iter_mut().zip(pick(chunk)) {
                o.0 += m.sum.sum;
                o.1 += m.sumsq.sum;
            }
        }
        out
    };
    let stats = |(sum, sumsq): (f64, f64)| {
        let mean = sum / n;
        let var = if n_paths > 1 { ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        (mean, (var / n).sqrt())
    };

    let estimates: Vec<DoobEstimate> = collapse(&|c| &c.regret, k)
        .into_iter()
        .zip(stop_times)
        .map(|(t, &u)| {
            let (mean, stderr) = stats(t);
            DoobEstimate { u, mean_realized_regret: mean, stderr, ci99: CI99_Z * stderr }
        })
        .collect();

    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    let diff_totals = collapse(&|c| &c.diffs, k * (k - 1) / 2);
    let mut pair = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            let (mean, stderr) = stats(diff_totals[pair]);
            let z = if stderr > 0.0 {
                mean.abs() / stderr
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            pairs.push(DoobPair { u_first: stop_times[i], u_second: stop_times[j], mean_difference: mean, stderr, z });
            pair += 1;
        }
    }

    let max_abs_difference = pairs.iter().map(|p| p.mean_difference.abs()).fold(0.0, f64::max);
    let max_z = pairs.iter().map(|p| p.z).fold(0.0, f64::max);
    Ok(DoobReport {
        estimates,
        pairs,
        max_abs_difference,
        max_z,
        within_ci99: max_z <= CI99_Z,
        n_paths,
        master_seed,
    })
}
