//! Random price-path models: Poisson slope switching and Bachelier.
//!
//! Both samplers are pure functions of `(params, seed)`. Seeds feed a
//! ChaCha8 generator, and per-path seeds for Monte Carlo are derived from
//! `(master_seed, path_index)` with a SplitMix64 mix, so parallel runs are
//! reproducible bit-for-bit regardless of how work is sharded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::PricePath;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// SplitMix64 output mix, the documented per-stream seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed for one sample stream, derived from a master seed and a path index.
///
/// Independent of how path indices are assigned to workers, so the sampled
/// path sequence depends only on `(master_seed, index)`.
pub fn derive_stream_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed).wrapping_add(index))
}

fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters of the slope-switching model: the price moves along straight
/// segments of slope `+up_slope` (probability `p_up`) or `−down_slope`,
/// switching direction at the jump times of a Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSlopeParams {
    /// Jump intensity of the switching process (> 0).
    pub lambda: f64,
    /// Probability that a segment slopes upward.
    pub p_up: f64,
    /// Downward slope magnitude (> 0).
    pub down_slope: f64,
    /// Upward slope magnitude (> 0).
    pub up_slope: f64,
    /// Initial price.
    pub x0: f64,
    /// Horizon `T`.
    pub horizon: f64,
}

impl PoissonSlopeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(ModelError::InvalidParameter(msg)) };
        check(self.lambda > 0.0 && self.lambda.is_finite(), format!("lambda must be > 0, got {}", self.lambda))?;
        check(self.p_up > 0.0 && self.p_up < 1.0, format!("p_up must be in (0,1), got {}", self.p_up))?;
        check(self.down_slope > 0.0 && self.down_slope.is_finite(), format!("down_slope must be > 0, got {}", self.down_slope))?;
        check(self.up_slope > 0.0 && self.up_slope.is_finite(), format!("up_slope must be > 0, got {}", self.up_slope))?;
        check(self.x0.is_finite(), format!("x0 must be finite, got {}", self.x0))?;
        check(self.horizon > 0.0 && self.horizon.is_finite(), format!("horizon must be > 0, got {}", self.horizon))
    }
}

/// Parameters of the Bachelier model `X_t = x0 + σ W_t`, sampled as the
/// piecewise-linear interpolation of exact Gaussian increments on a uniform
/// grid of `n_steps` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BachelierParams {
    pub x0: f64,
    /// Volatility (≥ 0; zero gives a constant path, useful in tests).
    pub sigma: f64,
    pub horizon: f64,
    /// Grid resolution. Max-based statistics carry an O(√(T/n_steps))
    /// discretization bias; the default 10⁴ keeps it below ~0.006·σ at T=1.
    pub n_steps: usize,
}

/// Default grid resolution for Bachelier sampling.
pub const DEFAULT_BACHELIER_STEPS: usize = 10_000;

impl BachelierParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(ModelError::InvalidParameter(msg)) };
        check(self.sigma >= 0.0 && self.sigma.is_finite(), format!("sigma must be >= 0, got {}", self.sigma))?;
        check(self.x0.is_finite(), format!("x0 must be finite, got {}", self.x0))?;
        check(self.horizon > 0.0 && self.horizon.is_finite(), format!("horizon must be > 0, got {}", self.horizon))?;
        check(self.n_steps >= 1, format!("n_steps must be >= 1, got {}", self.n_steps))
    }
}

/// Sample one slope-switching path, event-driven (exact, no time grid).
///
/// Exponential(λ) inter-jump times are truncated at the horizon; each
/// segment's slope is an independent draw, `+up_slope` with probability
/// `p_up`. Knots sit at 0, the jump times, and `T`.
pub fn sample_poisson_slope(params: &PoissonSlopeParams, seed: u64) -> Result<PricePath, ModelError> {
    params.validate()?;
    let mut rng = rng_for_seed(seed);
    let exp = Exp::new(params.lambda).expect("lambda validated positive");

    let mut knots = Vec::with_capacity((params.lambda * params.horizon) as usize + 2);
    let mut t = 0.0_f64;
    let mut x = params.x0;
    knots.push((t, x));
    loop {
        let dt: f64 = exp.sample(&mut rng);
        let slope = if rng.random::<f64>() < params.p_up { params.up_slope } else { -params.down_slope };
        let t_next = t + dt;
        if t_next >= params.horizon {
            knots.push((params.horizon, x + slope * (params.horizon - t)));
            break;
        }
        if t_next <= t {
            // zero-length step from an extreme exponential draw; redraw
            continue;
        }
        x += slope * dt;
        t = t_next;
        knots.push((t, x));
    }
    Ok(PricePath::new(knots).expect("constructed knots are valid"))
}

/// Sample one Bachelier path on a uniform grid, deterministic given `seed`.
pub fn sample_bachelier(params: &BachelierParams, seed: u64) -> Result<PricePath, ModelError> {
    params.validate()?;
    let mut rng = rng_for_seed(seed);
    let n = params.n_steps;
    let dt = params.horizon / n as f64;
    let step_sd = params.sigma * dt.sqrt();

    let mut knots = Vec::with_capacity(n + 1);
    let mut x = params.x0;
    knots.push((0.0, x));
    for k in 1..=n {
        let z: f64 = StandardNormal.sample(&mut rng);
        x += step_sd * z;
        let t = if k == n { params.horizon } else { k as f64 * dt };
        knots.push((t, x));
    }
    Ok(PricePath::new(knots).expect("constructed knots are valid"))
}

/// Whether every segment's price increment stays inside the band
/// `[−down_slope·Δt, up_slope·Δt]`.
///
/// Checked on increments rather than recovered slopes so that rounding on
/// very short segments cannot produce false violations; the allowance is
/// 1e-12 at the path's price scale.
pub fn check_lipschitz_band(path: &PricePath, down_slope: f64, up_slope: f64) -> bool {
    if !(down_slope > 0.0 && up_slope > 0.0) {
        return false;
    }
    path.knots().windows(2).all(|w| {
        let dt = w[1].time - w[0].time;
        let dx = w[1].price - w[0].price;
        let tol = 1e-12 * (1.0 + w[0].price.abs().max(w[1].price.abs()));
        dx >= -down_slope * dt - tol && dx <= up_slope * dt + tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(lambda: f64, p_up: f64) -> PoissonSlopeParams {
        PoissonSlopeParams { lambda, p_up, down_slope: 1.0, up_slope: 1.0, x0: 0.0, horizon: 1.0 }
    }

    #[test]
    fn tiny_lambda_gives_single_segment() {
        let params = unit_params(1e-12, 0.5);
        for seed in 0..20 {
            let path = sample_poisson_slope(&params, seed).unwrap();
            assert_eq!(path.knots().len(), 2);
            let terminal = path.knots()[1].price;
            assert!(
                (terminal - 1.0).abs() < 1e-12 || (terminal + 1.0).abs() < 1e-12,
                "terminal {terminal} not ±T"
            );
        }
        // both signs occur across seeds
        let terminals: Vec<f64> =
            (0..20).map(|s| sample_poisson_slope(&params, s).unwrap().knots()[1].price).collect();
        assert!(terminals.iter().any(|&x| x > 0.0));
        assert!(terminals.iter().any(|&x| x < 0.0));
    }

    #[test]
    fn poisson_sampling_is_deterministic() {
        let params = unit_params(7.0, 0.4);
        let a = sample_poisson_slope(&params, 123).unwrap();
        let b = sample_poisson_slope(&params, 123).unwrap();
        assert_eq!(a, b);
        let c = sample_poisson_slope(&params, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn poisson_paths_stay_in_band() {
        let params = PoissonSlopeParams { lambda: 20.0, p_up: 0.3, down_slope: 0.7, up_slope: 1.3, x0: 5.0, horizon: 1.0 };
        for seed in 0..200 {
            let path = sample_poisson_slope(&params, seed).unwrap();
            assert!(check_lipschitz_band(&path, 0.7, 1.3), "seed {seed}");
        }
    }

    #[test]
    fn band_check_rejects_violations() {
        let path = PricePath::new([(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]).unwrap(); // slope 2 then 0
        assert!(!check_lipschitz_band(&path, 1.0, 1.0));
        assert!(check_lipschitz_band(&path, 1.0, 2.0));
        let flat = PricePath::new([(0.0, 3.0), (1.0, 3.0)]).unwrap();
        assert!(check_lipschitz_band(&flat, 0.1, 0.1));
    }

    #[test]
    fn bachelier_zero_volatility_is_constant() {
        let params = BachelierParams { x0: 2.0, sigma: 0.0, horizon: 1.0, n_steps: 16 };
        let path = sample_bachelier(&params, 9).unwrap();
        assert!(path.knots().iter().all(|k| k.price == 2.0));
    }

    #[test]
    fn bachelier_single_step_shape() {
        let params = BachelierParams { x0: 1.0, sigma: 1.0, horizon: 2.0, n_steps: 1 };
        let path = sample_bachelier(&params, 5).unwrap();
        assert_eq!(path.knots().len(), 2);
        assert_eq!(path.knots()[0].time, 0.0);
        assert_eq!(path.knots()[1].time, 2.0);
        assert_ne!(path.knots()[1].price, 1.0);
    }

    #[test]
    fn bachelier_grid_ends_exactly_at_horizon() {
        let params = BachelierParams { x0: 0.0, sigma: 1.0, horizon: 0.7, n_steps: 13 };
        let path = sample_bachelier(&params, 1).unwrap();
        assert_eq!(path.horizon(), 0.7);
    }

    #[test]
    fn parameter_validation() {
        assert!(sample_poisson_slope(&unit_params(0.0, 0.5), 0).is_err());
        assert!(sample_poisson_slope(&unit_params(1.0, 0.0), 0).is_err());
        assert!(sample_poisson_slope(&unit_params(1.0, 1.0), 0).is_err());
        let bad = BachelierParams { x0: 0.0, sigma: -1.0, horizon: 1.0, n_steps: 10 };
        assert!(sample_bachelier(&bad, 0).is_err());
        let bad = BachelierParams { x0: 0.0, sigma: 1.0, horizon: 1.0, n_steps: 0 };
        assert!(sample_bachelier(&bad, 0).is_err());
    }

    #[test]
    fn stream_seeds_differ_across_indices() {
        let mut seen = std::collections::HashSet::new();
        for idx in 0..10_000u64 {
            assert!(seen.insert(derive_stream_seed(42, idx)));
        }
        assert_ne!(derive_stream_seed(1, 0), derive_stream_seed(2, 0));
    }

    #[test]
    fn jump_count_and_sign_frequency_statistics() {
        let lambda = 4.0;
        let p_up = 0.3;
        let params = unit_params(lambda, p_up);
        let n = 100_000;
        let mut jumps = 0usize;
        let mut segments = 0usize;
        let mut ups = 0usize;
        for idx in 0..n {
            let path = sample_poisson_slope(&params, derive_stream_seed(7, idx)).unwrap();
            jumps += path.knots().len() - 2;
            let knots = path.knots();
            for w in knots.windows(2) {
                segments += 1;
                if w[1].price > w[0].price {
                    ups += 1;
                }
            }
        }
        // mean jump count ~ Poisson(λT): stderr = sqrt(λT/n)
        let mean_jumps = jumps as f64 / n as f64;
        let se = (lambda / n as f64).sqrt();
        assert!((mean_jumps - lambda).abs() < 3.0 * se, "mean jumps {mean_jumps} vs {lambda}");
        // segment sign frequency ~ p_up
        let freq = ups as f64 / segments as f64;
        let se = (p_up * (1.0 - p_up) / segments as f64).sqrt();
        assert!((freq - p_up).abs() < 3.0 * se, "up frequency {freq} vs {p_up}");
    }

    #[test]
    fn bachelier_terminal_moments() {
        let params = BachelierParams { x0: 0.0, sigma: 1.0, horizon: 1.0, n_steps: 8 };
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for idx in 0..n {
            let path = sample_bachelier(&params, derive_stream_seed(11, idx)).unwrap();
            let xt = path.knots().last().unwrap().price;
            sum += xt;
            sumsq += xt * xt;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.01, "terminal mean {mean}"); // 3/sqrt(n) ≈ 0.0095
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.02, "terminal variance {var}");
    }

    #[test]
    fn params_json_round_trip() {
        let p = PoissonSlopeParams { lambda: 10.0, p_up: 0.8, down_slope: 1.0, up_slope: 1.0, x0: 0.0, horizon: 1.0 };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<PoissonSlopeParams>(&s).unwrap(), p);
        let b = BachelierParams { x0: 0.0, sigma: 1.0, horizon: 1.0, n_steps: 100 };
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<BachelierParams>(&s).unwrap(), b);
    }
}
