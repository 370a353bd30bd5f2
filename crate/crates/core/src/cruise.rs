//! Car cruise-control benchmark: longitudinal dynamics and an I/O data generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narmax::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CruiseParams {
    pub mass: f64,
    pub gear: f64,
    pub c_r: f64,
    pub c_d: f64,
    pub rho: f64,
    pub area: f64,
    pub beta: f64,
    pub omega_m: f64,
    pub tau_m: f64,
    /// Ratio inside the torque curve, `tau(v) = tau_m - tau_m beta (ratio v / omega_m - 1)^2`.
    pub torque_ratio: f64,
    pub g: f64,
    /// Standard deviation of the road slope in radians.
    pub slope_std: f64,
}

impl Default for CruiseParams {
    fn default() -> Self {
        CruiseParams {
            mass: 1600.0,
            gear: 40.0,
            c_r: 0.01,
            c_d: 0.32,
            rho: 1.3,
            area: 2.4,
            beta: 0.4,
            omega_m: 420.0,
            tau_m: 190.0,
            torque_ratio: 39.0,
            g: 9.8,
            slope_std: 0.05f64.sqrt(),
        }
    }
}

impl CruiseParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("gear", self.gear),
            ("c_r", self.c_r),
            ("c_d", self.c_d),
            ("rho", self.rho),
            ("area", self.area),
            ("beta", self.beta),
            ("omega_m", self.omega_m),
            ("tau_m", self.tau_m),
            ("torque_ratio", self.torque_ratio),
            ("g", self.g),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("cruise parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.slope_std >= 0.0 && self.slope_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("slope_std must be non-negative, got {}", self.slope_std)));
        }
        Ok(())
    }

    pub fn torque(&self, v: f64) -> f64 {
        self.tau_m - self.tau_m * self.beta * (self.torque_ratio * v / self.omega_m - 1.0).powi(2)
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Vehicle acceleration for speed `v`, throttle `u1`, gear `u2` and slope `theta` (radians).
pub fn cruise_rhs(p: &CruiseParams, v: f64, u1: f64, u2: f64, theta: f64) -> f64 {
    let engine = u2 * u1 * p.torque(v);
    let rolling = p.mass * p.g * p.c_r * sgn(u1);
    let drag = 0.5 * p.rho * p.c_d * p.area * v.abs() * v;
    let gravity = p.mass * p.g * theta.sin();
    (engine - rolling - drag - gravity) / p.mass
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub samples: usize,
    pub dt: f64,
    pub v0: f64,
    pub throttle_min: f64,
    pub throttle_max: f64,
    /// Throttle levels are held for a uniform duration in this range (seconds).
    pub throttle_hold: (f64, f64),
    /// Slope values are held for this long (seconds).
    pub slope_hold: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            samples: 40_000,
            dt: 0.01,
            v0: 20.0,
            throttle_min: 0.045,
            throttle_max: 0.12,
            throttle_hold: (2.0, 10.0),
            slope_hold: 0.2,
            substeps: 4,
        }
    }
}

/// Simulates the cruise model under piecewise-constant random throttle,
/// constant gear and piecewise-constant Gaussian slope. Columns: `v`, `u1`
/// (throttle), `u2` (gear), `u3` (slope).
pub fn generate_benchmark(params: &CruiseParams, cfg: &BenchmarkConfig, seed: u64) -> Result<Dataset> {
    params.validate()?;
    if cfg.samples < 1000 {
        return Err(Error::InvalidArgument(format!("benchmark needs at least 1000 samples, got {}", cfg.samples)));
    }
    if !(cfg.dt > 0.0) || cfg.substeps == 0 {
        return Err(Error::InvalidArgument("benchmark dt and substeps must be positive".into()));
    }
    if !(cfg.throttle_min > 0.0 && cfg.throttle_max > cfg.throttle_min) {
        return Err(Error::InvalidArgument("throttle range must be positive and non-empty".into()));
    }
    let (hold_lo, hold_hi) = cfg.throttle_hold;
    if !(hold_lo > 0.0 && hold_hi >= hold_lo) || !(cfg.slope_hold > 0.0) {
        return Err(Error::InvalidArgument("hold durations must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope = Normal::new(0.0, params.slope_std).expect("finite std");
    let n = cfg.samples;
    let mut times = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut u1 = Vec::with_capacity(n);
    let mut u3 = Vec::with_capacity(n);
    let slope_every = ((cfg.slope_hold / cfg.dt).round() as usize).max(1);
    let mut throttle = rng.random_range(cfg.throttle_min..cfg.throttle_max);
    let mut throttle_left = rng.random_range(hold_lo..=hold_hi);
    let mut theta = 0.0;
    let mut speed = cfg.v0;
    let h = cfg.dt / cfg.substeps as f64;
    for k in 0..n {
        if throttle_left <= 0.0 {
            throttle = rng.random_range(cfg.throttle_min..cfg.throttle_max);
            throttle_left = rng.random_range(hold_lo..=hold_hi);
        }
        if k % slope_every == 0 {
            theta = if params.slope_std > 0.0 { slope.sample(&mut rng) } else { 0.0 };
        }
        times.push(k as f64 * cfg.dt);
        v.push(speed);
        u1.push(throttle);
        u3.push(theta);
        let f = |s: f64| cruise_rhs(params, s, throttle, params.gear, theta);
        for _ in 0..cfg.substeps {
            let k1 = f(speed);
            let k2 = f(speed + 0.5 * h * k1);
            let k3 = f(speed + 0.5 * h * k2);
            let k4 = f(speed + h * k3);
            speed += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if !speed.is_finite() {
            return Err(Error::Divergence { time: (k + 1) as f64 * cfg.dt, norm: speed.abs() });
        }
        throttle_left -= cfg.dt;
    }
    let mut data = Dataset::new(times, vec![v], vec![u1, vec![params.gear; n], u3])?;
    data.output_names = vec!["v".into()];
    Ok(data)
}
