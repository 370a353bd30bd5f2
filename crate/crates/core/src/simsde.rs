//! Simulation of `dx = (A x + B1 u) dt + B2 dw` under state feedback plus an
//! exploration signal, and collection of the data blocks used by the learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{FeedbackGain, DisturbanceGain, LtiPlant};
use crate::matops::{self, DenseMatrix, SymMatrix, Vector};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    /// Stochastic Heun (predictor-corrector); exact in the noise for additive `B2 dw`.
    #[default]
    Heun,
}

/// Sum of sinusoids `sum_i a_i sin(w_i t)` for each input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub channels: Vec<Vec<(f64, f64)>>,
}

impl Exploration {
    pub fn none(m: usize) -> Self {
        Exploration { channels: vec![Vec::new(); m] }
    }

    /// `per_channel` log-spaced frequencies in `[w_lo, w_hi]`, interleaved so
    /// that no two channels share a frequency.
    pub fn log_spaced(m: usize, per_channel: usize, w_lo: f64, w_hi: f64, amplitude: f64) -> Self {
        let total = (m * per_channel).max(1);
        let freqs: Vec<f64> = (0..total)
            .map(|k| {
                if total == 1 {
                    w_lo
                } else {
                    w_lo * (w_hi / w_lo).powf(k as f64 / (total - 1) as f64)
                }
            })
            .collect();
        let channels = (0..m)
            .map(|c| (0..per_channel).map(|k| (amplitude, freqs[k * m + c])).collect())
            .collect();
        Exploration { channels }
    }

    /// Twelve frequencies per channel in `[0.1, 50]` rad/s with unit amplitude.
    pub fn default_for(m: usize) -> Self {
        Exploration::log_spaced(m, 12, 0.1, 50.0, 1.0)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for ch in &mut self.channels {
            for (a, _) in ch.iter_mut() {
                *a *= factor;
            }
        }
        self
    }

    pub fn eval(&self, t: f64) -> Vector {
        Vector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| ch.iter().map(|(a, w)| a * (w * t).sin()).sum::<f64>()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub noise_on: bool,
    pub exploration: Exploration,
    pub scheme: Scheme,
    /// Initial state; zeros when absent.
    pub x0: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn new(m: usize) -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 50.0,
            seed: 0,
            noise_on: true,
            exploration: Exploration::default_for(m),
            scheme: Scheme::default(),
            x0: None,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self, plant: &LtiPlant) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 100.0 * self.dt) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be at least 100 dt = {}",
                self.horizon,
                100.0 * self.dt
            )));
        }
        if self.exploration.channels.len() != plant.m() {
            return Err(Error::dim("exploration channels", plant.m(), self.exploration.channels.len()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != plant.n() {
                return Err(Error::dim("initial state", plant.n(), x0.len()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// Wiener increments over `[t_k, t_{k+1}]`; the final entry is zero.
    pub disturbance_draws: Vec<Vector>,
    /// Disturbance feedback `w = L x` applied on top of the noise, if any.
    pub disturbance_feedback: Option<DenseMatrix>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x1..xn,u1..um`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=m {
            out.push_str(&format!(",u{i}"));
        }
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&format!("{}", self.times[k]));
            for v in self.states[k].iter().chain(self.inputs[k].iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the layout written by [`Trajectory::to_csv`]; noise draws are not recorded and read back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty trajectory CSV".into()))?.split(',').map(str::trim).collect();
        if header.first() != Some(&"t") {
            return Err(Error::Parse("trajectory CSV must start with a t column".into()));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if n == 0 || 1 + n + m != header.len() {
            return Err(Error::Parse("trajectory header must be t,x1..xn,u1..um".into()));
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            disturbance_draws: Vec::new(),
            disturbance_feedback: None,
        };
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("trajectory line {}: {e}", i + 2)))?;
            if vals.len() != header.len() {
                return Err(Error::Parse(format!("trajectory line {}: expected {} fields", i + 2, header.len())));
            }
            traj.times.push(vals[0]);
            traj.states.push(Vector::from_column_slice(&vals[1..=n]));
            traj.inputs.push(Vector::from_column_slice(&vals[1 + n..]));
            traj.disturbance_draws.push(Vector::zeros(0));
        }
        Ok(traj)
    }
}

/// Simulates the plant under `u = -K x + e(t)`.
pub fn simulate(plant: &LtiPlant, k: &FeedbackGain, config: &SimConfig) -> Result<Trajectory> {
    simulate_with_disturbance(plant, k, None, config)
}

/// As [`simulate`], with an additional deterministic disturbance `w = L x`
/// entering through `B2`.
pub fn simulate_with_disturbance(
    plant: &LtiPlant,
    k: &FeedbackGain,
    l: Option<&DisturbanceGain>,
    config: &SimConfig,
) -> Result<Trajectory> {
    plant.check_gain(k)?;
    if let Some(l) = l {
        plant.check_disturbance_gain(l)?;
    }
    config.validate(plant)?;
    let (n, qw) = (plant.n(), plant.qw());
    let dt = config.dt;
    let steps = config.steps();

    let a_cl = plant.closed_loop_a(k) + l.map_or_else(|| DenseMatrix::zeros(n, n), |l| &plant.b2 * &l.0);
    let rho = matops::eigenvalues(&(DenseMatrix::identity(n, n) + &a_cl * dt))
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max);
    if rho >= 1.0 {
        log::warn!("dt = {dt} gives discrete spectral radius {rho:.4} >= 1");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sqdt = dt.sqrt();
    let input = |t: f64, x: &Vector| -> Vector { -(&k.0 * x) + config.exploration.eval(t) };
    let drift = |t: f64, x: &Vector| -> Vector { &a_cl * x + &plant.b1 * config.exploration.eval(t) };

    let mut x = config.x0.as_ref().map_or_else(|| Vector::zeros(n), |v| Vector::from_column_slice(v));
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut draws = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let t = step as f64 * dt;
        let dw = if config.noise_on {
            Vector::from_iterator(qw, (0..qw).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sqdt
            }))
        } else {
            Vector::zeros(qw)
        };
        let noise = &plant.b2 * &dw;
        let f0 = drift(t, &x);
        let next = match config.scheme {
            Scheme::EulerMaruyama => &x + &f0 * dt + &noise,
            Scheme::Heun => {
                let pred = &x + &f0 * dt + &noise;
                let f1 = drift(t + dt, &pred);
                &x + (f0 + f1) * (0.5 * dt) + &noise
            }
        };
        times.push(t);
        inputs.push(input(t, &x));
        states.push(x);
        draws.push(dw);
        let norm = next.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { time: t + dt, norm });
        }
        x = next;
    }
    let tf = steps as f64 * dt;
    times.push(tf);
    inputs.push(input(tf, &x));
    states.push(x);
    draws.push(Vector::zeros(qw));

    Ok(Trajectory {
        times,
        states,
        inputs,
        disturbance_draws: draws,
        disturbance_feedback: l.map(|l| l.0.clone()),
    })
}

/// Terms of the Ito expansion of `d(x'Px)` over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoTerms {
    /// Sampled `x_{k+1}'P x_{k+1} - x_k'P x_k`.
    pub increment: f64,
    /// `x'(A'P + PA)x dt`.
    pub state_drift: f64,
    /// `2 x'P B1 u dt`, plus `2 x'P B2 L x dt` under disturbance feedback.
    pub input_drift: f64,
    /// `Tr(B2'P B2) dt`.
    pub ito_correction: f64,
    /// `2 x'P B2 dw`.
    pub martingale: f64,
}

impl ItoTerms {
    pub fn drift(&self) -> f64 {
        self.state_drift + self.input_drift
    }

    pub fn total(&self) -> f64 {
        self.state_drift + self.input_drift + self.ito_correction + self.martingale
    }
}

/// Per-step Ito decomposition of `x'Px` along a trajectory (left-point evaluation).
pub fn ito_quadratic_increment(p: &SymMatrix, traj: &Trajectory, plant: &LtiPlant) -> Result<Vec<ItoTerms>> {
    if p.dim() != plant.n() {
        return Err(Error::dim("ito_quadratic_increment", plant.n(), p.dim()));
    }
    let pm = p.as_matrix();
    let lyap = plant.a.transpose() * pm + pm * &plant.a;
    let pb1 = pm * &plant.b1;
    let pb2 = pm * &plant.b2;
    let trace = (plant.b2.transpose() * &pb2).trace();
    let mut out = Vec::with_capacity(traj.len().saturating_sub(1));
    for k in 0..traj.len().saturating_sub(1) {
        let dt = traj.times[k + 1] - traj.times[k];
        let x = &traj.states[k];
        let x1 = &traj.states[k + 1];
        let mut input_drift = 2.0 * x.dot(&(&pb1 * &traj.inputs[k])) * dt;
        if let Some(l) = &traj.disturbance_feedback {
            input_drift += 2.0 * x.dot(&(&pb2 * (l * x))) * dt;
        }
        out.push(ItoTerms {
            increment: x1.dot(&(pm * x1)) - x.dot(&(pm * x)),
            state_drift: x.dot(&(&lyap * x)) * dt,
            input_drift,
            ito_correction: trace * dt,
            martingale: 2.0 * x.dot(&(&pb2 * &traj.disturbance_draws[k])),
        });
    }
    Ok(out)
}

/// Regressor `phi = [quad_basis(x); 2 (x ⊗ u); 1]`, so that
/// `d(x'Px) = phi' [svec(A'P + PA); vec(B1'P); Tr(B2'P B2)] dt + martingale`.
pub fn regressor(x: &Vector, u: &Vector) -> Vector {
    let q = matops::quad_basis(x);
    let xu = matops::kron_vec(x, u) * 2.0;
    let mut phi = Vector::zeros(q.len() + xu.len() + 1);
    phi.rows_mut(0, q.len()).copy_from(&q);
    phi.rows_mut(q.len(), xu.len()).copy_from(&xu);
    phi[q.len() + xu.len()] = 1.0;
    phi
}

/// Number of regression unknowns per value-matrix coordinate: `n(n+1)/2 + mn + 1`.
pub fn regressor_len(n: usize, m: usize) -> usize {
    matops::svec_len(n) + m * n + 1
}

/// Data blocks of one interval: `sum_k phi_k (int phi)'` and `sum_k phi_k dquad_k'`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub phi_hat: DenseMatrix,
    pub psi_hat: DenseMatrix,
    pub delta_t: f64,
}

/// Instrumented regression data `Phi_hat`, `Psi_hat` assembled from a trajectory.
///
/// The left-point regressor `phi_k` is used as instrument for the
/// trapezoidal integral `int_{t_k}^{t_{k+1}} phi dt`, which keeps the
/// martingale term uncorrelated with the instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub n: usize,
    pub m: usize,
    pub intervals: Vec<IntervalRecord>,
    pub phi_hat: DenseMatrix,
    pub psi_hat: DenseMatrix,
    pub duration: f64,
    pub rank: usize,
    pub condition: f64,
}

#[derive(Serialize)]
struct BatchJson {
    n: usize,
    m: usize,
    duration: f64,
    rank: usize,
    condition: f64,
    phi_hat: Vec<Vec<f64>>,
    psi_hat: Vec<Vec<f64>>,
    intervals: Vec<IntervalJson>,
}

#[derive(Serialize)]
struct IntervalJson {
    delta_t: f64,
    phi_hat: Vec<Vec<f64>>,
    psi_hat: Vec<Vec<f64>>,
}

impl RegressionBatch {
    pub fn unknowns(&self) -> usize {
        regressor_len(self.n, self.m)
    }

    pub fn to_json(&self) -> String {
        let j = BatchJson {
            n: self.n,
            m: self.m,
            duration: self.duration,
            rank: self.rank,
            condition: self.condition,
            phi_hat: matops::to_rows(&self.phi_hat),
            psi_hat: matops::to_rows(&self.psi_hat),
            intervals: self
                .intervals
                .iter()
                .map(|r| IntervalJson {
                    delta_t: r.delta_t,
                    phi_hat: matops::to_rows(&r.phi_hat),
                    psi_hat: matops::to_rows(&r.psi_hat),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&j).expect("plain data serializes")
    }

    /// Sums of the first `count` intervals.
    pub fn prefix(&self, count: usize) -> (DenseMatrix, DenseMatrix, f64) {
        let np = self.phi_hat.nrows();
        let n1 = self.psi_hat.ncols();
        let mut phi = DenseMatrix::zeros(np, np);
        let mut psi = DenseMatrix::zeros(np, n1);
        let mut t = 0.0;
        for r in self.intervals.iter().take(count) {
            phi += &r.phi_hat;
            psi += &r.psi_hat;
            t += r.delta_t;
        }
        (phi, psi, t)
    }
}

/// Numerical rank and 2-norm condition number of a square data matrix.
pub(crate) fn rank_and_condition(m: &DenseMatrix) -> (usize, f64) {
    let s = m.singular_values();
    let smax = s.max();
    if !(smax > 0.0) {
        return (0, f64::INFINITY);
    }
    let tol = smax * 1e-12 * m.nrows() as f64;
    let rank = s.iter().filter(|v| **v > tol).count();
    (rank, smax / s.min())
}

/// Groups the trajectory into intervals of `interval_len` steps and
/// accumulates the instrumented regression blocks.
pub fn collect_batch(traj: &Trajectory, interval_len: usize) -> Result<RegressionBatch> {
    if interval_len < 1 {
        return Err(Error::InvalidArgument("interval_len must be at least one step".into()));
    }
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least two samples".into()));
    }
    let n = traj.states[0].len();
    let m = traj.inputs[0].len();
    let np = regressor_len(n, m);
    let n1 = matops::svec_len(n);
    let phis: Vec<Vector> = traj.states.iter().zip(&traj.inputs).map(|(x, u)| regressor(x, u)).collect();
    let quads: Vec<Vector> = traj.states.iter().map(matops::quad_basis).collect();

    let steps = traj.len() - 1;
    let mut intervals = Vec::with_capacity(steps.div_ceil(interval_len));
    let mut phi_hat = DenseMatrix::zeros(np, np);
    let mut psi_hat = DenseMatrix::zeros(np, n1);
    let mut start = 0;
    while start < steps {
        let end = (start + interval_len).min(steps);
        let mut ph = DenseMatrix::zeros(np, np);
        let mut ps = DenseMatrix::zeros(np, n1);
        for k in start..end {
            let dt = traj.times[k + 1] - traj.times[k];
            let integral = (&phis[k] + &phis[k + 1]) * (0.5 * dt);
            ph.ger(1.0, &phis[k], &integral, 1.0);
            ps.ger(1.0, &phis[k], &(&quads[k + 1] - &quads[k]), 1.0);
        }
        if !matops::all_finite(&ph) || !matops::all_finite(&ps) {
            return Err(Error::InvalidArgument(format!("non-finite data in interval starting at t = {}", traj.times[start])));
        }
        phi_hat += &ph;
        psi_hat += &ps;
        intervals.push(IntervalRecord { phi_hat: ph, psi_hat: ps, delta_t: traj.times[end] - traj.times[start] });
        start = end;
    }
    let (rank, condition) = rank_and_condition(&phi_hat);
    if rank < np {
        return Err(Error::RankDeficient { rank, required: np });
    }
    Ok(RegressionBatch {
        n,
        m,
        intervals,
        phi_hat,
        psi_hat,
        duration: traj.times[steps] - traj.times[0],
        rank,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti;

    fn s(v: f64) -> DenseMatrix {
        DenseMatrix::from_element(1, 1, v)
    }

    fn scalar(a: f64, b1: f64, b2: f64) -> LtiPlant {
        LtiPlant::new(s(a), s(b1), s(b2), s(1.0), s(0.0)).unwrap()
    }

    fn quiet(m: usize, dt: f64, horizon: f64, x0: Vec<f64>) -> SimConfig {
        SimConfig {
            dt,
            horizon,
            seed: 1,
            noise_on: false,
            exploration: Exploration::none(m),
            scheme: Scheme::EulerMaruyama,
            x0: Some(x0),
        }
    }

    #[test]
    fn decay_matches_exponential() {
        let plant = scalar(-1.0, 1.0, 1.0);
        for (scheme, tol) in [(Scheme::EulerMaruyama, 1e-3), (Scheme::Heun, 1e-6)] {
            let cfg = SimConfig { scheme, ..quiet(1, 1e-3, 2.0, vec![1.0]) };
            let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
            let err = tr.times.iter().zip(&tr.states).map(|(t, x)| (x[0] - (-t).exp()).abs()).fold(0.0, f64::max);
            assert!(err < tol, "{scheme:?}: {err}");
        }
    }

    #[test]
    fn wiener_variance() {
        let plant = scalar(0.0, 0.0, 1.0);
        let runs = 1000;
        let finals: Vec<f64> = (0..runs)
            .map(|seed| {
                let cfg = SimConfig { seed, noise_on: true, ..quiet(1, 0.01, 1.0, vec![0.0]) };
                simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap().states.last().unwrap()[0]
            })
            .collect();
        let var = finals.iter().map(|x| x * x).sum::<f64>() / runs as f64;
        // standard error of the sample second moment of N(0, 1) is sqrt(2 / runs)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / runs as f64).sqrt(), "{var}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let cfg = SimConfig { seed: 42, horizon: 1.0, ..SimConfig::new(1) };
        let a = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        let b = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&plant, &FeedbackGain::zeros(1, 1), &SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_detected() {
        let plant = scalar(30.0, 1.0, 1.0);
        let err = simulate(&plant, &FeedbackGain::zeros(1, 1), &quiet(1, 0.01, 10.0, vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn config_validation() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let k = FeedbackGain::zeros(1, 1);
        assert!(simulate(&plant, &k, &quiet(1, 0.0, 1.0, vec![1.0])).is_err());
        assert!(simulate(&plant, &k, &quiet(1, 0.1, 1.0, vec![1.0])).is_err());
        assert!(simulate(&plant, &k, &quiet(2, 0.01, 1.0, vec![1.0])).is_err());
        assert!(simulate(&plant, &k, &quiet(1, 0.01, 1.0, vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn ito_drift_matches_increment_without_noise() {
        let plant = LtiPlant::from_weights(
            matops::from_rows(&[vec![0.0, 1.0], vec![-2.0, -1.0]]).unwrap(),
            matops::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            matops::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            &DenseMatrix::identity(2, 2),
            &DenseMatrix::identity(1, 1),
        )
        .unwrap();
        let p = lti::solve_lyapunov(&plant.a, &plant.q()).unwrap();
        let mut worst = Vec::new();
        for dt in [1e-2, 5e-3] {
            let cfg = SimConfig { exploration: Exploration::default_for(1), ..quiet(1, dt, 2.0, vec![1.0, -1.0]) };
            let tr = simulate(&plant, &FeedbackGain::zeros(1, 2), &cfg).unwrap();
            let terms = ito_quadratic_increment(&p, &tr, &plant).unwrap();
            worst.push(terms.iter().map(|t| (t.increment - t.drift()).abs()).fold(0.0, f64::max));
        }
        // per-step mismatch is second order in dt
        assert!(worst[0] < 5e-3);
        assert!(worst[1] < worst[0] / 3.0, "{worst:?}");
    }

    #[test]
    fn ito_zero_value() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let cfg = SimConfig { horizon: 1.0, ..SimConfig::new(1) };
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        let terms = ito_quadratic_increment(&SymMatrix::zeros(1), &tr, &plant).unwrap();
        assert!(terms.iter().all(|t| t.total() == 0.0 && t.increment == 0.0));
    }

    #[test]
    fn ito_martingale_mean() {
        let plant = scalar(0.0, 0.0, 1.0);
        let cfg = SimConfig { dt: 1e-3, horizon: 10.0, seed: 9, exploration: Exploration::none(1), x0: Some(vec![0.0]), ..SimConfig::new(1) };
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        let p = SymMatrix::identity(1);
        let diffs: Vec<f64> = ito_quadratic_increment(&p, &tr, &plant).unwrap().iter().map(|t| t.increment - t.ito_correction).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt());
    }

    #[test]
    fn zero_trajectory_is_rank_deficient() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let cfg = SimConfig { exploration: Exploration::none(1), ..quiet(1, 0.01, 1.0, vec![0.0]) };
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
        assert!(matches!(collect_batch(&tr, 10), Err(Error::RankDeficient { rank: 1, required: 3 })));
    }

    #[test]
    fn scalar_rich_batch_has_full_rank() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let cfg = SimConfig { noise_on: false, horizon: 20.0, x0: Some(vec![1.0]), ..SimConfig::new(1) };
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
        let b = collect_batch(&tr, 50).unwrap();
        assert_eq!(b.rank, 3);
        assert_eq!(b.unknowns(), 3);
    }

    #[test]
    fn noise_free_batch_is_consistent_with_true_operator() {
        let plant = LtiPlant::from_weights(
            matops::from_rows(&[vec![0.0, 1.0], vec![-2.0, -1.0]]).unwrap(),
            matops::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            matops::from_rows(&[vec![1.0], vec![0.5]]).unwrap(),
            &DenseMatrix::identity(2, 2),
            &DenseMatrix::identity(1, 1),
        )
        .unwrap();
        let cfg = SimConfig { noise_on: false, horizon: 20.0, x0: Some(vec![1.0, 0.0]), ..SimConfig::new(1) };
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 2), &cfg).unwrap();
        let b = collect_batch(&tr, 100).unwrap();
        let mut w = crate::learner::true_operator(&plant);
        // no noise: the trace row does not enter
        w.row_mut(w.nrows() - 1).fill(0.0);
        let resid = &b.psi_hat - &b.phi_hat * &w;
        assert!(resid.norm() <= 1e-5 * b.psi_hat.norm(), "{}", resid.norm() / b.psi_hat.norm());
        let (ph, ps, t) = b.prefix(b.intervals.len());
        assert_eq!(ph, b.phi_hat);
        assert_eq!(ps, b.psi_hat);
        assert!((t - b.duration).abs() < 1e-9);
    }

    #[test]
    fn martingale_residual_decays_with_horizon() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let w = crate::learner::true_operator(&plant);
        let medians: Vec<f64> = [20.0, 80.0, 320.0]
            .iter()
            .map(|&horizon| {
                let mut r: Vec<f64> = (0..7)
                    .map(|seed| {
                        let cfg = SimConfig {
                            dt: 1e-2,
                            horizon,
                            seed,
                            x0: Some(vec![1.0]),
                            exploration: Exploration::log_spaced(1, 6, 0.1, 3.0, 1.0),
                            ..SimConfig::new(1)
                        };
                        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &cfg).unwrap();
                        let b = collect_batch(&tr, 100).unwrap();
                        ((&b.psi_hat - &b.phi_hat * &w) / b.duration).norm()
                    })
                    .collect();
                r.sort_by(f64::total_cmp);
                r[3]
            })
            .collect();
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn exploration_channels_use_distinct_frequencies() {
        let e = Exploration::default_for(3);
        let mut all: Vec<f64> = e.channels.iter().flatten().map(|(_, w)| *w).collect();
        assert_eq!(all.len(), 36);
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 36);
        assert!((all[0] - 0.1).abs() < 1e-12 && (all[35] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn csv_header() {
        let plant = scalar(-1.0, 1.0, 1.0);
        let tr = simulate(&plant, &FeedbackGain::zeros(1, 1), &quiet(1, 0.01, 1.0, vec![1.0])).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x1,u1\n0,1,"));
        assert_eq!(csv.lines().count(), tr.len() + 1);
    }
}
