//! Model-based solvers for the game algebraic Riccati equation
//!
//! `A'P + PA - P (B1 R^{-1} B1' - gamma^{-2} B2 B2') P + Q = 0`
//!
//! via the double-loop policy/disturbance iteration, plus the trace cost and
//! its policy gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinf::{self, HinfConfig};
use crate::lti::{self, DisturbanceGain, FeedbackGain, LtiPlant};
use crate::matops::{self, DenseMatrix, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Stopping threshold on `||dP||_F / (1 + ||P||_F)` and the analogous gain change.
    pub tol: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig { max_outer: 20, max_inner: 30, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameIterate {
    /// Outer index, starting at 1.
    pub p: usize,
    /// Inner index, starting at 1.
    pub q: usize,
    pub value: SymMatrix,
    /// Gain used while computing this iterate.
    pub k: FeedbackGain,
    /// Disturbance gain used while computing this iterate.
    pub l: DisturbanceGain,
    /// Change of the control gain produced at the end of outer step `p`;
    /// zero on inner iterates that are not the last of their outer step.
    pub delta_k: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GareSolution {
    pub p: SymMatrix,
    pub k_star: FeedbackGain,
    pub l_star: DisturbanceGain,
    pub gamma: f64,
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<GameIterate>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must be positive and finite, got {gamma}")))
    }
}

/// `B1 R^{-1} B1' - gamma^{-2} B2 B2'`.
fn riccati_quadratic(plant: &LtiPlant, rinv: &DenseMatrix, gamma: f64) -> DenseMatrix {
    &plant.b1 * rinv * plant.b1.transpose() - &plant.b2 * plant.b2.transpose() / (gamma * gamma)
}

/// Frobenius norm of the GARE left-hand side.
pub fn riccati_residual(plant: &LtiPlant, p: &SymMatrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if p.dim() != plant.n() {
        return Err(Error::dim("riccati_residual", plant.n(), p.dim()));
    }
    let rinv = plant.r_inverse()?;
    let pm = p.as_matrix();
    let g = riccati_quadratic(plant, &rinv, gamma);
    let lhs = pm * &plant.a + plant.a.transpose() * pm - pm * g * pm + plant.q().as_matrix();
    Ok(lhs.norm())
}

/// Solves the linear iterate equation
/// `A_g' P + P A_g + Q + K'RK - gamma^2 L'L = 0`, `A_g = A - B1 K + B2 L`.
pub fn inner_iteration(plant: &LtiPlant, k: &FeedbackGain, l: &DisturbanceGain, gamma: f64) -> Result<SymMatrix> {
    check_gamma(gamma)?;
    plant.check_gain(k)?;
    plant.check_disturbance_gain(l)?;
    let a_g = plant.closed_loop_a(k) + &plant.b2 * &l.0;
    let q_g = plant.q().as_matrix() + k.transpose() * plant.r().as_matrix() * &k.0 - l.transpose() * &l.0 * (gamma * gamma);
    lti::solve_lyapunov(&a_g, &SymMatrix::symmetrize(&q_g))
}

/// `gamma^{-2} B2' P`.
pub fn disturbance_gain(plant: &LtiPlant, p: &SymMatrix, gamma: f64) -> DisturbanceGain {
    DisturbanceGain(plant.b2.transpose() * p.as_matrix() / (gamma * gamma))
}

/// Runs the inner (disturbance) loop for a fixed control gain, starting at
/// `L = 0`. Returns the final value matrix and the inner iterates.
fn inner_loop(
    plant: &LtiPlant,
    k: &FeedbackGain,
    gamma: f64,
    cfg: &GameConfig,
    outer: usize,
) -> Result<(SymMatrix, Vec<GameIterate>, bool)> {
    let mut l = DisturbanceGain::zeros(plant.qw(), plant.n());
    let mut prev: Option<SymMatrix> = None;
    let mut iterates = Vec::new();
    for q in 1..=cfg.max_inner {
        let p = inner_iteration(plant, k, &l, gamma).map_err(|e| Error::Iterate { outer, inner: q, source: Box::new(e) })?;
        let residual = riccati_residual(plant, &p, gamma)?;
        let change = prev
            .as_ref()
            .map(|pp| (p.as_matrix() - pp.as_matrix()).norm() / (1.0 + p.norm()))
            .unwrap_or(f64::INFINITY);
        iterates.push(GameIterate { p: outer, q, value: p.clone(), k: k.clone(), l: l.clone(), delta_k: 0.0, residual });
        l = disturbance_gain(plant, &p, gamma);
        prev = Some(p);
        if change <= cfg.tol {
            return Ok((prev.expect("set above"), iterates, true));
        }
    }
    Ok((prev.expect("max_inner >= 1"), iterates, false))
}

/// Double-loop iteration from an admissible `K1`.
pub fn solve_game(plant: &LtiPlant, gamma: f64, k1: &FeedbackGain, cfg: &GameConfig) -> Result<GareSolution> {
    check_gamma(gamma)?;
    plant.check_gain(k1)?;
    if cfg.max_outer == 0 || cfg.max_inner == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("iteration counts must be >= 1 and tol > 0".into()));
    }
    let rinv = plant.r_inverse()?;
    let adm = hinf::admissibility(plant, k1, gamma, &HinfConfig::default())?;
    if !adm.admissible {
        return Err(Error::Inadmissible(format!(
            "initial gain: spectral abscissa {:.3e}, closed-loop norm {:.6} vs gamma {gamma}",
            adm.spectral_abscissa, adm.hinf_norm
        )));
    }
    let mut k = k1.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut p = SymMatrix::zeros(plant.n());
    for outer in 1..=cfg.max_outer {
        let (p_new, mut iterates, inner_ok) = inner_loop(plant, &k, gamma, cfg, outer)?;
        let k_new = FeedbackGain(&rinv * plant.b1.transpose() * p_new.as_matrix());
        let delta_k = (&k_new.0 - &k.0).norm() / (1.0 + k.norm());
        if let Some(last) = iterates.last_mut() {
            last.delta_k = delta_k;
        }
        history.append(&mut iterates);
        p = p_new;
        k = k_new;
        if delta_k <= cfg.tol && inner_ok {
            converged = true;
            break;
        }
    }
    let residual = riccati_residual(plant, &p, gamma)?;
    if !converged {
        log::warn!("solve_game stopped at max_outer = {} with residual {residual:.3e}", cfg.max_outer);
    }
    Ok(GareSolution {
        l_star: disturbance_gain(plant, &p, gamma),
        k_star: FeedbackGain(&rinv * plant.b1.transpose() * p.as_matrix()),
        p,
        gamma,
        residual,
        converged,
        history,
    })
}

/// Direct stabilizing GARE solution through the Hamiltonian sign function.
pub fn solve_gare_direct(plant: &LtiPlant, gamma: f64) -> Result<SymMatrix> {
    check_gamma(gamma)?;
    let rinv = plant.r_inverse()?;
    let g = riccati_quadratic(plant, &rinv, gamma);
    lti::solve_riccati_sign(&plant.a, &g, &plant.q())
}

/// `Tr(P B2 B2')`.
pub fn game_cost_trace(plant: &LtiPlant, p: &SymMatrix) -> f64 {
    (p.as_matrix() * &plant.b2 * plant.b2.transpose()).trace()
}

/// Value of the fixed-gain game: the maximal solution of
/// `(A - B1K)'P + P(A - B1K) + Q + K'RK + gamma^{-2} P B2 B2' P = 0`.
pub fn fixed_gain_value(plant: &LtiPlant, k: &FeedbackGain, gamma: f64, cfg: &GameConfig) -> Result<SymMatrix> {
    let (p, _, ok) = inner_loop(plant, k, gamma, cfg, 1)?;
    if !ok {
        log::warn!("fixed-gain inner loop hit max_inner = {}", cfg.max_inner);
    }
    Ok(p)
}

/// Gradient of `J(K) = Tr(P_gamma(K) B2 B2')`:
/// `2 (R K - B1' P) Lambda` with `A' Lambda + Lambda A'^T + B2 B2' = 0` and
/// `A' = A - B1 K + gamma^{-2} B2 B2' P`.
pub fn policy_gradient(plant: &LtiPlant, k: &FeedbackGain, gamma: f64) -> Result<DenseMatrix> {
    check_gamma(gamma)?;
    let adm = hinf::admissibility(plant, k, gamma, &HinfConfig::default())?;
    if !adm.admissible {
        return Err(Error::Inadmissible(format!("closed-loop norm {:.6} vs gamma {gamma}", adm.hinf_norm)));
    }
    let cfg = GameConfig { max_inner: 100, tol: 1e-13, ..GameConfig::default() };
    let p = fixed_gain_value(plant, k, gamma, &cfg)?;
    let bb = &plant.b2 * plant.b2.transpose();
    let a_prime = plant.closed_loop_a(k) + &bb * p.as_matrix() / (gamma * gamma);
    let lambda = lti::solve_lyapunov(&a_prime.transpose(), &SymMatrix::symmetrize(&bb))?;
    Ok((plant.r().as_matrix() * &k.0 - plant.b1.transpose() * p.as_matrix()) * lambda.as_matrix() * 2.0)
}

/// `||K_a - K_b||_F / ||K_b||_F`.
pub fn gain_error(k: &DenseMatrix, reference: &DenseMatrix) -> f64 {
    matops::relative_error(k, reference)
}
