//! Reference plants shared by examples, tests and the benchmark harness.

use rand::Rng;

use crate::error::Result;
use crate::hinf::{self, HinfConfig};
use crate::lti::{self, FeedbackGain, LtiPlant};
use crate::matops::{DenseMatrix, SymMatrix};

/// `a = -1, b1 = b2 = q = r = 1`.
pub fn scalar_plant() -> LtiPlant {
    let one = DenseMatrix::from_element(1, 1, 1.0);
    LtiPlant::from_weights(DenseMatrix::from_element(1, 1, -1.0), one.clone(), one.clone(), &one, &one)
        .expect("valid scalar plant")
}

/// Positive root of `1 - 2p - 0.75p^2 = 0`, the GARE of [`scalar_plant`] at `gamma = 2`.
pub fn scalar_gare_root() -> f64 {
    (-2.0 + 7f64.sqrt()) / 1.5
}

/// A random game instance with an admissible initial gain.
#[derive(Debug, Clone)]
pub struct GameInstance {
    pub plant: LtiPlant,
    pub gamma: f64,
    pub k1: FeedbackGain,
}

/// Random controllable plant with `Q = I`, `R = I`, `K1` the LQR gain and
/// `gamma = 1.5 ||T_zw(K1)||_inf`.
pub fn random_game<R: Rng>(rng: &mut R, n: usize, m: usize, qw: usize) -> Result<GameInstance> {
    loop {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b1 = DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let b2 = DenseMatrix::from_fn(n, qw, |_, _| rng.random_range(-0.5..0.5));
        let plant = LtiPlant::from_weights(a, b1, b2, &DenseMatrix::identity(n, n), &DenseMatrix::identity(m, m))?;
        let rep = lti::check_realizability(&plant);
        if !rep.controllable || rep.controllable_margin < 0.05 {
            continue;
        }
        let x = lti::solve_care(&plant.a, &plant.b1, &plant.q(), &SymMatrix::identity(m))?;
        let k = FeedbackGain(plant.b1.transpose() * x.as_matrix());
        let norm = hinf::hinf_norm(&plant, &k, &HinfConfig::default())?.value;
        if norm <= 0.0 {
            continue;
        }
        return Ok(GameInstance { plant, gamma: 1.5 * norm, k1: k });
    }
}
