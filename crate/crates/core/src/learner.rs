//! Model-free policy/disturbance iteration.
//!
//! Along any trajectory, Ito's rule gives for every symmetric `P`
//!
//! `d(x'Px) = phi' W svec(P) dt + 2 x'P B2 dw`,
//!
//! with `phi = [quad_basis(x); 2 (x ⊗ u); 1]` and `W` the linear map
//! `svec(P) -> [svec(A'P + PA); vec(B1'P); Tr(B2'P B2)]`. The map is
//! identified once from data as `W = Phi_hat^{-1} Psi_hat` and reused for
//! every iterate: the iterate equation
//!
//! `(A - B1 K + B2 L)'P + P(A - B1 K + B2 L) + Q + K'RK - gamma^2 L'L = 0`
//!
//! only needs `A'P + PA` and `B1'P`, both of which `W` provides, plus the
//! known `B2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{DisturbanceGain, FeedbackGain, LtiPlant};
use crate::matops::{self, DenseMatrix, SymMatrix, Vector};
use crate::simsde::{self, RegressionBatch, SimConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl LearnerConfig {
    pub fn new(gamma: f64) -> Self {
        LearnerConfig { gamma, max_outer: 20, max_inner: 30, tol: 1e-9, ridge: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidArgument("iteration counts must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidArgument("tol must be positive and ridge non-negative".into()));
        }
        Ok(())
    }
}

/// Known quantities the learner may use: weights and the disturbance input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownData {
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub b2: DenseMatrix,
}

impl KnownData {
    pub fn from_plant(plant: &LtiPlant) -> Self {
        KnownData { q: plant.q(), r: plant.r(), b2: plant.b2.clone() }
    }

    fn r_inverse(&self) -> Result<DenseMatrix> {
        self.r
            .as_matrix()
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))
    }
}

/// Identified map `svec(P) -> [svec(A'P + PA); vec(B1'P); Tr(B2'P B2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedOperator {
    pub n: usize,
    pub m: usize,
    pub w: DenseMatrix,
    pub condition: f64,
    /// `||Psi_hat - Phi_hat W||_F / ||Psi_hat||_F`.
    pub residual: f64,
}

impl IdentifiedOperator {
    fn n1(&self) -> usize {
        matops::svec_len(self.n)
    }

    /// `A'P + PA` as predicted by the operator.
    pub fn lyapunov_term(&self, p: &Vector) -> Result<SymMatrix> {
        matops::smat(&(self.w.rows(0, self.n1()) * p))
    }

    /// `B1'P` as predicted by the operator.
    pub fn b1t_p(&self, p: &Vector) -> Result<DenseMatrix> {
        matops::mat(&(self.w.rows(self.n1(), self.m * self.n) * p), self.m, self.n)
    }

    pub fn trace_term(&self, p: &Vector) -> f64 {
        self.w.row(self.w.nrows() - 1).dot(&p.transpose())
    }
}

/// Exact operator of a known plant; an oracle for the identified one.
pub fn true_operator(plant: &LtiPlant) -> DenseMatrix {
    let (n, m) = (plant.n(), plant.m());
    let n1 = matops::svec_len(n);
    let np = simsde::regressor_len(n, m);
    let mut w = DenseMatrix::zeros(np, n1);
    w.view_mut((0, 0), (n1, n1)).copy_from(&matops::lyapunov_operator_svec(&plant.a));
    w.view_mut((n1, 0), (m * n, n1)).copy_from(&matops::left_mul_operator_svec(&plant.b1.transpose()));
    let bb = &plant.b2 * plant.b2.transpose();
    for i in 0..n {
        for j in i..n {
            let c = if i == j { bb[(i, i)] } else { 2.0 * bb[(i, j)] };
            w[(np - 1, matops::svec_index(n, i, j))] = c;
        }
    }
    w
}

/// `W = (Phi_hat + ridge I)^{-1} Psi_hat` by QR.
pub fn identify_operator(batch: &RegressionBatch, ridge: f64) -> Result<IdentifiedOperator> {
    let np = batch.unknowns();
    if batch.rank < np {
        return Err(Error::RankDeficient { rank: batch.rank, required: np });
    }
    let scale = batch.phi_hat.norm();
    let lhs = &batch.phi_hat + DenseMatrix::identity(np, np) * (ridge * scale);
    let w = lhs
        .clone()
        .qr()
        .solve(&batch.psi_hat)
        .ok_or(Error::IllConditioned { context: "identify_operator", condition: batch.condition })?;
    if !matops::all_finite(&w) {
        return Err(Error::IllConditioned { context: "identify_operator", condition: batch.condition });
    }
    let condition = if ridge > 0.0 { simsde_condition(&lhs) } else { batch.condition };
    if condition > 1e12 {
        log::warn!("regression data condition number {condition:.3e} exceeds 1e12");
    }
    let residual = (&batch.psi_hat - &batch.phi_hat * &w).norm() / batch.psi_hat.norm().max(f64::MIN_POSITIVE);
    Ok(IdentifiedOperator { n: batch.n, m: batch.m, w, condition, residual })
}

fn simsde_condition(m: &DenseMatrix) -> f64 {
    let s = m.singular_values();
    s.max() / s.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedIterate {
    pub p_hat: SymMatrix,
    pub b1t_p_hat: DenseMatrix,
    pub trace_hat: f64,
    /// Residual of the identification regression.
    pub lsq_residual: f64,
    /// Condition number of the regression data.
    pub condition: f64,
    /// Condition number of the per-iterate linear system.
    pub iterate_condition: f64,
}

/// Identifies the operator from `batch` and solves one iterate.
#[allow(clippy::too_many_arguments)]
pub fn solve_iterate(
    batch: &RegressionBatch,
    k: &FeedbackGain,
    l: &DisturbanceGain,
    gamma: f64,
    q: &SymMatrix,
    r: &SymMatrix,
    b2: &DenseMatrix,
    ridge: f64,
) -> Result<LearnedIterate> {
    let op = identify_operator(batch, ridge)?;
    let known = KnownData { q: q.clone(), r: r.clone(), b2: b2.clone() };
    solve_iterate_with(&op, &known, k, l, gamma)
}

/// Solves `Upsilon svec(P) = -svec(Q + K'RK - gamma^2 L'L)` where
/// `Upsilon svec(P) = svec(A'P + PA - K'(B1'P) - (B1'P)'K + L'B2'P + P B2 L)`
/// with `A'P + PA` and `B1'P` taken from the identified operator.
pub fn solve_iterate_with(
    op: &IdentifiedOperator,
    known: &KnownData,
    k: &FeedbackGain,
    l: &DisturbanceGain,
    gamma: f64,
) -> Result<LearnedIterate> {
    let (n, m) = (op.n, op.m);
    if k.shape() != (m, n) {
        return Err(Error::dim("learner gain K", format!("{m}x{n}"), format!("{:?}", k.shape())));
    }
    if known.b2.nrows() != n || l.shape() != (known.b2.ncols(), n) {
        return Err(Error::dim("learner disturbance gain", format!("{}x{n}", known.b2.ncols()), format!("{:?}", l.shape())));
    }
    let n1 = matops::svec_len(n);
    let mut upsilon = DenseMatrix::zeros(n1, n1);
    let b2l = &known.b2 * &l.0;
    for j in 0..n1 {
        let mut e = Vector::zeros(n1);
        e[j] = 1.0;
        let ej = matops::smat(&e)?;
        let lyap = op.lyapunov_term(&e)?;
        let bp = op.b1t_p(&e)?;
        let kb = k.transpose() * &bp;
        let lb = ej.as_matrix() * &b2l;
        let total = lyap.as_matrix() - &kb - kb.transpose() + &lb + lb.transpose();
        upsilon.set_column(j, &matops::svec_sym(&SymMatrix::symmetrize(&total)));
    }
    let q_g = known.q.as_matrix() + k.transpose() * known.r.as_matrix() * &k.0 - l.transpose() * &l.0 * (gamma * gamma);
    let rhs = -matops::svec_sym(&SymMatrix::symmetrize(&q_g));
    let iterate_condition = simsde_condition(&upsilon);
    if !(iterate_condition < 1e14) {
        return Err(Error::IllConditioned { context: "learner iterate", condition: iterate_condition });
    }
    let sol = upsilon
        .lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned { context: "learner iterate", condition: iterate_condition })?;
    let p_hat = matops::smat(&sol)?;
    if !matops::all_finite(&p_hat) {
        return Err(Error::IllConditioned { context: "learner iterate", condition: iterate_condition });
    }
    let p_vec = matops::svec_sym(&p_hat);
    Ok(LearnedIterate {
        b1t_p_hat: op.b1t_p(&p_vec)?,
        trace_hat: op.trace_term(&p_vec),
        p_hat,
        lsq_residual: op.residual,
        condition: op.condition,
        iterate_condition,
    })
}

/// Reference solution used to report learning errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub p: SymMatrix,
    pub k: DenseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub p: usize,
    pub q: usize,
    /// `NaN` without an oracle.
    pub rel_err_p: f64,
    /// Error of the gain `R^{-1} B1'P_hat` implied by this iterate; `NaN` without an oracle.
    pub rel_err_k: f64,
    /// Data-based GARE residual of the iterate.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerResult {
    pub k_hat: FeedbackGain,
    pub l_hat: DisturbanceGain,
    pub p_hat: SymMatrix,
    pub history: Vec<HistoryEntry>,
    pub converged: bool,
    pub operator: IdentifiedOperator,
}

impl LearnerResult {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("p,q,rel_err_P,rel_err_K,residual\n");
        for h in &self.history {
            out.push_str(&format!("{},{},{},{},{}\n", h.p, h.q, h.rel_err_p, h.rel_err_k, h.residual));
        }
        out
    }
}

/// `A'P + PA - (B1'P)' R^{-1} (B1'P) + gamma^{-2} P B2 B2' P + Q` from the operator.
pub fn data_gare_residual(op: &IdentifiedOperator, known: &KnownData, p: &SymMatrix, gamma: f64) -> Result<f64> {
    let pv = matops::svec_sym(p);
    let bp = op.b1t_p(&pv)?;
    let rinv = known.r_inverse()?;
    let pb2 = p.as_matrix() * &known.b2;
    let res = op.lyapunov_term(&pv)?.into_matrix() - bp.transpose() * rinv * &bp
        + &pb2 * pb2.transpose() / (gamma * gamma)
        + known.q.as_matrix();
    Ok(res.norm())
}

/// Learned double loop: the inner loop updates `L = gamma^{-2} B2' P_hat`,
/// the outer loop updates `K = R^{-1} (B1'P)_hat` from the identified operator.
pub fn robust_gains(
    batch: &RegressionBatch,
    known: &KnownData,
    cfg: &LearnerConfig,
    k1: &FeedbackGain,
    oracle: Option<&Oracle>,
) -> Result<LearnerResult> {
    cfg.validate()?;
    let op = identify_operator(batch, cfg.ridge)?;
    robust_gains_with(op, known, cfg, k1, oracle)
}

pub fn robust_gains_with(
    op: IdentifiedOperator,
    known: &KnownData,
    cfg: &LearnerConfig,
    k1: &FeedbackGain,
    oracle: Option<&Oracle>,
) -> Result<LearnerResult> {
    cfg.validate()?;
    let (n, qw) = (op.n, known.b2.ncols());
    let rinv = known.r_inverse()?;
    let gamma = cfg.gamma;
    let mut k = k1.clone();
    let mut history = Vec::new();
    let mut p_hat = SymMatrix::zeros(n);
    let mut l = DisturbanceGain::zeros(qw, n);
    let mut converged = false;
    for outer in 1..=cfg.max_outer {
        l = DisturbanceGain::zeros(qw, n);
        let mut prev: Option<SymMatrix> = None;
        let mut inner_done = false;
        let mut b1tp = DenseMatrix::zeros(op.m, n);
        for inner in 1..=cfg.max_inner {
            let it = solve_iterate_with(&op, known, &k, &l, gamma)
                .map_err(|e| Error::Iterate { outer, inner, source: Box::new(e) })?;
            let k_implied = &rinv * &it.b1t_p_hat;
            let (rel_err_p, rel_err_k) = match oracle {
                Some(o) => (
                    matops::relative_error(it.p_hat.as_matrix(), o.p.as_matrix()),
                    matops::relative_error(&k_implied, &o.k),
                ),
                None => (f64::NAN, f64::NAN),
            };
            history.push(HistoryEntry {
                p: outer,
                q: inner,
                rel_err_p,
                rel_err_k,
                residual: data_gare_residual(&op, known, &it.p_hat, gamma)?,
            });
            let change = prev
                .as_ref()
                .map(|pp| (it.p_hat.as_matrix() - pp.as_matrix()).norm() / (1.0 + it.p_hat.norm()))
                .unwrap_or(f64::INFINITY);
            l = DisturbanceGain(known.b2.transpose() * it.p_hat.as_matrix() / (gamma * gamma));
            b1tp = it.b1t_p_hat;
            p_hat = it.p_hat;
            prev = Some(p_hat.clone());
            if change <= cfg.tol {
                inner_done = true;
                break;
            }
        }
        if !p_hat.is_positive_definite() {
            log::warn!("learned value matrix at outer step {outer} is not positive definite");
        }
        let k_new = FeedbackGain(&rinv * &b1tp);
        let delta_k = (&k_new.0 - &k.0).norm() / (1.0 + k.norm());
        k = k_new;
        if delta_k <= cfg.tol && inner_done {
            converged = true;
            break;
        }
    }
    Ok(LearnerResult { k_hat: k, l_hat: l, p_hat, history, converged, operator: op })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub trajectory: Trajectory,
    /// `int (x'Qx + u'Ru) dt` by the trapezoidal rule.
    pub quadratic_cost: f64,
    /// `int ||L x||^2 dt`, the energy of the learned worst-case disturbance.
    pub disturbance_energy: f64,
    /// Earliest time after which `||x|| <= 0.02 ||x(0)||`; `None` if never reached or `x(0) = 0`.
    pub settling_time: Option<f64>,
    /// `max ||x|| / ||x(0)|| - 1`, clipped at zero.
    pub overshoot: f64,
}

/// Closed-loop run under the learned gains. The learned disturbance policy
/// `w = L x` is injected only when `inject_worst_case` is set; otherwise it
/// is used for evaluation.
pub fn apply_policy(
    plant: &LtiPlant,
    k: &FeedbackGain,
    l: &DisturbanceGain,
    config: &SimConfig,
    inject_worst_case: bool,
) -> Result<PolicyReport> {
    if !matops::all_finite(k) || !matops::all_finite(l) {
        return Err(Error::InvalidArgument("policy gains must be finite".into()));
    }
    let traj = simsde::simulate_with_disturbance(plant, k, inject_worst_case.then_some(l), config)?;
    let q = plant.q();
    let r = plant.r();
    let stage = |i: usize| -> (f64, f64) {
        let x = &traj.states[i];
        let u = &traj.inputs[i];
        let lx = &l.0 * x;
        (x.dot(&(q.as_matrix() * x)) + u.dot(&(r.as_matrix() * u)), lx.norm_squared())
    };
    let mut cost = 0.0;
    let mut energy = 0.0;
    for i in 0..traj.len().saturating_sub(1) {
        let dt = traj.times[i + 1] - traj.times[i];
        let (c0, e0) = stage(i);
        let (c1, e1) = stage(i + 1);
        cost += 0.5 * (c0 + c1) * dt;
        energy += 0.5 * (e0 + e1) * dt;
    }
    let norms: Vec<f64> = traj.states.iter().map(|x| x.norm()).collect();
    let x0 = norms[0];
    let (settling_time, overshoot) = if x0 > 0.0 {
        let band = 0.02 * x0;
        let last_out = norms.iter().rposition(|v| *v > band);
        let settling = match last_out {
            None => Some(traj.times[0]),
            Some(i) if i + 1 < norms.len() => Some(traj.times[i + 1]),
            Some(_) => None,
        };
        let peak = norms.iter().copied().fold(0.0, f64::max);
        (settling, (peak / x0 - 1.0).max(0.0))
    } else {
        (None, 0.0)
    };
    Ok(PolicyReport { trajectory: traj, quadratic_cost: cost, disturbance_energy: energy, settling_time, overshoot })
}
