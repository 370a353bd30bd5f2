//! C ABI for mixsyn.
//!
//! Matrices cross the boundary as row-major `double` arrays. Objects are
//! opaque handles released with the matching `*_free` function. Every
//! fallible call returns a [`MixsynStatus`]; on failure the message is
//! available from [`mixsyn_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mixsyn::gare::{self, GameConfig};
use mixsyn::hinf::{self, HinfConfig, SearchOptions};
use mixsyn::learner::{self, KnownData};
use mixsyn::lti::{FeedbackGain, LtiPlant};
use mixsyn::matops::{DenseMatrix, SymMatrix};
use mixsyn::pipeline::{CollectConfig, LearnConfig};
use mixsyn::simsde;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixsynStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed input: dimensions, non-finite values, bad JSON.
    InvalidInput = 2,
    /// The computation itself failed (not Hurwitz, no convergence, ...).
    Numerical = 3,
    /// Caller-provided output buffer has the wrong length.
    BufferSize = 4,
    Panic = 5,
}

/// Linear plant with weights folded into `C` and `D`.
pub struct MixsynPlant(LtiPlant);

/// State-feedback gain `K` in `u = -K x`.
pub struct MixsynGain(DenseMatrix);

/// Result of a model-based or data-driven game solve.
pub struct MixsynSolution {
    p: SymMatrix,
    k: DenseMatrix,
    l: DenseMatrix,
    residual: f64,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(MixsynStatus, String);

impl From<mixsyn::Error> for Fail {
    fn from(e: mixsyn::Error) -> Self {
        let status = if e.is_validation() { MixsynStatus::InvalidInput } else { MixsynStatus::Numerical };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MixsynStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MixsynStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MixsynStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MixsynStatus::Panic
        }
    }
}

unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix, Fail> {
    if rows * cols == 0 {
        return Ok(DenseMatrix::zeros(rows, cols));
    }
    if data.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(data, rows * cols);
    Ok(DenseMatrix::from_row_slice(rows, cols, s))
}

unsafe fn write_matrix(m: &DenseMatrix, out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != m.len() {
        return Err(Fail(MixsynStatus::BufferSize, format!("buffer holds {len} values, need {}", m.len())));
    }
    let s = std::slice::from_raw_parts_mut(out, len);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            s[r * m.ncols() + c] = m[(r, c)];
        }
    }
    Ok(())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next mixsyn call on the same thread.
#[no_mangle]
pub extern "C" fn mixsyn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a plant from `A` (n x n), `B1` (n x m), `B2` (n x q) and the
/// weights `Q` (n x n), `R` (m x m).
///
/// # Safety
/// Every matrix pointer must reference the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_plant_new(
    n: usize,
    m: usize,
    q: usize,
    a: *const f64,
    b1: *const f64,
    b2: *const f64,
    weight_q: *const f64,
    weight_r: *const f64,
    out: *mut *mut MixsynPlant,
) -> MixsynStatus {
    guard(|| {
        if n == 0 || m == 0 || q == 0 {
            return Err(Fail(MixsynStatus::InvalidInput, "plant dimensions must be positive".into()));
        }
        let plant = LtiPlant::from_weights(
            read_matrix(a, n, n, "A")?,
            read_matrix(b1, n, m, "B1")?,
            read_matrix(b2, n, q, "B2")?,
            &read_matrix(weight_q, n, n, "Q")?,
            &read_matrix(weight_r, m, m, "R")?,
        )?;
        put(out, MixsynPlant(plant))
    })
}

/// Parses a plant from the JSON format written by the `mixsyn` tool.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_plant_from_json(json: *const c_char, out: *mut *mut MixsynPlant) -> MixsynStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(MixsynStatus::InvalidInput, format!("json is not UTF-8: {e}")))?;
        put(out, MixsynPlant(LtiPlant::from_json(text)?))
    })
}

/// # Safety
/// `plant` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_plant_free(plant: *mut MixsynPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Writes the state, control and disturbance dimensions.
///
/// # Safety
/// Output pointers must be valid or NULL (NULL outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn mixsyn_plant_dims(plant: *const MixsynPlant, n: *mut usize, m: *mut usize, q: *mut usize) -> MixsynStatus {
    guard(|| {
        let p = &deref(plant, "plant")?.0;
        for (ptr, v) in [(n, p.n()), (m, p.m()), (q, p.qw())] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `data` must reference `m * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_gain_new(m: usize, n: usize, data: *const f64, out: *mut *mut MixsynGain) -> MixsynStatus {
    guard(|| {
        let k = read_matrix(data, m, n, "gain")?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Fail(MixsynStatus::InvalidInput, "gain has non-finite entries".into()));
        }
        put(out, MixsynGain(k))
    })
}

/// # Safety
/// `gain` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_gain_free(gain: *mut MixsynGain) {
    if !gain.is_null() {
        drop(Box::from_raw(gain));
    }
}

/// # Safety
/// `out` must hold `len` doubles; `len` must equal rows * cols of the gain.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_gain_values(gain: *const MixsynGain, out: *mut f64, len: usize) -> MixsynStatus {
    guard(|| write_matrix(&deref(gain, "gain")?.0, out, len))
}

/// H-infinity norm from disturbance to output under `u = -K x`.
///
/// # Safety
/// Handles must be live; `norm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_hinf_norm(plant: *const MixsynPlant, gain: *const MixsynGain, norm: *mut f64) -> MixsynStatus {
    guard(|| {
        let p = &deref(plant, "plant")?.0;
        let k = FeedbackGain(deref(gain, "gain")?.0.clone());
        p.check_gain(&k)?;
        let v = hinf::hinf_norm(p, &k, &HinfConfig::default())?.value;
        *norm.as_mut().ok_or_else(|| null("norm"))? = v;
        Ok(())
    })
}

/// Sweeps the given closed-loop pole locations and returns the first gain
/// with norm below `gamma`. `norm` may be NULL.
///
/// # Safety
/// `poles` must reference `n_poles` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_find_admissible_gain(
    plant: *const MixsynPlant,
    gamma: f64,
    poles: *const f64,
    n_poles: usize,
    out: *mut *mut MixsynGain,
    norm: *mut f64,
) -> MixsynStatus {
    guard(|| {
        let p = &deref(plant, "plant")?.0;
        if poles.is_null() && n_poles > 0 {
            return Err(null("poles"));
        }
        let poles = if n_poles == 0 { &[][..] } else { std::slice::from_raw_parts(poles, n_poles) };
        let found = hinf::find_admissible_gain(p, gamma, poles, &SearchOptions::default())?;
        if let Some(r) = norm.as_mut() {
            *r = found.norm;
        }
        put(out, MixsynGain(found.gain.0))
    })
}

/// Model-based double-loop game iteration from an admissible `k1`.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solve_game(
    plant: *const MixsynPlant,
    gamma: f64,
    k1: *const MixsynGain,
    out: *mut *mut MixsynSolution,
) -> MixsynStatus {
    guard(|| {
        let p = &deref(plant, "plant")?.0;
        let k1 = FeedbackGain(deref(k1, "k1")?.0.clone());
        let s = gare::solve_game(p, gamma, &k1, &GameConfig::default())?;
        put(
            out,
            MixsynSolution { p: s.p, k: s.k_star.0, l: s.l_star.0, residual: s.residual, converged: s.converged },
        )
    })
}

/// Data-driven solve: simulates the plant under `k1` with exploration and
/// noise, then learns the gains from the trajectory without using `A` or `B1`.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_learn(
    plant: *const MixsynPlant,
    gamma: f64,
    k1: *const MixsynGain,
    seed: u64,
    out: *mut *mut MixsynSolution,
) -> MixsynStatus {
    guard(|| {
        let p = &deref(plant, "plant")?.0;
        let k1 = FeedbackGain(deref(k1, "k1")?.0.clone());
        p.check_gain(&k1)?;
        let collect = CollectConfig::default();
        let traj = simsde::simulate(p, &k1, &collect.sim_config(p.m(), seed))?;
        let batch = simsde::collect_batch(&traj, collect.interval_len)?;
        let known = KnownData::from_plant(p);
        let res = learner::robust_gains(&batch, &known, &LearnConfig::default().learner_config(gamma), &k1, None)?;
        let residual = learner::data_gare_residual(&res.operator, &known, &res.p_hat, gamma)?;
        put(
            out,
            MixsynSolution { p: res.p_hat, k: res.k_hat.0, l: res.l_hat.0, residual, converged: res.converged },
        )
    })
}

/// # Safety
/// `solution` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solution_free(solution: *mut MixsynSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Copies `P` (n x n, row-major).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solution_p(solution: *const MixsynSolution, out: *mut f64, len: usize) -> MixsynStatus {
    guard(|| write_matrix(deref(solution, "solution")?.p.as_matrix(), out, len))
}

/// Copies `K` (m x n, row-major).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solution_k(solution: *const MixsynSolution, out: *mut f64, len: usize) -> MixsynStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.k, out, len))
}

/// Copies `L` (q x n, row-major).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solution_l(solution: *const MixsynSolution, out: *mut f64, len: usize) -> MixsynStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.l, out, len))
}

/// Riccati residual of the solution and whether the iteration converged.
/// Either output may be NULL.
///
/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mixsyn_solution_info(solution: *const MixsynSolution, residual: *mut f64, converged: *mut bool) -> MixsynStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        if let Some(r) = residual.as_mut() {
            *r = s.residual;
        }
        if let Some(c) = converged.as_mut() {
            *c = s.converged;
        }
        Ok(())
    })
}
