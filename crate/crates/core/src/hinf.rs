//! H-infinity norm of the closed loop `w -> z` by the two-step Hamiltonian
//! bisection-free iteration, admissibility checks and the pole-sweep search
//! for an initial admissible gain.

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{self, AdmissibilityReport, FeedbackGain, LtiPlant, HURWITZ_EPS};
use crate::matops::{self, DenseMatrix, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HinfConfig {
    /// Relative tolerance of the norm estimate.
    pub eta: f64,
    pub max_iter: usize,
    /// Eigenvalues with `|Re| <= imag_tol (1 + |lambda|)` count as imaginary.
    pub imag_tol: f64,
}

impl Default for HinfConfig {
    fn default() -> Self {
        HinfConfig { eta: 1e-3, max_iter: 100, imag_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HinfNorm {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    /// Frequency where the largest singular value was observed.
    pub peak_frequency: f64,
    pub iterations: usize,
}

/// Scaled Hamiltonian `[A, B B'/gamma; -C'C/gamma, -A']`; it has an
/// imaginary eigenvalue `j w` exactly when `gamma` is a singular value of `G(j w)`.
pub fn hamiltonian(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix, gamma: f64) -> DenseMatrix {
    let n = a.nrows();
    let mut h = DenseMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose() / gamma));
    h.view_mut((n, 0), (n, n)).copy_from(&(-(c.transpose() * c) / gamma));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    h
}

/// `||T_zw(K)||_inf` for a stabilizing gain.
pub fn hinf_norm(plant: &LtiPlant, k: &FeedbackGain, cfg: &HinfConfig) -> Result<HinfNorm> {
    hinf_norm_of(&lti::closed_loop(plant, k)?, cfg)
}

/// Norm of `C (sI - A)^{-1} B2` for the given (Hurwitz) realization.
pub fn hinf_norm_of(sys: &LtiPlant, cfg: &HinfConfig) -> Result<HinfNorm> {
    let abscissa = matops::spectral_abscissa(&sys.a);
    if abscissa >= -HURWITZ_EPS {
        return Err(Error::NotHurwitz { context: "hinf_norm", abscissa });
    }
    two_step(sys, cfg)
}

fn gain_at(sys: &LtiPlant, omega: f64) -> Result<f64> {
    Ok(matops::sigma_max_complex(&lti::transfer_value(sys, omega)?))
}

fn two_step(sys: &LtiPlant, cfg: &HinfConfig) -> Result<HinfNorm> {
    if !(cfg.eta > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("hinf: eta must be positive and max_iter nonzero".into()));
    }
    if sys.n() == 0 || sys.b2.norm() == 0.0 || sys.c.norm() == 0.0 {
        return Ok(HinfNorm { value: 0.0, lower: 0.0, upper: 0.0, peak_frequency: 0.0, iterations: 0 });
    }

    // initial lower bound from a few sampled frequencies
    let eigs = matops::eigenvalues(&sys.a);
    let mut mags: Vec<f64> = eigs.iter().map(|l| l.norm()).collect();
    mags.sort_by(f64::total_cmp);
    let omega_p = mags[mags.len() / 2];
    let mut candidates = vec![0.0, omega_p];
    candidates.extend(eigs.iter().map(|l| l.im.abs()).filter(|w| *w > 0.0));
    let mut lb = 0.0;
    let mut peak = 0.0;
    for w in candidates {
        let g = gain_at(sys, w)?;
        if g > lb {
            lb = g;
            peak = w;
        }
    }
    if lb == 0.0 {
        // all samples vanished; fall back to a coarse log sweep
        for k in 0..60 {
            let w = 10f64.powf(-4.0 + k as f64 * 0.15);
            let g = gain_at(sys, w)?;
            if g > lb {
                lb = g;
                peak = w;
            }
        }
        if lb == 0.0 {
            return Ok(HinfNorm { value: 0.0, lower: 0.0, upper: 0.0, peak_frequency: 0.0, iterations: 0 });
        }
    }

    for iter in 1..=cfg.max_iter {
        let gamma = (1.0 + 2.0 * cfg.eta) * lb;
        let h = hamiltonian(&sys.a, &sys.b2, &sys.c, gamma);
        let mut freqs: Vec<f64> = matops::eigenvalues(&h)
            .into_iter()
            .filter(|l: &Complex<f64>| l.re.abs() <= cfg.imag_tol * (1.0 + l.norm()))
            .map(|l| l.im)
            .collect();
        if freqs.is_empty() {
            return Ok(HinfNorm {
                value: 0.5 * (lb + gamma),
                lower: lb,
                upper: gamma,
                peak_frequency: peak,
                iterations: iter,
            });
        }
        freqs.extend(freqs.clone().into_iter().map(|w| -w));
        freqs.sort_by(f64::total_cmp);
        freqs.dedup();
        let mut new_lb = lb;
        for pair in freqs.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            let g = gain_at(sys, mid.abs())?;
            if g > new_lb {
                new_lb = g;
                peak = mid.abs();
            }
        }
        // also the single-frequency case
        if freqs.len() == 1 || freqs.iter().all(|w| (w - freqs[0]).abs() < 1e-14) {
            let g = gain_at(sys, freqs[0].abs())?;
            if g > new_lb {
                new_lb = g;
                peak = freqs[0].abs();
            }
        }
        if new_lb <= gamma {
            // imaginary eigenvalues were tangential within tolerance
            let value = new_lb.max(lb);
            return Ok(HinfNorm { value, lower: value, upper: gamma, peak_frequency: peak, iterations: iter });
        }
        lb = new_lb;
    }
    Err(Error::NoConvergence { context: "hinf_norm", iterations: cfg.max_iter, last_change: lb })
}

/// Spectral abscissa of `A - B1 K` together with `||T_zw(K)||_inf < gamma`.
pub fn admissibility(plant: &LtiPlant, k: &FeedbackGain, gamma: f64, cfg: &HinfConfig) -> Result<AdmissibilityReport> {
    plant.check_gain(k)?;
    let spectral_abscissa = matops::spectral_abscissa(&plant.closed_loop_a(k));
    if spectral_abscissa >= -HURWITZ_EPS {
        return Ok(AdmissibilityReport { spectral_abscissa, hinf_norm: f64::INFINITY, gamma, admissible: false });
    }
    let norm = hinf_norm(plant, k, cfg)?.value;
    Ok(AdmissibilityReport { spectral_abscissa, hinf_norm: norm, gamma, admissible: norm < gamma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub hinf: HinfConfig,
    /// Return `K = 0` directly when the open loop is already admissible.
    pub allow_open_loop: bool,
    pub parallel: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { hinf: HinfConfig::default(), allow_open_loop: true, parallel: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pole: f64,
    /// `+inf` when placement failed or the loop is unstable.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleGain {
    pub gain: FeedbackGain,
    /// `None` for the open-loop gain.
    pub pole: Option<f64>,
    pub norm: f64,
    pub sweep: Vec<SweepPoint>,
}

/// Sweeps candidate closed-loop pole locations and returns the first gain
/// (in ascending pole order) whose closed loop is admissible.
pub fn find_admissible_gain(plant: &LtiPlant, gamma: f64, poles: &[f64], opts: &SearchOptions) -> Result<AdmissibleGain> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if poles.is_empty() {
        return Err(Error::InvalidArgument("pole list is empty".into()));
    }
    if let Some(p) = poles.iter().find(|p| !(**p < 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("candidate pole {p} is not strictly negative")));
    }
    let (n, m) = (plant.n(), plant.m());
    if opts.allow_open_loop && lti::is_hurwitz(&plant.a) {
        let k0 = FeedbackGain::zeros(m, n);
        let norm = hinf_norm(plant, &k0, &opts.hinf)?.value;
        if norm < gamma {
            return Ok(AdmissibleGain { gain: k0, pole: None, norm, sweep: Vec::new() });
        }
    }
    let mut sorted = poles.to_vec();
    sorted.sort_by(f64::total_cmp);

    let eval = |p: &f64| -> (Option<FeedbackGain>, f64) {
        match place_repeated_pole(&plant.a, &plant.b1, *p) {
            Ok(k) => {
                let k = FeedbackGain(k);
                match admissibility(plant, &k, gamma, &opts.hinf) {
                    Ok(rep) => (Some(k), rep.hinf_norm),
                    Err(_) => (None, f64::INFINITY),
                }
            }
            Err(_) => (None, f64::INFINITY),
        }
    };
    let results: Vec<(Option<FeedbackGain>, f64)> = if opts.parallel {
        sorted.par_iter().map(eval).collect()
    } else {
        sorted.iter().map(eval).collect()
    };
    let sweep: Vec<SweepPoint> = sorted.iter().zip(&results).map(|(p, r)| SweepPoint { pole: *p, norm: r.1 }).collect();
    for (p, (k, norm)) in sorted.iter().zip(results.iter()) {
        if let Some(k) = k {
            if *norm < gamma {
                return Ok(AdmissibleGain { gain: k.clone(), pole: Some(*p), norm: *norm, sweep });
            }
        }
    }
    let best = sweep.iter().min_by(|a, b| a.norm.total_cmp(&b.norm)).copied().expect("nonempty sweep");
    Err(Error::NoAdmissibleGain { gamma, best_pole: best.pole, best_norm: best.norm })
}

/// Gain placing the spectrum of `A - B K` at (or, for the fallback, left of)
/// the pole `p`. Single-input directions use Ackermann's formula with all
/// poles at `p`; if no input direction is controllable, a shifted LQR gain
/// is used instead.
pub fn place_repeated_pole(a: &DenseMatrix, b: &DenseMatrix, p: f64) -> Result<DenseMatrix> {
    let n = a.nrows();
    let m = b.ncols();
    if m == 0 {
        return Err(Error::InvalidArgument("no control inputs".into()));
    }
    let mut directions: Vec<nalgebra::DVector<f64>> = Vec::new();
    let svd = b.clone().svd(false, true);
    if let Some(vt) = svd.v_t.as_ref() {
        let top = (0..svd.singular_values.len())
            .max_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap_or(0);
        directions.push(vt.row(top).transpose());
    }
    for j in 0..m {
        let mut e = nalgebra::DVector::zeros(m);
        e[j] = 1.0;
        directions.push(e);
    }
    for f in directions {
        let bf = b * &f;
        if let Some(k) = ackermann(a, &bf, p) {
            let gain = &f * k.transpose();
            let cl = a - b * &gain;
            if matops::all_finite(&gain) && matops::spectral_abscissa(&cl) < -HURWITZ_EPS {
                return Ok(gain);
            }
        }
    }
    // shifted LQR: eigenvalues of A - B K end up left of p
    let shifted = a - DenseMatrix::identity(n, n) * p;
    let x = lti::solve_care(&shifted, b, &SymMatrix::identity(n), &SymMatrix::identity(m))?;
    let gain = b.transpose() * x.as_matrix();
    if matops::spectral_abscissa(&(a - b * &gain)) < -HURWITZ_EPS {
        Ok(gain)
    } else {
        Err(Error::InvalidArgument(format!("pole placement at {p} failed: (A, B1) not stabilizable")))
    }
}

/// Ackermann's formula `k' = e_n' C^{-1} (A - pI)^n` for a single input.
fn ackermann(a: &DenseMatrix, b: &nalgebra::DVector<f64>, p: f64) -> Option<nalgebra::DVector<f64>> {
    let n = a.nrows();
    let mut ctrb = DenseMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let sv = ctrb.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return None;
    }
    let mut e = nalgebra::DVector::zeros(n);
    e[n - 1] = 1.0;
    let y = ctrb.transpose().lu().solve(&e)?;
    let shifted = a - DenseMatrix::identity(n, n) * p;
    let mut phi = DenseMatrix::identity(n, n);
    for _ in 0..n {
        phi = &phi * &shifted;
    }
    Some(phi.transpose() * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        matops::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn grid_norm(sys: &LtiPlant, points: usize) -> f64 {
        (0..points)
            .map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / (points - 1) as f64))
            .chain(std::iter::once(0.0))
            .map(|w| gain_at(sys, w).unwrap())
            .fold(0.0, f64::max)
    }

    #[test]
    fn first_order_norm() {
        let p = LtiPlant::new(m(&[&[-1.0]]), m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[0.0]])).unwrap();
        let r = hinf_norm(&p, &FeedbackGain::zeros(1, 1), &HinfConfig::default()).unwrap();
        assert!((r.value - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn resonant_second_order() {
        // w_n = 1, zeta = 0.1: peak 1 / (2 zeta sqrt(1 - zeta^2))
        let zeta: f64 = 0.1;
        let p = LtiPlant::new(
            m(&[&[0.0, 1.0], &[-1.0, -2.0 * zeta]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[1.0, 0.0]]),
            m(&[&[0.0]]),
        )
        .unwrap();
        let r = hinf_norm(&p, &FeedbackGain::zeros(1, 2), &HinfConfig::default()).unwrap();
        let exact = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert!((r.value - exact).abs() / exact < 2e-3, "{} vs {exact}", r.value);
        assert!((r.peak_frequency - (1.0 - 2.0 * zeta * zeta).sqrt()).abs() < 0.05);
    }

    #[test]
    fn unstable_closed_loop_rejected() {
        let p = LtiPlant::new(m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[0.0]])).unwrap();
        assert!(matches!(
            hinf_norm(&p, &FeedbackGain::zeros(1, 1), &HinfConfig::default()),
            Err(Error::NotHurwitz { .. })
        ));
        let rep = admissibility(&p, &FeedbackGain::zeros(1, 1), 10.0, &HinfConfig::default()).unwrap();
        assert!(!rep.admissible);
    }

    #[test]
    fn random_systems_match_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = rng.random_range(1..=4);
            let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &a - DenseMatrix::identity(n, n) * (matops::spectral_abscissa(&a) + rng.random_range(0.1..1.0));
            let b2 = DenseMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let c = DenseMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let sys = LtiPlant::new(a, DenseMatrix::zeros(n, 1), b2, c, DenseMatrix::zeros(2, 1)).unwrap();
            let r = hinf_norm_of(&sys, &HinfConfig::default()).unwrap();
            let g = grid_norm(&sys, 20000);
            assert!(r.value >= g * (1.0 - 1e-3), "{} < {g}", r.value);
            assert!((r.value - g).abs() <= 1e-2 * g.max(0.1), "{} vs {g}", r.value);
            assert!(r.lower <= r.upper);
        }
    }

    #[test]
    fn ackermann_places_poles() {
        let a = m(&[&[0.0, 1.0], &[2.0, -1.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        let k = place_repeated_pole(&a, &b, -2.0).unwrap();
        // (s + 2)^2 = s^2 + 4 s + 4
        let cl = &a - &b * &k;
        assert!((cl.trace() + 4.0).abs() < 1e-10);
        assert!((cl.determinant() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn multi_input_placement_stabilizes() {
        let a = m(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let b = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = place_repeated_pole(&a, &b, -1.0).unwrap();
        assert!(matops::spectral_abscissa(&(&a - &b * &k)) < 0.0);
    }

    #[test]
    fn search_finds_gain_and_reports_sweep() {
        let p = LtiPlant::from_weights(m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[1.0]]), &m(&[&[1.0]]), &m(&[&[1.0]])).unwrap();
        let res = find_admissible_gain(&p, 2.0, &[-3.0, -1.0, -0.5], &SearchOptions::default()).unwrap();
        assert_eq!(res.pole, Some(-3.0));
        assert!(res.norm < 2.0);
        assert_eq!(res.sweep.len(), 3);
        let err = find_admissible_gain(&p, 0.01, &[-3.0, -1.0], &SearchOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoAdmissibleGain { .. }));
        assert!(find_admissible_gain(&p, 2.0, &[], &SearchOptions::default()).is_err());
        assert!(find_admissible_gain(&p, 2.0, &[0.5], &SearchOptions::default()).is_err());
    }

    #[test]
    fn open_loop_shortcut() {
        let p = LtiPlant::from_weights(m(&[&[-1.0]]), m(&[&[1.0]]), m(&[&[1.0]]), &m(&[&[1.0]]), &m(&[&[1.0]])).unwrap();
        let res = find_admissible_gain(&p, 2.0, &[-3.0], &SearchOptions::default()).unwrap();
        assert_eq!(res.pole, None);
        assert_eq!(res.gain.0[(0, 0)], 0.0);
        let opts = SearchOptions { allow_open_loop: false, ..SearchOptions::default() };
        let res = find_admissible_gain(&p, 2.0, &[-3.0], &opts).unwrap();
        assert_eq!(res.pole, Some(-3.0));
    }

    #[test]
    fn parallel_and_serial_agree() {
        let p = LtiPlant::from_weights(
            m(&[&[0.0, 1.0], &[2.0, -1.0]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[0.3], &[1.0]]),
            &DenseMatrix::identity(2, 2),
            &m(&[&[1.0]]),
        )
        .unwrap();
        let poles = [-4.0, -2.0, -1.0, -0.5];
        let a = find_admissible_gain(&p, 5.0, &poles, &SearchOptions::default()).unwrap();
        let b = find_admissible_gain(&p, 5.0, &poles, &SearchOptions { parallel: false, ..Default::default() }).unwrap();
        assert_eq!(a.gain, b.gain);
        assert_eq!(a.sweep, b.sweep);
    }
}
