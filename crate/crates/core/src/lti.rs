//! Continuous-time LTI plants `dx = (A x + B1 u) dt + B2 dw`, `z = C x + D u`,
//! together with closed-loop construction, Lyapunov solving and
//! realizability (PBH) checks.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, DenseMatrix, SymMatrix, Vector};

/// Margin for Hurwitz tests: stable means `max Re(lambda) < -HURWITZ_EPS`.
pub const HURWITZ_EPS: f64 = 1e-9;

/// Tolerance on `||D' C||` for the cross-weight-free assumption.
pub const CROSS_TERM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: DenseMatrix,
    pub b1: DenseMatrix,
    pub b2: DenseMatrix,
    pub c: DenseMatrix,
    pub d: DenseMatrix,
}

/// State feedback `u = -K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain(pub DenseMatrix);

/// Disturbance feedback `w = L x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceGain(pub DenseMatrix);

impl FeedbackGain {
    pub fn zeros(m: usize, n: usize) -> Self {
        FeedbackGain(DenseMatrix::zeros(m, n))
    }
}

impl DisturbanceGain {
    pub fn zeros(q: usize, n: usize) -> Self {
        DisturbanceGain(DenseMatrix::zeros(q, n))
    }
}

impl std::ops::Deref for FeedbackGain {
    type Target = DenseMatrix;
    fn deref(&self) -> &DenseMatrix {
        &self.0
    }
}

impl std::ops::Deref for DisturbanceGain {
    type Target = DenseMatrix;
    fn deref(&self) -> &DenseMatrix {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub spectral_abscissa: f64,
    pub hinf_norm: f64,
    pub gamma: f64,
    pub admissible: bool,
}

impl LtiPlant {
    pub fn new(
        a: DenseMatrix,
        b1: DenseMatrix,
        b2: DenseMatrix,
        c: DenseMatrix,
        d: DenseMatrix,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("plant A", "square", format!("{}x{}", n, a.ncols())));
        }
        if b1.nrows() != n {
            return Err(Error::dim("plant B1 rows", n, b1.nrows()));
        }
        if b2.nrows() != n {
            return Err(Error::dim("plant B2 rows", n, b2.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("plant C columns", n, c.ncols()));
        }
        if d.nrows() != c.nrows() {
            return Err(Error::dim("plant D rows", c.nrows(), d.nrows()));
        }
        if d.ncols() != b1.ncols() {
            return Err(Error::dim("plant D columns", b1.ncols(), d.ncols()));
        }
        for (name, m) in [("A", &a), ("B1", &b1), ("B2", &b2), ("C", &c), ("D", &d)] {
            if !matops::all_finite(m) {
                return Err(Error::InvalidArgument(format!("plant matrix {name} has non-finite entries")));
            }
        }
        Ok(LtiPlant { a, b1, b2, c, d })
    }

    /// Builds `C = [sqrt(Q); 0]`, `D = [0; sqrt(R)]` so that `C'C = Q`,
    /// `D'D = R` and `D'C = 0`.
    pub fn from_weights(
        a: DenseMatrix,
        b1: DenseMatrix,
        b2: DenseMatrix,
        q: &DenseMatrix,
        r: &DenseMatrix,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b1.ncols();
        if q.shape() != (n, n) {
            return Err(Error::dim("weight Q", format!("{n}x{n}"), format!("{:?}", q.shape())));
        }
        if r.shape() != (m, m) {
            return Err(Error::dim("weight R", format!("{m}x{m}"), format!("{:?}", r.shape())));
        }
        let sq = psd_sqrt(&SymMatrix::from_dense(q)?);
        let sr = psd_sqrt(&SymMatrix::from_dense(r)?);
        let mut c = DenseMatrix::zeros(n + m, n);
        c.view_mut((0, 0), (n, n)).copy_from(&sq);
        let mut d = DenseMatrix::zeros(n + m, m);
        d.view_mut((n, 0), (m, m)).copy_from(&sr);
        LtiPlant::new(a, b1, b2, c, d)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of control inputs.
    pub fn m(&self) -> usize {
        self.b1.ncols()
    }

    /// Number of disturbance channels.
    pub fn qw(&self) -> usize {
        self.b2.ncols()
    }

    pub fn q(&self) -> SymMatrix {
        SymMatrix::symmetrize(&(self.c.transpose() * &self.c))
    }

    pub fn r(&self) -> SymMatrix {
        SymMatrix::symmetrize(&(self.d.transpose() * &self.d))
    }

    /// `R^{-1}`; fails when `R` is not positive definite.
    pub fn r_inverse(&self) -> Result<DenseMatrix> {
        let r = self.r();
        if !r.is_positive_definite() {
            return Err(Error::InvalidArgument("R = D'D must be positive definite".into()));
        }
        r.as_matrix()
            .clone()
            .cholesky()
            .map(|ch| ch.inverse())
            .ok_or_else(|| Error::InvalidArgument("R = D'D must be positive definite".into()))
    }

    /// `||D' C||_F`; zero under the standard cross-weight-free assumption.
    pub fn cross_term(&self) -> f64 {
        (self.d.transpose() * &self.c).norm()
    }

    pub fn check_gain(&self, k: &FeedbackGain) -> Result<()> {
        if k.shape() != (self.m(), self.n()) {
            return Err(Error::dim(
                "feedback gain",
                format!("{}x{}", self.m(), self.n()),
                format!("{}x{}", k.nrows(), k.ncols()),
            ));
        }
        if !matops::all_finite(k) {
            return Err(Error::InvalidArgument("feedback gain has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn check_disturbance_gain(&self, l: &DisturbanceGain) -> Result<()> {
        if l.shape() != (self.qw(), self.n()) {
            return Err(Error::dim(
                "disturbance gain",
                format!("{}x{}", self.qw(), self.n()),
                format!("{}x{}", l.nrows(), l.ncols()),
            ));
        }
        Ok(())
    }

    /// `A - B1 K`.
    pub fn closed_loop_a(&self, k: &FeedbackGain) -> DenseMatrix {
        &self.a - &self.b1 * &k.0
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(p: &SymMatrix) -> DenseMatrix {
    let eig = p.as_matrix().clone().symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let out = v * DenseMatrix::from_diagonal(&s) * v.transpose();
    SymMatrix::symmetrize(&out).into_matrix()
}

pub fn is_hurwitz(m: &DenseMatrix) -> bool {
    matops::spectral_abscissa(m) < -HURWITZ_EPS
}

/// Realization `(A - B1 K, 0, B2, C - D K, 0)` of the closed loop `w -> z`.
pub fn closed_loop(plant: &LtiPlant, k: &FeedbackGain) -> Result<LtiPlant> {
    plant.check_gain(k)?;
    Ok(LtiPlant {
        a: plant.closed_loop_a(k),
        b1: DenseMatrix::zeros(plant.n(), plant.m()),
        b2: plant.b2.clone(),
        c: &plant.c - &plant.d * &k.0,
        d: DenseMatrix::zeros(plant.c.nrows(), plant.m()),
    })
}

/// `C (jw I - A)^{-1} B2` for the given realization (feedthrough from `w` is zero).
pub fn transfer_value(plant: &LtiPlant, omega: f64) -> Result<DMatrix<Complex<f64>>> {
    let n = plant.n();
    let resolvent = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let diag = if i == j { Complex::new(0.0, omega) } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(plant.a[(i, j)], 0.0)
    });
    let b2 = plant.b2.map(|v| Complex::new(v, 0.0));
    let c = plant.c.map(|v| Complex::new(v, 0.0));
    let lu = resolvent.lu();
    let x = lu.solve(&b2).ok_or_else(|| {
        Error::InvalidArgument(format!("j*{omega} is an eigenvalue of the state matrix"))
    })?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("resolvent singular at omega = {omega}")));
    }
    Ok(c * x)
}

/// Largest singular value of the closed-loop `T_zw(K)` at `s = j omega`.
pub fn closed_loop_gain_at(plant: &LtiPlant, k: &FeedbackGain, omega: f64) -> Result<f64> {
    let cl = closed_loop(plant, k)?;
    Ok(matops::sigma_max_complex(&transfer_value(&cl, omega)?))
}

/// Solves `Acl' X + X Acl + Q = 0` through the Kronecker system
/// `(I ⊗ Acl' + Acl' ⊗ I) vec(X) = -vec(Q)`.
pub fn solve_lyapunov(acl: &DenseMatrix, qrhs: &SymMatrix) -> Result<SymMatrix> {
    let n = acl.nrows();
    if acl.ncols() != n || qrhs.dim() != n {
        return Err(Error::dim("solve_lyapunov", format!("{n}x{n}"), format!("{:?}/{}", acl.shape(), qrhs.dim())));
    }
    let abscissa = matops::spectral_abscissa(acl);
    if abscissa >= -HURWITZ_EPS {
        return Err(Error::NotHurwitz { context: "solve_lyapunov", abscissa });
    }
    let at = acl.transpose();
    let eye = DenseMatrix::identity(n, n);
    let op = matops::kron(&eye, &at) + matops::kron(&at, &eye);
    let rhs = -matops::vec(qrhs.as_matrix());
    let lu = op.clone().lu();
    let condition = condition_estimate(&op, &lu);
    if !(condition < 1e14) {
        return Err(Error::IllConditioned { context: "solve_lyapunov", condition });
    }
    let mut x = lu
        .solve(&rhs)
        .ok_or(Error::IllConditioned { context: "solve_lyapunov", condition })?;
    // one step of iterative refinement
    let resid = &rhs - &op * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    let xm = matops::mat(&x, n, n)?;
    Ok(SymMatrix::symmetrize(&xm))
}

/// `||Acl' X + X Acl + Q||_F`.
pub fn lyapunov_residual(acl: &DenseMatrix, x: &SymMatrix, q: &SymMatrix) -> f64 {
    (acl.transpose() * x.as_matrix() + x.as_matrix() * acl + q.as_matrix()).norm()
}

/// Hager's 1-norm condition estimate `||M||_1 ||M^{-1}||_1` using an existing LU.
pub(crate) fn condition_estimate(m: &DenseMatrix, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    let norm1 = (0..n).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mt_lu = m.transpose().lu();
    let mut x = Vector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else { return f64::INFINITY };
        let new_est: f64 = y.iter().map(|v| v.abs()).sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = mt_lu.solve(&xi) else { return f64::INFINITY };
        let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (j, v)| {
            if v.abs() > acc.1 { (j, v.abs()) } else { acc }
        });
        if new_est <= est || zmax <= z.dot(&x) {
            est = est.max(new_est);
            break;
        }
        est = new_est;
        x = Vector::zeros(n);
        x[jmax] = 1.0;
    }
    norm1 * est
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizabilityReport {
    pub stabilizable: bool,
    /// Smallest `sigma_min([lambda I - A, B1])` over eigenvalues with `Re >= -eps`.
    pub stabilizable_margin: f64,
    pub controllable: bool,
    pub controllable_margin: f64,
    /// Detectability of `(sqrt(Q), A)`, tested through `C` since `Q = C'C`.
    pub detectable: bool,
    pub detectable_margin: f64,
    pub observable: bool,
    pub observable_margin: f64,
    /// `||D' C||_F`.
    pub cross_term: f64,
    pub r_positive_definite: bool,
}

impl RealizabilityReport {
    pub fn satisfied(&self) -> bool {
        self.stabilizable && self.detectable && self.r_positive_definite
    }
}

/// PBH rank tests for stabilizability/controllability of `(A, B1)` and
/// detectability/observability of `(C, A)`.
pub fn check_realizability(plant: &LtiPlant) -> RealizabilityReport {
    let eigs = matops::eigenvalues(&plant.a);
    let scale = 1.0 + matops::sigma_max(&plant.a) + matops::sigma_max(&plant.b1).max(matops::sigma_max(&plant.c));
    let tol = 1e-8 * scale;

    let ctrl = |lambda: Complex<f64>| pbh_margin(&plant.a, &plant.b1, lambda, false);
    let obs = |lambda: Complex<f64>| pbh_margin(&plant.a, &plant.c, lambda, true);

    let min_over = |f: &dyn Fn(Complex<f64>) -> f64, unstable_only: bool| -> f64 {
        eigs.iter()
            .filter(|l| !unstable_only || l.re >= -HURWITZ_EPS)
            .map(|&l| f(l))
            .fold(f64::INFINITY, f64::min)
    };

    let stabilizable_margin = min_over(&ctrl, true);
    let controllable_margin = min_over(&ctrl, false);
    let detectable_margin = min_over(&obs, true);
    let observable_margin = min_over(&obs, false);

    RealizabilityReport {
        stabilizable: stabilizable_margin > tol,
        stabilizable_margin,
        controllable: controllable_margin > tol,
        controllable_margin,
        detectable: detectable_margin > tol,
        detectable_margin,
        observable: observable_margin > tol,
        observable_margin,
        cross_term: plant.cross_term(),
        r_positive_definite: plant.r().is_positive_definite(),
    }
}

/// Smallest singular value of `[lambda I - A, B]` (or its dual `[lambda I - A; C]`).
fn pbh_margin(a: &DenseMatrix, other: &DenseMatrix, lambda: Complex<f64>, dual: bool) -> f64 {
    let n = a.nrows();
    let shifted = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let d = if i == j { lambda } else { Complex::new(0.0, 0.0) };
        d - Complex::new(a[(i, j)], 0.0)
    });
    let o = other.map(|v| Complex::new(v, 0.0));
    let stacked = if dual {
        let mut s = DMatrix::<Complex<f64>>::zeros(n + o.nrows(), n);
        s.view_mut((0, 0), (n, n)).copy_from(&shifted);
        s.view_mut((n, 0), (o.nrows(), n)).copy_from(&o);
        s.adjoint()
    } else {
        let mut s = DMatrix::<Complex<f64>>::zeros(n, n + o.ncols());
        s.view_mut((0, 0), (n, n)).copy_from(&shifted);
        s.view_mut((0, n), (n, o.ncols())).copy_from(&o);
        s
    };
    stacked.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    /// `M' A M`, block upper triangular with the controllable part first.
    pub a_bar: DenseMatrix,
    /// `M' B`, nonzero only in the first block rows.
    pub b_bar: DenseMatrix,
    /// Orthogonal transform `M`.
    pub transform: DenseMatrix,
    pub controllable_dim: usize,
    /// Sizes of the staircase blocks of the controllable part.
    pub block_sizes: Vec<usize>,
}

impl Staircase {
    /// The block of `a_bar` acting on the uncontrollable coordinates.
    pub fn uncontrollable_block(&self) -> DenseMatrix {
        let n = self.a_bar.nrows();
        let k = self.controllable_dim;
        self.a_bar.view((k, k), (n - k, n - k)).into_owned()
    }
}

/// Orthogonal staircase reduction of `(A, B)` into controllable and
/// uncontrollable parts.
pub fn controllable_staircase(a: &DenseMatrix, b: &DenseMatrix) -> Result<Staircase> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("controllable_staircase", format!("{n} rows"), format!("{}", b.nrows())));
    }
    let tol = 1e-10 * n.max(1) as f64 * (1.0 + matops::sigma_max(a).max(matops::sigma_max(b)));
    let mut a_bar = a.clone();
    let mut b_bar = b.clone();
    let mut m_total = DenseMatrix::identity(n, n);
    let mut offset = 0usize;
    let mut blocks = Vec::new();
    let mut input = b.clone();

    while offset < n && input.ncols() > 0 {
        let sub = input.rows(offset, n - offset).into_owned();
        let svd = sub.clone().svd(true, false);
        let u = svd.u.as_ref().expect("requested U");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let range: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > tol).collect();
        let rank = range.len();
        if rank == 0 {
            break;
        }
        let rows = n - offset;
        let mut basis = DenseMatrix::zeros(rows, rows);
        for (c, &i) in range.iter().enumerate() {
            basis.set_column(c, &u.column(i));
        }
        if rank < rows {
            let ur = basis.columns(0, rank).into_owned();
            let proj = DenseMatrix::identity(rows, rows) - &ur * ur.transpose();
            let eig = proj.symmetric_eigen();
            let mut idx: Vec<usize> = (0..rows).collect();
            idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            for (c, i) in (rank..).zip(idx.into_iter().take(rows - rank)) {
                basis.set_column(c, &eig.eigenvectors.column(i));
            }
        }
        let mut q = DenseMatrix::identity(n, n);
        q.view_mut((offset, offset), (rows, rows)).copy_from(&basis);
        a_bar = q.transpose() * &a_bar * &q;
        b_bar = q.transpose() * &b_bar;
        m_total = &m_total * &q;
        input = a_bar.columns(offset, rank).into_owned();
        offset += rank;
        blocks.push(rank);
    }

    // clean the structurally zero blocks
    for i in offset..n {
        for j in 0..offset {
            a_bar[(i, j)] = 0.0;
        }
        for j in 0..b_bar.ncols() {
            b_bar[(i, j)] = 0.0;
        }
    }

    Ok(Staircase {
        a_bar,
        b_bar,
        transform: m_total,
        controllable_dim: offset,
        block_sizes: blocks,
    })
}

/// Serialized plant: named matrices as row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    pub a: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl From<&LtiPlant> for PlantFile {
    fn from(p: &LtiPlant) -> Self {
        PlantFile {
            a: matops::to_rows(&p.a),
            b1: matops::to_rows(&p.b1),
            b2: matops::to_rows(&p.b2),
            c: matops::to_rows(&p.c),
            d: matops::to_rows(&p.d),
        }
    }
}

impl TryFrom<&PlantFile> for LtiPlant {
    type Error = Error;

    fn try_from(f: &PlantFile) -> Result<Self> {
        // a matrix with zero rows still needs its column count; recover it from A
        let n = f.a.len();
        let rows = |m: &Vec<Vec<f64>>, cols_if_empty: usize| -> Result<DenseMatrix> {
            if m.is_empty() {
                Ok(DenseMatrix::zeros(0, cols_if_empty))
            } else {
                matops::from_rows(m)
            }
        };
        let a = rows(&f.a, 0)?;
        let b1 = rows(&f.b1, 0)?;
        let b2 = rows(&f.b2, 0)?;
        let c = rows(&f.c, n)?;
        let d = rows(&f.d, b1.ncols())?;
        LtiPlant::new(a, b1, b2, c, d)
    }
}

impl LtiPlant {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PlantFile::from(self)).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PlantFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        LtiPlant::try_from(&f)
    }
}

/// Stabilizing solution of `A'X + XA - X B R^{-1} B' X + Q = 0` via the
/// matrix sign function of the Hamiltonian.
pub fn solve_care(a: &DenseMatrix, b: &DenseMatrix, q: &SymMatrix, r: &SymMatrix) -> Result<SymMatrix> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.dim() != n || r.dim() != b.ncols() {
        return Err(Error::dim("solve_care", format!("n = {n}"), format!("B {:?}, Q {}, R {}", b.shape(), q.dim(), r.dim())));
    }
    let rinv = r
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("solve_care: R must be positive definite".into()))?
        .inverse();
    let g = b * rinv * b.transpose();
    solve_riccati_sign(a, &g, q)
}

/// Stabilizing solution of `A'X + XA - X G X + Q = 0` for symmetric `G`
/// (possibly indefinite) through the sign function of `[A, -G; -Q, -A']`.
pub fn solve_riccati_sign(a: &DenseMatrix, g: &DenseMatrix, q: &SymMatrix) -> Result<SymMatrix> {
    let n = a.nrows();
    let mut w = DenseMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(a);
    w.view_mut((0, n), (n, n)).copy_from(&(-g));
    w.view_mut((n, 0), (n, n)).copy_from(&(-q.as_matrix()));
    w.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..100 {
        let lu = w.clone().lu();
        let det = lu.determinant().abs();
        let winv = lu
            .try_inverse()
            .ok_or(Error::IllConditioned { context: "riccati sign iteration", condition: f64::INFINITY })?;
        let c = if det > 0.0 && det.is_finite() { det.powf(1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&w / c + winv * c) * 0.5;
        change = (&next - &w).norm() / next.norm().max(1.0);
        w = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged && change > 1e-9 {
        return Err(Error::NoConvergence { context: "riccati sign iteration", iterations: 100, last_change: change });
    }
    let eye = DenseMatrix::identity(n, n);
    let mut lhs = DenseMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DenseMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("riccati: {e}")))?;
    let x = SymMatrix::symmetrize(&x);
    if !matops::all_finite(&x) {
        return Err(Error::IllConditioned { context: "riccati sign iteration", condition: f64::INFINITY });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        matops::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn scalar_plant(a: f64, b1: f64, b2: f64, c: f64, d: f64) -> LtiPlant {
        LtiPlant::new(m(&[&[a]]), m(&[&[b1]]), m(&[&[b2]]), m(&[&[c]]), m(&[&[d]])).unwrap()
    }

    #[test]
    fn closed_loop_scalar() {
        let p = scalar_plant(-1.0, 1.0, 1.0, 1.0, 0.0);
        let cl = closed_loop(&p, &FeedbackGain::zeros(1, 1)).unwrap();
        assert_eq!(cl.a[(0, 0)], -1.0);
        assert_eq!(cl.c[(0, 0)], 1.0);
        assert_eq!(cl.d[(0, 0)], 0.0);
        let cl = closed_loop(&p, &FeedbackGain(m(&[&[1.0]]))).unwrap();
        assert_eq!(cl.a[(0, 0)], -2.0);
        assert!(closed_loop(&p, &FeedbackGain::zeros(2, 1)).is_err());
    }

    #[test]
    fn closed_loop_zero_gain_drops_feedthrough() {
        let p = LtiPlant::from_weights(
            m(&[&[0.0, 1.0], &[-2.0, -3.0]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[1.0], &[0.5]]),
            &DenseMatrix::identity(2, 2),
            &DenseMatrix::identity(1, 1),
        )
        .unwrap();
        let cl = closed_loop(&p, &FeedbackGain::zeros(1, 2)).unwrap();
        assert_eq!(cl.a, p.a);
        assert_eq!(cl.c, p.c);
        assert_eq!(cl.b2, p.b2);
        assert!(cl.d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transfer_first_order() {
        let p = scalar_plant(-1.0, 0.0, 1.0, 1.0, 0.0);
        let g0 = transfer_value(&p, 0.0).unwrap();
        assert!((g0[(0, 0)].re - 1.0).abs() < 1e-15);
        let g1 = transfer_value(&p, 1.0).unwrap();
        assert!((g1[(0, 0)].norm() - 0.5f64.sqrt()).abs() < 1e-15);
        let integ = scalar_plant(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(transfer_value(&integ, 0.0).is_err());
    }

    #[test]
    fn lyapunov_examples() {
        let x = solve_lyapunov(&m(&[&[-1.0]]), &SymMatrix::identity(1)).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-15);
        let z = solve_lyapunov(&m(&[&[-1.0, 2.0], &[0.0, -3.0]]), &SymMatrix::zeros(2)).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            solve_lyapunov(&m(&[&[1.0]]), &SymMatrix::identity(1)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    pub(crate) fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = matops::spectral_abscissa(&a) + rng.random_range(0.2..1.5);
        a - DenseMatrix::identity(n, n) * shift
    }

    #[test]
    fn lyapunov_random_residual_and_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_hurwitz(&mut rng, 4);
            let g = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let q = SymMatrix::symmetrize(&(&g * g.transpose() + DenseMatrix::identity(4, 4) * 0.1));
            let x = solve_lyapunov(&a, &q).unwrap();
            assert!(lyapunov_residual(&a, &x, &q) <= 1e-10 * (1.0 + x.norm()));
            assert_eq!(x.as_matrix(), &x.transpose());
            assert!(x.is_positive_definite());
        }
    }

    #[test]
    fn realizability_examples() {
        let r = check_realizability(&scalar_plant(1.0, 1.0, 0.0, 1.0, 1.0));
        assert!(r.stabilizable && r.observable && r.detectable && r.controllable);

        let p = LtiPlant::new(
            m(&[&[1.0, 0.0], &[0.0, -1.0]]),
            m(&[&[1.0], &[0.0]]),
            m(&[&[1.0], &[1.0]]),
            m(&[&[1.0, 0.0]]),
            m(&[&[0.0]]),
        )
        .unwrap();
        let r = check_realizability(&p);
        assert!(r.stabilizable);
        assert!(!r.controllable);
        assert!(r.detectable);
        assert!(!r.observable);

        let unstab = scalar_plant(1.0, 0.0, 1.0, 1.0, 1.0);
        assert!(!check_realizability(&unstab).stabilizable);
    }

    fn kalman_rank(a: &DenseMatrix, b: &DenseMatrix) -> usize {
        let n = a.nrows();
        let mut blocks = DenseMatrix::zeros(n, n * b.ncols());
        let mut cur = b.clone();
        for k in 0..n {
            blocks.view_mut((0, k * b.ncols()), (n, b.ncols())).copy_from(&cur);
            cur = a * cur;
        }
        let s = blocks.singular_values();
        let tol = 1e-9 * s.max().max(1.0);
        s.iter().filter(|v| **v > tol).count()
    }

    #[test]
    fn realizability_agrees_with_kalman_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = rng.random_range(2..=5);
            let k = if trial % 2 == 0 { n } else { rng.random_range(1..n) };
            // block-triangular pair with a k-dimensional controllable part, then rotated
            let mut a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            for i in k..n {
                for j in 0..k {
                    a[(i, j)] = 0.0;
                }
            }
            let mut b = DenseMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            for i in k..n {
                b[(i, 0)] = 0.0;
            }
            let qr = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr();
            let t = qr.q();
            let a = t.transpose() * a * &t;
            let b = t.transpose() * b;
            let plant = LtiPlant::new(a.clone(), b.clone(), b.clone(), DenseMatrix::identity(n, n), DenseMatrix::zeros(n, 1)).unwrap();
            let rep = check_realizability(&plant);
            assert_eq!(rep.controllable, kalman_rank(&a, &b) == n, "trial {trial}");
            let dual = kalman_rank(&a.transpose(), &DenseMatrix::identity(n, n));
            assert_eq!(rep.observable, dual == n);
        }
    }

    #[test]
    fn staircase_examples() {
        let a = m(&[&[0.0, 1.0], &[-2.0, -3.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        let s = controllable_staircase(&a, &b).unwrap();
        assert_eq!(s.controllable_dim, 2);

        let s = controllable_staircase(&m(&[&[1.0, 0.0], &[0.0, 2.0]]), &m(&[&[1.0], &[0.0]])).unwrap();
        assert_eq!(s.controllable_dim, 1);
        assert!((s.uncontrollable_block()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn staircase_preserves_spectrum_and_isolates_uncontrollable_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = 4;
            let k = rng.random_range(1..=n);
            let mut a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            for i in k..n {
                for j in 0..k {
                    a[(i, j)] = 0.0;
                }
            }
            let mut b = DenseMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            for i in k..n {
                b.row_mut(i).fill(0.0);
            }
            let unc_true = a.view((k, k), (n - k, n - k)).into_owned();
            let t = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let a = t.transpose() * a * &t;
            let b = t.transpose() * b;
            let s = controllable_staircase(&a, &b).unwrap();
            assert!(s.controllable_dim <= k);
            let orth = s.transform.transpose() * &s.transform;
            assert!((orth - DenseMatrix::identity(n, n)).norm() < 1e-12);

            let mut e1: Vec<Complex<f64>> = matops::eigenvalues(&a);
            let mut e2: Vec<Complex<f64>> = matops::eigenvalues(&s.a_bar);
            let key = |c: &Complex<f64>| (c.re * 1e6).round() as i64 * 1_000_000_000 + (c.im * 1e6).round() as i64;
            e1.sort_by_key(key);
            e2.sort_by_key(key);
            for (x, y) in e1.iter().zip(&e2) {
                assert!((x - y).norm() < 1e-9);
            }
            if s.controllable_dim == k && k < n {
                // uncontrollable eigenvalues agree with the PBH failures
                let unc = s.uncontrollable_block();
                for l in matops::eigenvalues(&unc) {
                    assert!(pbh_margin(&a, &b, l, false) < 1e-7);
                }
                let mut u1 = matops::eigenvalues(&unc);
                let mut u2 = matops::eigenvalues(&unc_true);
                u1.sort_by_key(key);
                u2.sort_by_key(key);
                for (x, y) in u1.iter().zip(&u2) {
                    assert!((x - y).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn care_scalar_and_residual() {
        // a = 1, b = 1, q = 1, r = 1: x^2 - 2x - 1 = 0, x = 1 + sqrt(2)
        let x = solve_care(&m(&[&[1.0]]), &m(&[&[1.0]]), &SymMatrix::identity(1), &SymMatrix::identity(1)).unwrap();
        assert!((x[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);

        let a = m(&[&[0.0, 1.0], &[2.0, -1.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        let q = SymMatrix::identity(2);
        let r = SymMatrix::identity(1);
        let x = solve_care(&a, &b, &q, &r).unwrap();
        let res = a.transpose() * x.as_matrix() + x.as_matrix() * &a - x.as_matrix() * &b * b.transpose() * x.as_matrix() + q.as_matrix();
        assert!(res.norm() < 1e-10);
        assert!(is_hurwitz(&(&a - &b * b.transpose() * x.as_matrix())));
    }

    #[test]
    fn plant_json_round_trip() {
        let p = LtiPlant::from_weights(
            m(&[&[0.0, 1.0], &[-2.0, -3.0]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[1.0], &[0.5]]),
            &DenseMatrix::identity(2, 2),
            &DenseMatrix::identity(1, 1),
        )
        .unwrap();
        let back = LtiPlant::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(LtiPlant::from_json("{\"a\": [[1.0]]}").is_err());
    }

    #[test]
    fn weights_give_cross_free_outputs() {
        let q = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let r = m(&[&[3.0]]);
        let p = LtiPlant::from_weights(DenseMatrix::identity(2, 2), m(&[&[1.0], &[0.0]]), m(&[&[1.0], &[0.0]]), &q, &r).unwrap();
        assert!((p.q().as_matrix() - &q).norm() < 1e-12);
        assert!((p.r().as_matrix() - &r).norm() < 1e-12);
        assert!(p.cross_term() < CROSS_TERM_TOL);
    }
}
