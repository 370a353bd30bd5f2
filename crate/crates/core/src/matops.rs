//! Vectorization and Kronecker algebra.
//!
//! Conventions: `vec` stacks columns, `svec` lists the upper triangle row by
//! row (`[p11, p12, .., p1n, p22, .., pnn]`) with no off-diagonal scaling, and
//! `quad_basis` carries the factor 2 so that `x' P x = svec(P) . quad_basis(x)`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Absolute tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A real symmetric matrix. The stored matrix is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DenseMatrix);

impl SymMatrix {
    /// Accepts `m` if it is square and symmetric within [`SYMMETRY_TOL`];
    /// the stored copy is the exact average `(m + m') / 2`.
    pub fn from_dense(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("SymMatrix", "square", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let asym = max_asymmetry(m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrize(m))
    }

    /// `(m + m') / 2` without any tolerance check.
    pub fn symmetrize(m: &DenseMatrix) -> Self {
        let s = (m + m.transpose()) * 0.5;
        let n = s.nrows();
        let mut out = s;
        // force bitwise symmetry
        for j in 0..n {
            for i in (j + 1)..n {
                out[(i, j)] = out[(j, i)];
            }
        }
        SymMatrix(out)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DenseMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DenseMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dim() > 0 && self.min_eigenvalue() > 0.0
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DenseMatrix;

    fn deref(&self) -> &DenseMatrix {
        &self.0
    }
}

pub fn max_asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `n(n+1)/2`.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`svec_len`]; `None` when `len` is not triangular.
pub fn triangular_root(len: usize) -> Option<usize> {
    let mut n = 0usize;
    while svec_len(n) < len {
        n += 1;
    }
    (svec_len(n) == len).then_some(n)
}

/// Position of entry `(i, j)`, `i <= j`, inside `svec`.
#[inline]
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * (i + 1) / 2 + j
}

/// Column-stacking vectorization.
pub fn vec(m: &DenseMatrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for an `rows x cols` shape.
pub fn mat(v: &Vector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::dim("mat", rows * cols, v.len()));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Upper-triangle half vectorization of a symmetric matrix.
pub fn svec(p: &DenseMatrix) -> Result<Vector> {
    let sym = SymMatrix::from_dense(p)?;
    Ok(svec_sym(&sym))
}

/// [`svec`] on an already validated symmetric matrix.
pub fn svec_sym(p: &SymMatrix) -> Vector {
    let n = p.dim();
    let mut out = Vector::zeros(svec_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = p[(i, j)];
            k += 1;
        }
    }
    out
}

/// Symmetric matricization; exact inverse of [`svec`].
pub fn smat(v: &Vector) -> Result<SymMatrix> {
    let n = triangular_root(v.len()).ok_or(Error::NotTriangular(v.len()))?;
    let mut m = DenseMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(SymMatrix(m))
}

/// `vec(x x')`.
pub fn vecv(x: &Vector) -> Vector {
    kron_vec(x, x)
}

/// Duplication-aware quadratic basis: `x' P x = svec(P) . quad_basis(x)`.
pub fn quad_basis(x: &Vector) -> Vector {
    sym_bilinear_basis(x, x)
}

/// Basis for the bilinear form `x' P y` (symmetric `P`) in `svec`
/// coordinates: diagonal entries `x_i y_i`, off-diagonal `x_i y_j + x_j y_i`.
pub fn sym_bilinear_basis(x: &Vector, y: &Vector) -> Vector {
    let n = x.len();
    let mut out = Vector::zeros(svec_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = if i == j { x[i] * y[i] } else { x[i] * y[j] + x[j] * y[i] };
            k += 1;
        }
    }
    out
}

/// `a ⊗ b` for column vectors.
pub fn kron_vec(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Kronecker product `[a_ij B]`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let mut out = DenseMatrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * p, j * q), (p, q)).copy_from(&(b * aij));
        }
    }
    out
}

/// Permutation `T` with `T vec(A) = vec(A')` for every `m x n` matrix `A`.
pub fn tvec_permutation(m: usize, n: usize) -> DenseMatrix {
    let mut t = DenseMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            // A[i,j] sits at i + j*m in vec(A) and at j + i*n in vec(A')
            t[(j + i * n, i + j * m)] = 1.0;
        }
    }
    t
}

/// Linear map `svec(P) -> svec(M' P + P M)` as an `n1 x n1` matrix.
pub fn lyapunov_operator_svec(m: &DenseMatrix) -> DenseMatrix {
    let n = m.nrows();
    let n1 = svec_len(n);
    let mut op = DenseMatrix::zeros(n1, n1);
    for col in 0..n1 {
        let mut e = Vector::zeros(n1);
        e[col] = 1.0;
        let p = smat(&e).expect("triangular by construction");
        let img = m.transpose() * p.as_matrix() + p.as_matrix() * m;
        let s = svec_sym(&SymMatrix::symmetrize(&img));
        op.set_column(col, &s);
    }
    op
}

/// Linear map `svec(P) -> vec(G P)` for a fixed `k x n` matrix `G`.
pub fn left_mul_operator_svec(g: &DenseMatrix) -> DenseMatrix {
    let n = g.ncols();
    let n1 = svec_len(n);
    let mut op = DenseMatrix::zeros(g.nrows() * n, n1);
    for col in 0..n1 {
        let mut e = Vector::zeros(n1);
        e[col] = 1.0;
        let p = smat(&e).expect("triangular by construction");
        op.set_column(col, &vec(&(g * p.as_matrix())));
    }
    op
}

/// Complex eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DenseMatrix) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// `max Re(lambda)`; `-inf` for the empty matrix.
pub fn spectral_abscissa(m: &DenseMatrix) -> f64 {
    eigenvalues(m).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value.
pub fn sigma_max(m: &DenseMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest singular value of a complex matrix.
pub fn sigma_max_complex(m: &DMatrix<Complex<f64>>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn all_finite(m: &DenseMatrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Frobenius norm of `a - b` divided by the Frobenius norm of `b`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Builds a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DenseMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Row-major nested vectors, the inverse of [`from_rows`].
pub fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_sym(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = rand_mat(rng, n, n);
        &a + a.transpose()
    }

    #[test]
    fn vec_examples() {
        let m = from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&DenseMatrix::zeros(2, 3)).as_slice(), &[0.0; 6]);
        // vec(x y') = y ⊗ x
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let y = Vector::from_vec(vec![3.0, 4.0]);
        let outer = &x * y.transpose();
        assert_eq!(vec(&outer).as_slice(), &[3.0, 6.0, 4.0, 8.0]);
        assert_eq!(vec(&outer), kron_vec(&y, &x));
    }

    #[test]
    fn svec_examples() {
        let p = from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(svec(&p).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        let i3 = DenseMatrix::identity(3, 3);
        assert_eq!(svec(&i3).unwrap().as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let bad = from_rows(&[vec![1.0, 2.0], vec![2.1, 3.0]]).unwrap();
        assert!(matches!(svec(&bad), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn smat_examples() {
        let p = smat(&Vector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.as_matrix(), &from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap());
        let s = smat(&Vector::from_vec(vec![5.0])).unwrap();
        assert_eq!(s[(0, 0)], 5.0);
        assert!(matches!(smat(&Vector::zeros(4)), Err(Error::NotTriangular(4))));
    }

    #[test]
    fn svec_smat_round_trips_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..100 {
            let n = 1 + k % 6;
            let p = rand_sym(&mut rng, n);
            assert_eq!(smat(&svec(&p).unwrap()).unwrap().as_matrix(), &p);
            let v = Vector::from_fn(svec_len(n), |_, _| rng.random_range(-5.0..5.0));
            assert_eq!(svec_sym(&smat(&v).unwrap()), v);
        }
    }

    #[test]
    fn vecv_and_quad_basis() {
        assert_eq!(vecv(&Vector::from_vec(vec![1.0, 2.0])).as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(vecv(&Vector::from_vec(vec![3.0])).as_slice(), &[9.0]);
        assert_eq!(quad_basis(&Vector::from_vec(vec![1.0, 2.0])).as_slice(), &[1.0, 4.0, 4.0]);
        assert_eq!(quad_basis(&Vector::zeros(3)), Vector::zeros(6));
    }

    #[test]
    fn quadratic_form_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let p = rand_sym(&mut rng, n);
            let x = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            // brute force x'Px
            let mut direct = 0.0;
            for i in 0..n {
                for j in 0..n {
                    direct += x[i] * p[(i, j)] * x[j];
                }
            }
            let via_vecv = vecv(&x).dot(&vec(&p));
            let via_svec = svec(&p).unwrap().dot(&quad_basis(&x));
            let scale = 1.0 + direct.abs();
            assert!((via_vecv - direct).abs() <= 1e-12 * scale);
            assert!((via_svec - direct).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn kron_examples() {
        let k = kron(&DenseMatrix::identity(2, 2), &DenseMatrix::from_element(1, 1, 5.0));
        assert_eq!(k, DenseMatrix::from_diagonal(&Vector::from_vec(vec![5.0, 5.0])));
        let s = kron(&DenseMatrix::from_element(1, 1, 2.0), &DenseMatrix::from_element(1, 1, 3.0));
        assert_eq!(s[(0, 0)], 6.0);
    }

    #[test]
    fn kron_vec_identity_and_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rand_mat(&mut rng, 2, 2);
            let x = rand_mat(&mut rng, 2, 2);
            let b = rand_mat(&mut rng, 2, 2);
            let lhs = vec(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vec(&x);
            assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));

            let n = rng.random_range(2..4);
            let (a, b, c, d) = (
                rand_mat(&mut rng, n, n),
                rand_mat(&mut rng, n, n),
                rand_mat(&mut rng, n, n),
                rand_mat(&mut rng, n, n),
            );
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm());
        }
    }

    #[test]
    fn tvec_examples() {
        assert_eq!(tvec_permutation(1, 1), DenseMatrix::identity(1, 1));
        let t = tvec_permutation(2, 2);
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!((t * v).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        for m in 1..=4 {
            for n in 1..=4 {
                let prod = tvec_permutation(m, n) * tvec_permutation(n, m);
                assert_eq!(prod, DenseMatrix::identity(m * n, m * n));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_mat(&mut rng, 3, 2);
        assert_eq!(tvec_permutation(3, 2) * vec(&a), vec(&a.transpose()));
    }

    #[test]
    fn svec_operators_match_direct_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let m = rand_mat(&mut rng, n, n);
        let g = rand_mat(&mut rng, 2, n);
        let p = SymMatrix::symmetrize(&rand_sym(&mut rng, n));
        let sp = svec_sym(&p);
        let lyap = lyapunov_operator_svec(&m) * &sp;
        let direct = m.transpose() * p.as_matrix() + p.as_matrix() * &m;
        assert!((lyap - svec(&direct).unwrap()).norm() < 1e-12);
        let left = left_mul_operator_svec(&g) * &sp;
        assert!((left - vec(&(&g * p.as_matrix()))).norm() < 1e-12);
    }

    #[test]
    fn triangular_root_cases() {
        assert_eq!(triangular_root(0), Some(0));
        assert_eq!(triangular_root(1), Some(1));
        assert_eq!(triangular_root(6), Some(3));
        assert_eq!(triangular_root(7), None);
        for n in 0..8 {
            for j in 0..n {
                for i in 0..=j {
                    let mut e = Vector::zeros(svec_len(n));
                    e[svec_index(n, i, j)] = 1.0;
                    let m = smat(&e).unwrap();
                    assert_eq!(m[(i, j)], 1.0);
                }
            }
        }
    }
}
