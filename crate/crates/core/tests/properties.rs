use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixsyn::fixtures;
use mixsyn::gare;
use mixsyn::hinf::{self, HinfConfig};
use mixsyn::lti::{self, FeedbackGain};
use mixsyn::matops::{self, DenseMatrix, SymMatrix, Vector};
use mixsyn::narmax::{self, Dataset, FrolsOptions, Mode, RegressorSpec};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DenseMatrix::from_row_slice(rows, cols, &v))
}

fn square() -> impl Strategy<Value = DenseMatrix> {
    (1usize..=4).prop_flat_map(|n| matrix(n, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svec_round_trip(a in square()) {
        let p = SymMatrix::symmetrize(&a);
        let v = matops::svec_sym(&p);
        prop_assert_eq!(v.len(), matops::svec_len(p.dim()));
        prop_assert_eq!(matops::smat(&v).unwrap(), p);
    }

    #[test]
    fn kron_vec_identity(abx in (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(r, k, c)| (matrix(r, k), matrix(k, k), matrix(k, c)))) {
        let (a, x, b) = abx;
        let lhs = matops::vec(&(&a * &x * &b));
        let rhs = matops::kron(&b.transpose(), &a) * matops::vec(&x);
        prop_assert!((lhs - rhs).norm() <= 1e-12);
    }

    #[test]
    fn quadratic_form_through_quad_basis(a in square()) {
        let n = a.nrows();
        let p = SymMatrix::symmetrize(&a);
        let x = Vector::from_fn(n, |i, _| (i as f64 + 1.0) * 0.3 - 0.5);
        let direct = x.dot(&(p.as_matrix() * &x));
        let via = matops::svec_sym(&p).dot(&matops::quad_basis(&x));
        prop_assert!((direct - via).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn lyapunov_solution_has_small_residual(a in square()) {
        let n = a.nrows();
        let stable = &a - DenseMatrix::identity(n, n) * (matops::spectral_abscissa(&a) + 0.3);
        let q = SymMatrix::identity(n);
        let x = lti::solve_lyapunov(&stable, &q).unwrap();
        prop_assert!(lti::lyapunov_residual(&stable, &x, &q) <= 1e-10);
        prop_assert!(x.is_positive_definite());
    }

    #[test]
    fn hamiltonian_spectrum_is_mirror_symmetric(
        a in (1usize..=4).prop_flat_map(|n| (matrix(n, n), matrix(n, 2), matrix(2, n))),
        gamma in 0.2f64..10.0,
    ) {
        let h = hinf::hamiltonian(&a.0, &a.1, &a.2, gamma);
        let eig = matops::eigenvalues(&h);
        for l in &eig {
            let gap = eig.iter().map(|m| (m + l.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(gap <= 1e-8 * h.norm().max(1.0));
        }
    }

    #[test]
    fn hinf_norm_bounds_every_frequency(seed in 0u64..500, omega in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = fixtures::random_game(&mut rng, 2, 1, 1).unwrap();
        let norm = hinf::hinf_norm(&g.plant, &g.k1, &HinfConfig::default()).unwrap().value;
        let at = lti::closed_loop_gain_at(&g.plant, &g.k1, omega).unwrap();
        prop_assert!(at <= norm * (1.0 + 2e-3));
    }

    #[test]
    fn gare_solution_satisfies_the_equation(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = fixtures::random_game(&mut rng, 3, 2, 1).unwrap();
        let p = gare::solve_gare_direct(&g.plant, g.gamma).unwrap();
        prop_assert!(gare::riccati_residual(&g.plant, &p, g.gamma).unwrap() <= 1e-8 * (1.0 + p.norm()));
        prop_assert!(p.is_positive_definite());
        let k = FeedbackGain(g.plant.b1.transpose() * p.as_matrix());
        prop_assert!(lti::is_hurwitz(&g.plant.closed_loop_a(&k)));
    }

    #[test]
    fn err_sums_to_explained_fraction(seed in 0u64..1000, max_terms in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let len = 80;
        let u: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new((0..len).map(|k| k as f64).collect(), vec![z.clone()], vec![u]).unwrap();
        let spec = RegressorSpec { degree: 2, mode: Mode::Discrete { state_lags: 2, input_lags: vec![2], noise_lags: 0 }, wrappers: vec![] };
        let d = narmax::build_regressors(&data, &spec).unwrap();
        let y = Vector::from_iterator(d.rows.len(), d.rows.iter().map(|&k| z[k]));
        let fit = narmax::frols_fit(&d, &y, &FrolsOptions { err_threshold: 1e-12, max_terms }).unwrap();
        let cols: Vec<usize> = fit.iter().map(|t| d.terms.iter().position(|c| *c == t.term).unwrap()).collect();
        let x = DenseMatrix::from_fn(d.rows.len(), cols.len(), |r, c| d.matrix[(r, cols[c])]);
        let theta = Vector::from_iterator(fit.len(), fit.iter().map(|t| t.coefficient));
        let explained = 1.0 - (&y - x * theta).norm_squared() / y.norm_squared();
        let total: f64 = fit.iter().map(|t| t.err).sum();
        prop_assert!(fit.iter().all(|t| t.err >= 0.0));
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!((total - explained).abs() <= 1e-9);
    }
}
