use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fracmor::experiment::{ExperimentConfig, Method, Prepared};
use fracmor::gramians::{empirical_gramians, exact_gramians, EmpiricalSpec, Horizon};
use fracmor::io;
use fracmor::{HurstParam, Interpretation, StochasticLinearSystem};

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v) * scale)
}

/// Diagonally dominated drift with small noise, always mean-square stable:
/// the Itô drift has logarithmic norm below −1/2 and ‖N‖² < 1/2.
fn stable_system(hurst: f64) -> impl Strategy<Value = StochasticLinearSystem> {
    (2usize..6).prop_flat_map(move |n| {
        (
            matrix(n, n, 0.3 / n as f64),
            matrix(n, 2, 1.0),
            matrix(1, n, 1.0),
            matrix(n, n, 0.3 / n as f64),
            matrix(n, 1, 1.0),
        )
            .prop_map(move |(g, b, c, noise, x0)| {
                let a = g - DMatrix::identity(n, n) * 1.5;
                let h = HurstParam::new(hurst).unwrap();
                StochasticLinearSystem::new(
                    a,
                    b,
                    c,
                    vec![noise],
                    x0,
                    DVector::from_element(1, 1.0),
                    h,
                    Interpretation::for_hurst(h),
                )
                .unwrap()
            })
    })
}

fn assert_sym_psd(m: &DMatrix<f64>, what: &str) {
    let scale = m.amax().max(1e-300);
    assert!((m - m.transpose()).amax() <= 1e-12 * scale, "{what} not symmetric");
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    assert!(min >= -1e-10 * scale, "{what} has eigenvalue {min:e}");
}

/// Residual of `A X + X Aᵀ + Σ N X Nᵀ + M` relative to `M`.
fn lyapunov_residual(a: &DMatrix<f64>, noise: &[DMatrix<f64>], x: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let mut r = a * x + x * a.transpose() + m;
    for ni in noise {
        r += ni * x * ni.transpose();
    }
    r.amax() / m.amax().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_gramians_solve_lyapunov_and_are_psd(sys in stable_system(0.5)) {
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let q = g.q.clone().unwrap();
        for (m, what) in [(&g.p_u, "P_u"), (&g.p_x0, "P_x0"), (&g.p, "P"), (&q, "Q")] {
            assert_sym_psd(m, what);
        }
        // Itô drift written out by hand.
        let n0 = &sys.noise()[0];
        let a_n = sys.a() + n0 * n0 * 0.5;
        let bb = sys.b() * sys.b().transpose();
        prop_assert!(lyapunov_residual(&a_n, sys.noise(), &g.p_u, &bb) < 1e-9);
        let nt = vec![n0.transpose()];
        let cc = sys.c().transpose() * sys.c();
        prop_assert!(lyapunov_residual(&a_n.transpose(), &nt, &q, &cc) < 1e-9);
    }

    #[test]
    fn finite_horizon_gramians_grow_with_t(sys in stable_system(0.5), t in 0.2..2.0f64) {
        let short = exact_gramians(&sys, Horizon::Finite(t)).unwrap();
        let long = exact_gramians(&sys, Horizon::Finite(2.0 * t)).unwrap();
        assert_sym_psd(&short.p, "P_T");
        assert_sym_psd(&(&long.p - &short.p), "P_2T - P_T");
    }

    #[test]
    fn empirical_gramians_are_psd(sys in stable_system(0.75), seed in any::<u64>()) {
        let g = empirical_gramians(&sys, &EmpiricalSpec::new(1.0, 20, 16, seed)).unwrap();
        assert_sym_psd(&g.p_u, "empirical P_u");
        assert_sym_psd(&g.p_x0, "empirical P_x0");
        prop_assert!((&g.p - &g.p_u - &g.p_x0).amax() <= 1e-12 * g.p.amax());
    }

    #[test]
    fn system_json_round_trip(sys in stable_system(0.5)) {
        let back = io::system_from_json(&io::system_to_json(&sys).unwrap()).unwrap();
        prop_assert_eq!(back, sys);
    }

    #[test]
    fn system_json_round_trip_extreme_values(x in prop::num::f64::NORMAL, y in prop::num::f64::SUBNORMAL) {
        let sys = StochasticLinearSystem::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::from_row_slice(1, 1, &[x]),
            DMatrix::from_row_slice(1, 1, &[y]),
            vec![],
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            HurstParam::BROWNIAN,
            Interpretation::Stratonovich,
        )
        .unwrap();
        let back = io::system_from_json(&io::system_to_json(&sys).unwrap()).unwrap();
        prop_assert_eq!(back.b()[0].to_bits(), x.to_bits());
        prop_assert_eq!(back.c()[0].to_bits(), y.to_bits());
    }

    #[test]
    fn gramian_json_round_trip(sys in stable_system(0.5)) {
        let g = exact_gramians(&sys, Horizon::Finite(1.0)).unwrap();
        let back = io::gramians_from_json(&io::gramians_to_json(&g).unwrap()).unwrap();
        prop_assert_eq!(back.p_u, g.p_u);
        prop_assert_eq!(back.p_x0, g.p_x0);
        prop_assert_eq!(back.q, g.q);
        prop_assert_eq!(back.horizon, g.horizon);
    }

    #[test]
    fn pq_spectrum_is_hankel_values(sys in stable_system(0.5)) {
        let cfg = ExperimentConfig { horizon: Some(Horizon::Infinite), ..Default::default() };
        let values = Prepared::new(Method::PqBalance, &sys, &cfg).unwrap().spectrum(&sys).unwrap();
        // sqrt(eig(PQ)) = sqrt(eig(Lᵀ Q L)) with P = L Lᵀ.
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let l = g.p.clone().cholesky().unwrap().l();
        let mut oracle: Vec<f64> = (l.transpose() * g.q.unwrap() * &l)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(values.len(), oracle.len());
        for (v, o) in values.iter().zip(&oracle) {
            prop_assert!((v - o).abs() <= 1e-8 * oracle[0], "{} vs {}", v, o);
        }
    }
}

#[test]
fn noiseless_gramian_is_deterministic_lyapunov() {
    // A = [[-1, 2], [0, -3]], B = [1, 1]ᵀ: solved by hand from
    // A P + P Aᵀ + B Bᵀ = 0.
    let sys = StochasticLinearSystem::without_initial_state(
        DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        vec![],
        HurstParam::BROWNIAN,
    )
    .unwrap();
    let p = exact_gramians(&sys, Horizon::Infinite).unwrap().p;
    let p22 = 1.0 / 6.0;
    let p12 = (1.0 + 2.0 * p22) / 4.0;
    let p11 = (1.0 + 4.0 * p12) / 2.0;
    let oracle = DMatrix::from_row_slice(2, 2, &[p11, p12, p12, p22]);
    assert!((&p - &oracle).amax() < 1e-12, "{p} vs {oracle}");
}

#[test]
fn empirical_gramians_independent_of_thread_count() {
    let sys = StochasticLinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        vec![DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.3])],
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::from_element(1, 1.0),
        HurstParam::new(0.7).unwrap(),
        Interpretation::Young,
    )
    .unwrap();
    let spec = EmpiricalSpec::new(1.0, 50, 257, 11);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| empirical_gramians(&sys, &spec).unwrap())
    };
    let one = run(1);
    for threads in [2, 3, 8] {
        let other = run(threads);
        assert_eq!(one.p_u, other.p_u, "{threads} threads");
        assert_eq!(one.p_x0, other.p_x0, "{threads} threads");
    }
}
