mod common;

use common::*;
use dlra_hjb::{
    ghjb_targets, lqr_for, open_loop_cost, open_loop_optimize, sample_domain, sample_initial_conditions,
    simulate_closed_loop, solve_dre, BasisSet, Benchmark, ConstantControl, ControlProblem, Error, FnController,
    InitialConditionKind, Integrator, OpenLoopOptions, SampleSet,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn benchmark() -> Benchmark {
    Benchmark::new(12, 1.0, 0.1, 1.0).unwrap()
}

fn linear(d: usize) -> Benchmark {
    Benchmark::new(d, 1.0, 0.1, 1.0).unwrap().with_cubic(false)
}

#[test]
fn uncontrolled_benchmark_blows_up_from_the_largest_constant_state() {
    // x ≡ c solves ẋ = x³, which escapes at t = 1/(2c²) < 0.3
    let b = benchmark();
    let r = simulate_closed_loop(&b, &ConstantControl(0.0), &[1.9; 12], 0.0, 0.3, 1e-3, Integrator::Euler);
    assert!(matches!(r, Err(Error::BlowUp { .. })), "{r:?}");
}

#[test]
fn small_constant_states_decay_or_stay_bounded_under_lqr() {
    let b = benchmark();
    let lqr = lqr_for(&b, 0.3, 1e-3).unwrap();
    let traj = simulate_closed_loop(&b, &lqr, &[0.5; 12], 0.0, 0.3, 1e-3, Integrator::Euler).unwrap();
    let last = traj.states.last().unwrap();
    assert!(last.iter().all(|v| v.abs() < 0.5));
}

#[test]
fn costs_are_positive_and_vanish_at_the_origin() {
    let b = benchmark();
    let lqr = lqr_for(&b, 0.3, 1e-3).unwrap();
    for x0 in sample_initial_conditions(InitialConditionKind::Polynomial, 10, 12, 3) {
        let cost = simulate_closed_loop(&b, &lqr, &x0, 0.0, 0.3, 1e-3, Integrator::Euler).unwrap().cost;
        assert!(cost > 0.0);
    }
    let zero = simulate_closed_loop(&b, &lqr, &[0.0; 12], 0.0, 0.3, 1e-3, Integrator::Euler).unwrap();
    assert_eq!(zero.cost, 0.0);
}

#[test]
fn euler_cost_converges_at_first_order() {
    let b = benchmark();
    let fb = FnController(|_t: f64, x: &[f64]| -2.0 * x[5] - 2.0 * x[6]);
    let x0 = sample_initial_conditions(InitialConditionKind::Polynomial, 1, 12, 8).remove(0);
    let cost = |tau: f64| simulate_closed_loop(&b, &fb, &x0, 0.0, 0.2, tau, Integrator::Euler).unwrap().cost;
    let (c1, c2, c3) = (cost(1e-3), cost(5e-4), cost(2.5e-4));
    let ratio = (c1 - c2) / (c2 - c3);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    let rk = simulate_closed_loop(&b, &fb, &x0, 0.0, 0.2, 1e-3, Integrator::Rk4).unwrap().cost;
    assert!((rk - c3).abs() < (c1 - c3).abs());
}

#[test]
fn polynomial_initial_conditions_have_the_stated_range() {
    let ics = sample_initial_conditions(InitialConditionKind::Polynomial, 200, 12, 42);
    let mean: f64 = ics.iter().map(|x| x.iter().sum::<f64>() / 12.0).sum::<f64>() / 200.0;
    for x in &ics {
        // scaled on a fine grid, so the coarse nodes stay below the bound up to grid error
        assert!(x.iter().all(|v| v.abs() <= 1.9 * (1.0 + 1e-3)));
        assert!(x[0].abs() < 1e-12 && x[11].abs() < 1e-12);
    }
    // symmetric coefficient distribution
    assert!(mean.abs() < 0.15, "{mean}");
}

#[test]
fn ghjb_targets_match_the_hand_formula() {
    let b = benchmark();
    let basis = BasisSet::h2(5).unwrap();
    let tt = random_tt(&[5; 12], &[2; 11], 4);
    let points = sample_domain(12, 20, 6);
    let samples = SampleSet::new(&basis, &points).unwrap();
    let mut r = rng(1);
    let alpha: Vec<f64> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
    let got = ghjb_targets(&b, &tt, &samples, &alpha, 0.1).unwrap();
    for (k, x) in points.iter().enumerate() {
        let grad = fd_gradient(|y| dlra_hjb::eval_value(&tt, &basis, y).unwrap(), x, 1e-5);
        let mut f = vec![0.0; 12];
        b.drift(0.1, x, &mut f);
        let g = b.interface();
        let mut want = b.running_cost(0.1, x) + 0.1 * alpha[k] * alpha[k];
        for i in 0..12 {
            want += grad[i] * (f[i] + g[i] * alpha[k]);
        }
        assert!((got[k] - want).abs() < 1e-6 * want.abs().max(1.0), "{k}: {} vs {want}", got[k]);
    }
}

#[test]
fn riccati_path_is_symmetric_and_solves_the_equation() {
    let b = linear(6);
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(b.cost_weights()));
    let a = b.drift_matrix().clone();
    let g = b.interface().to_vec();
    let tau = 1e-3;
    let path = solve_dre(&a, &g, &q, 0.1, 1.0, 0.1, tau).unwrap();
    let gv = nalgebra::DVector::from_column_slice(&g);
    for p in path.matrices() {
        assert!((p - p.transpose()).abs().max() < 1e-12);
    }
    for k in [10, 50, 90] {
        let m = path.matrices();
        let dp = (&m[k + 1] - &m[k - 1]) / (2.0 * tau);
        let p = &m[k];
        let rhs = -(a.transpose() * p + p * &a - p * &gv * gv.transpose() * p / 0.1 + &q);
        let err = (dp - &rhs).abs().max() / rhs.abs().max();
        assert!(err < 1e-3, "node {k}: {err}");
    }
    assert!((&path.matrices()[100] - &q).abs().max() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn adjoint_gradient_matches_finite_differences(seed in any::<u64>()) {
        let b = benchmark();
        let mut r = rng(seed);
        let x0 = sample_initial_conditions(InitialConditionKind::Polynomial, 1, 12, seed).remove(0);
        let u: Vec<f64> = (0..40).map(|_| r.gen_range(-2.0..2.0)).collect();
        let tau = 1e-3;
        let mut grad = vec![0.0; 40];
        open_loop_cost(&b, &x0, tau, &u, Some(&mut grad));
        let fd = fd_gradient(|v| open_loop_cost(&b, &x0, tau, v, None), &u, 1e-5);
        prop_assert!(rel_diff(&grad, &fd) < 1e-4);
    }
}

#[test]
fn lq_open_loop_and_lqr_match_the_riccati_value() {
    let b = linear(6);
    let (horizon, tau) = (0.1, 1e-3);
    let lqr = lqr_for(&b, horizon, tau).unwrap();
    for x0 in sample_initial_conditions(InitialConditionKind::Polynomial, 5, 6, 13) {
        let value = lqr.path.value(0.0, &x0);
        let closed = simulate_closed_loop(&b, &lqr, &x0, 0.0, horizon, tau, Integrator::Euler).unwrap();
        assert!((closed.cost - value).abs() < 0.01 * value, "lqr {} vs {value}", closed.cost);
        let ol = open_loop_optimize(&b, &x0, horizon, tau, &vec![0.0; 100], OpenLoopOptions::default()).unwrap();
        assert!(ol.converged);
        assert!((ol.cost - value).abs() < 0.01 * value, "open loop {} vs {value}", ol.cost);
        assert!(ol.cost <= closed.cost + 1e-12);
    }
}

#[test]
fn open_loop_never_ends_above_its_initial_guess() {
    let b = benchmark();
    let lqr = lqr_for(&b, 0.3, 1e-3).unwrap();
    for c in [1.0, 1.28, 1.4] {
        let x0 = vec![c; 12];
        let init = simulate_closed_loop(&b, &lqr, &x0, 0.0, 0.3, 1e-3, Integrator::Euler).unwrap();
        let start = open_loop_cost(&b, &x0, 1e-3, &init.controls, None);
        assert!((start - init.cost).abs() < 1e-10 * start);
        let ol = open_loop_optimize(&b, &x0, 0.3, 1e-3, &init.controls, OpenLoopOptions::default()).unwrap();
        assert!(ol.cost <= start);
    }
}
