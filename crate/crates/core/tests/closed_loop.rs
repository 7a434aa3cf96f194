//! Closed-loop behavior checks that go beyond single operations: open-loop
//! integration accuracy against an independent adaptive-step reference,
//! terminal statuses, and the purity of the exploration path.

use nalgebra::DVector;
use safe_mbrl::dynamics::ControlAffineSystem;
use safe_mbrl::learner::{approx_policy, CostSpec};
use safe_mbrl::basis::StafBasis;
use safe_mbrl::scenarios::{scenario_by_name, CONVEX_X0};
use safe_mbrl::sim::{
    exploratory_policy, integrate_rk4, run_scenario, ControllerMode, TerminalStatus,
};

/// Adaptive Runge-Kutta-Fehlberg 4(5) integrator, written independently of
/// the crate's fixed-step scheme so it can serve as a reference oracle.
fn rkf45(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> DVector<f64> {
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut h = 1e-4_f64;
    while t < t_end {
        h = h.min(t_end - t);
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 4.0)));
        let k3 = f(&(&x + &k1 * (3.0 * h / 32.0) + &k2 * (9.0 * h / 32.0)));
        let k4 = f(&(&x
            + &k1 * (1932.0 * h / 2197.0)
            + &k2 * (-7200.0 * h / 2197.0)
            + &k3 * (7296.0 * h / 2197.0)));
        let k5 = f(&(&x
            + &k1 * (439.0 * h / 216.0)
            + &k2 * (-8.0 * h)
            + &k3 * (3680.0 * h / 513.0)
            + &k4 * (-845.0 * h / 4104.0)));
        let k6 = f(&(&x
            + &k1 * (-8.0 * h / 27.0)
            + &k2 * (2.0 * h)
            + &k3 * (-3544.0 * h / 2565.0)
            + &k4 * (1859.0 * h / 4104.0)
            + &k5 * (-11.0 * h / 40.0)));
        let x5 = &x
            + (&k1 * (16.0 / 135.0)
                + &k3 * (6656.0 / 12825.0)
                + &k4 * (28561.0 / 56430.0)
                + &k5 * (-9.0 / 50.0)
                + &k6 * (2.0 / 55.0))
                * h;
        let x4 = &x
            + (&k1 * (25.0 / 216.0)
                + &k3 * (1408.0 / 2565.0)
                + &k4 * (2197.0 / 4104.0)
                + &k5 * (-1.0 / 5.0))
                * h;
        let err = (&x5 - &x4).norm().max(1e-300);
        if err <= tol {
            t += h;
            x = x5;
        }
        h *= 0.9 * (tol / err).powf(0.2);
        h = h.clamp(1e-9, 0.05);
    }
    x
}

#[test]
fn open_loop_trajectory_matches_adaptive_reference() {
    let sys = ControlAffineSystem::nonlinear_example("nonlinear_p_minus");
    let f = move |x: &DVector<f64>| sys.eval_drift(x).unwrap();
    let x0 = DVector::from_vec(CONVEX_X0.to_vec());
    let dt = 1e-3;
    for t_end in [1.0, 2.5, 5.0] {
        let fixed = integrate_rk4(&f, x0.clone(), dt, (t_end / dt).round() as usize);
        let reference = rkf45(&f, &x0, t_end, 1e-11);
        let err = (&fixed - &reference).norm();
        assert!(err <= 1e-5, "open-loop mismatch {err:.3e} at t = {t_end}");
    }
}

#[test]
fn exploration_path_carries_no_safeguard_term() {
    // The exploratory policy is the learned policy evaluated at the
    // extrapolation point; even where the safeguarding term would be huge
    // (close to the boundary) the two are bitwise identical.
    let basis = StafBasis::equilateral_triangle();
    let sys = ControlAffineSystem::nonlinear_example("nonlinear_p_minus");
    let cost = CostSpec::quadratic(
        nalgebra::DMatrix::identity(2, 2),
        nalgebra::DMatrix::identity(1, 1),
    )
    .unwrap();
    let w_a = DVector::from_vec(vec![0.5, 0.7, -0.3]);
    let anchor = DVector::from_vec(vec![0.3, -0.6]);
    // h(x) = −x₂² − x₁ + 1 = 1e-6 at this point: deep in barrier territory.
    let near_boundary = DVector::from_vec(vec![1.0 - 1e-6 - 0.25, 0.5]);
    let u_explore = exploratory_policy(&basis, &near_boundary, &anchor, &w_a, &sys, &cost);
    let u_plain = approx_policy(&basis, &near_boundary, &anchor, &w_a, &sys, &cost);
    assert_eq!(u_explore, u_plain);
}

#[test]
fn weak_safeguard_run_terminates_with_safety_violation_status() {
    // With the safeguard gain effectively zero the safeguarded run follows
    // the unguarded trajectory into the boundary and must stop there.
    let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
    cfg.c_b = 1e-12;
    cfg.horizon = 2.0;
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.status, TerminalStatus::SafetyViolation);
    assert!(log.first_violation_time.is_some());
    let t_end = log.records.last().unwrap().t;
    assert!(t_end < cfg.horizon, "run must stop early, got t = {t_end}");
    // The partial log is still well-formed.
    assert!(!log.records.is_empty());
}

#[test]
fn barrier_cost_from_near_boundary_blows_up_and_is_reported() {
    // Starting the barrier-augmented cost mode almost on the boundary makes
    // the initial Bellman errors enormous; the run must end with a recorded
    // blowup rather than a panic or a poisoned log.
    let mut cfg = scenario_by_name("nonlinear_convex_barrier_cost").unwrap();
    cfg.x0 = vec![0.0, -0.9];
    cfg.horizon = 5.0;
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.status, TerminalStatus::NumericalBlowup);
    assert!(!log.records.is_empty());
}

#[test]
fn excitation_estimates_are_finite_with_positive_extrapolated_level() {
    let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
    cfg.horizon = 2.0;
    let log = run_scenario(&cfg).unwrap();
    let pe = log.pe.expect("learning run records excitation");
    assert!(pe.c1.is_finite() && pe.c2.is_finite() && pe.c3.is_finite());
    assert!(pe.c1 >= 0.0 && pe.c3 >= 0.0);
    assert!(pe.c2 > 0.0, "extrapolated excitation should be positive");
}

#[test]
fn unguarded_run_continues_through_violations() {
    let mut cfg = scenario_by_name("nonlinear_convex_unguarded").unwrap();
    cfg.horizon = 2.0;
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.status, TerminalStatus::Completed);
    assert!(log.min_h() < 0.0, "this start exits the safe set");
    assert_eq!(log.records.len(), 2001);
    // B is logged as NaN outside the safe set, never infinite.
    for r in &log.records {
        if r.h <= 0.0 {
            assert!(r.b.is_nan());
        } else {
            assert!(r.b.is_finite());
        }
    }
}

#[test]
fn lqr_mode_requires_the_integrator() {
    let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
    cfg.mode = ControllerMode::LqrSafeguarded;
    assert!(run_scenario(&cfg).is_err());
}

#[test]
fn origin_with_zero_weights_is_an_equilibrium_of_the_augmented_loop() {
    // At x = 0 every kernel, regressor, and policy vanishes, so the state,
    // both weight vectors, and the drift estimate stay exactly at rest;
    // only Γ keeps its slow forgetting drift.
    let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
    cfg.x0 = vec![0.0, 0.0];
    cfg.w_c0 = vec![0.0, 0.0, 0.0];
    cfg.w_a0 = vec![0.0, 0.0, 0.0];
    cfg.horizon = 1.0;
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.status, TerminalStatus::Completed);
    for r in &log.records {
        assert_eq!(r.x, vec![0.0, 0.0]);
        assert_eq!(r.w_c, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.w_a, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.theta_hat, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.delta_t, 0.0);
    }
    // Γ' = β_c·Γ when all regressors vanish: Γ(T) = e^{β_c T}·Γ(0).
    let g_end = log.records.last().unwrap().gamma_min;
    let expected = 100.0 * (0.001_f64 * 1.0).exp();
    assert!((g_end - expected).abs() < 1e-6, "{g_end} vs {expected}");
}
