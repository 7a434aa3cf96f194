//! The bundled experiment configurations: three controller modes on the
//! convex parabolic set, the nonconvex variant, and the two single-integrator
//! obstacle runs (learned policy vs. static LQR).

use crate::learner::LearnerGains;
use crate::sim::{ControllerMode, SafeSetSpec, ScenarioConfig};

/// Learning gains shared by every bundled scenario:
/// k_c1 = 0.1, k_c2 = 1, k_a1 = 1, k_a2 = 0.1, γ_c = 1, β_c = 0.001, N = 1.
pub fn default_gains() -> LearnerGains {
    LearnerGains {
        k_c1: 0.1,
        k_c2: 1.0,
        k_a1: 1.0,
        k_a2: 0.1,
        gamma_c: 1.0,
        beta_c: 0.001,
        n_extrap: 1,
    }
}

/// Actor projection radius. An order of magnitude above the bundled initial
/// weights, so the projection only engages if learning runs away.
pub const W_A_BOUND: f64 = 10.0;

/// Identifier defaults: window Δt = 0.5, gain k_θ = 5, stack capacity 20.
pub const ICL_WINDOW: f64 = 0.5;
pub const ICL_GAIN: f64 = 5.0;
pub const ICL_CAPACITY: usize = 20;

/// Default RNG seed for the bundled scenarios.
pub const DEFAULT_SEED: u64 = 7;

/// Start state for the convex-set scenarios. Chosen strictly inside the set
/// with enough initial energy that the unguarded policy demonstrably exits
/// the safe set while the safeguarded one is forced to intervene.
pub const CONVEX_X0: [f64; 2] = [-2.5, 0.0];

/// Start state for the nonconvex-set scenario.
pub const NONCONVEX_X0: [f64; 2] = [-2.0, 2.0];

/// Obstacle geometry and start state for the integrator scenarios. The start
/// is nearly collinear with the obstacle center and the origin, which pins
/// the static LQR policy behind the obstacle while the learned, time-varying
/// policy works its way around.
pub const OBSTACLE_CENTER: [f64; 2] = [2.0, 0.0];
pub const OBSTACLE_RADIUS: f64 = 1.0;
pub const INTEGRATOR_X0: [f64; 2] = [4.0, 0.05];

/// Horizons, in time units.
pub const NONLINEAR_HORIZON: f64 = 40.0;
pub const INTEGRATOR_HORIZON: f64 = 60.0;

/// Integration step shared by all bundled scenarios.
pub const DT: f64 = 1e-3;

fn nonlinear_base(name: &str, mode: ControllerMode) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        system: "nonlinear_p_minus".to_string(),
        safe_set: SafeSetSpec::Parabola { p: -1.0 },
        mode,
        q_diag: vec![1.0, 1.0],
        r_diag: vec![1.0],
        barrier_weight: 0.0,
        gains: default_gains(),
        c_b: 1.0,
        x0: CONVEX_X0.to_vec(),
        w_c0: vec![0.5, 0.5, 0.5],
        w_a0: vec![0.5, 0.5, 0.5],
        gamma0: 100.0,
        theta0: vec![0.0, 0.0, 0.0],
        w_a_bound: W_A_BOUND,
        icl_window: ICL_WINDOW,
        icl_gain: ICL_GAIN,
        icl_capacity: ICL_CAPACITY,
        dt: DT,
        horizon: NONLINEAR_HORIZON,
        seed: DEFAULT_SEED,
        sample_stride: 1,
    }
}

fn integrator_base(name: &str, mode: ControllerMode) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        system: "single_integrator".to_string(),
        safe_set: SafeSetSpec::Disk {
            center: OBSTACLE_CENTER,
            radius: OBSTACLE_RADIUS,
        },
        mode,
        q_diag: vec![1.0, 1.0],
        r_diag: vec![1.0, 1.0],
        barrier_weight: 0.0,
        gains: default_gains(),
        c_b: 0.1,
        x0: INTEGRATOR_X0.to_vec(),
        w_c0: vec![1.0, 1.0, 1.0],
        w_a0: vec![1.0, 1.0, 1.0],
        gamma0: 10.0,
        theta0: vec![],
        w_a_bound: W_A_BOUND,
        icl_window: ICL_WINDOW,
        icl_gain: ICL_GAIN,
        icl_capacity: ICL_CAPACITY,
        dt: DT,
        horizon: INTEGRATOR_HORIZON,
        seed: DEFAULT_SEED,
        sample_stride: 1,
    }
}

/// The six canonical scenario configurations.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let mut convex_safe = nonlinear_base("nonlinear_convex_safe", ControllerMode::RlSafeguarded);
    convex_safe.c_b = 1.0;

    let convex_unguarded =
        nonlinear_base("nonlinear_convex_unguarded", ControllerMode::RlUnguarded);

    let mut convex_barrier =
        nonlinear_base("nonlinear_convex_barrier_cost", ControllerMode::RlBarrierCost);
    convex_barrier.barrier_weight = 20.0;

    let mut nonconvex_safe =
        nonlinear_base("nonlinear_nonconvex_safe", ControllerMode::RlSafeguarded);
    nonconvex_safe.system = "nonlinear_p_plus".to_string();
    nonconvex_safe.safe_set = SafeSetSpec::Parabola { p: 1.0 };
    nonconvex_safe.c_b = 0.001;
    nonconvex_safe.gamma0 = 10.0;
    nonconvex_safe.x0 = NONCONVEX_X0.to_vec();

    let integrator_rl = integrator_base("integrator_rl", ControllerMode::RlSafeguarded);
    let integrator_lqr = integrator_base("integrator_lqr", ControllerMode::LqrSafeguarded);

    vec![
        convex_safe,
        convex_unguarded,
        convex_barrier,
        nonconvex_safe,
        integrator_rl,
        integrator_lqr,
    ]
}

/// Look up one builtin by name.
pub fn scenario_by_name(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios().into_iter().find(|c| c.name == name)
}

/// Names of all builtins, in canonical order.
pub fn scenario_names() -> Vec<String> {
    builtin_scenarios().into_iter().map(|c| c.name).collect()
}
