//! Closed-loop assembly: the safe policy, the learner update laws, and the
//! identifier integrated together by fixed-step RK4, with per-step logging.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::StafBasis;
use crate::dynamics::{system_by_name, ControlAffineSystem};
use crate::learner::{
    actor_dot, approx_policy, critic_dot, pe_diagnostic, policy_gain_matrix, regressor,
    sample_extrap_points, BeSample, CostSpec, ExtrapPoint, LearnerGains, LearnerState,
    PeEstimates, PeSample, Regressor,
};
use crate::safety::{safeguard_control, LyapunovLikeCbf, SafeguardMode, H_GUARD};
use crate::sysid::{theta_dot, IclHistoryStack, IdentifierState};
use crate::{Error, Result};

/// Any augmented-state component beyond this magnitude ends the run with a
/// `NumericalBlowup` status.
pub const BLOWUP_LIMIT: f64 = 1e8;

/// Safe-set geometry selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafeSetSpec {
    /// h(x) = p·x₂² − x₁ + 1 with p = −1 (convex) or p = +1 (nonconvex).
    Parabola { p: f64 },
    /// h(x) = ‖x − center‖² − radius².
    Disk { center: [f64; 2], radius: f64 },
}

impl SafeSetSpec {
    pub fn build(&self) -> Result<LyapunovLikeCbf> {
        match *self {
            SafeSetSpec::Parabola { p } => crate::safety::parabolic_lcbf(p),
            SafeSetSpec::Disk { center, radius } => crate::safety::obstacle_lcbf(center, radius),
        }
    }
}

/// Which controller the closed loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Learned policy plus the cost-weighted safeguarding term.
    RlSafeguarded,
    /// Learned policy alone; safety violations are recorded, not fatal.
    RlUnguarded,
    /// Learned policy alone, with the barrier folded into the running cost.
    RlBarrierCost,
    /// Static LQR policy `u = −x` plus the safeguarding term; the learner
    /// and identifier are frozen. Single-integrator scenarios only.
    LqrSafeguarded,
}

impl ControllerMode {
    pub fn is_safeguarded(&self) -> bool {
        matches!(
            self,
            ControllerMode::RlSafeguarded | ControllerMode::LqrSafeguarded
        )
    }

    pub fn learns(&self) -> bool {
        !matches!(self, ControllerMode::LqrSafeguarded)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerMode::RlSafeguarded => "rl_safeguarded",
            ControllerMode::RlUnguarded => "rl_unguarded",
            ControllerMode::RlBarrierCost => "rl_barrier_cost",
            ControllerMode::LqrSafeguarded => "lqr_safeguarded",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl_safeguarded" => Ok(ControllerMode::RlSafeguarded),
            "rl_unguarded" => Ok(ControllerMode::RlUnguarded),
            "rl_barrier_cost" => Ok(ControllerMode::RlBarrierCost),
            "lqr_safeguarded" => Ok(ControllerMode::LqrSafeguarded),
            other => Err(Error::contract(format!(
                "unknown controller mode '{other}' (known: rl_safeguarded, rl_unguarded, rl_barrier_cost, lqr_safeguarded)"
            ))),
        }
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full description of one closed-loop run.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: String,
    pub safe_set: SafeSetSpec,
    pub mode: ControllerMode,
    /// Diagonals of the quadratic cost weights.
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// w_B of the barrier-augmented running cost (barrier-cost mode only).
    pub barrier_weight: f64,
    pub gains: LearnerGains,
    /// Safeguard gain c_b.
    pub c_b: f64,
    pub x0: Vec<f64>,
    pub w_c0: Vec<f64>,
    pub w_a0: Vec<f64>,
    /// Γ(t₀) = gamma0·I.
    pub gamma0: f64,
    pub theta0: Vec<f64>,
    /// Actor projection radius W̄_a.
    pub w_a_bound: f64,
    /// Identifier window Δt, adaptation gain k_θ, and stack capacity M.
    pub icl_window: f64,
    pub icl_gain: f64,
    pub icl_capacity: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Extrapolation/identifier clock in integration steps. The default of 1
    /// resamples every step; integration-order studies shrink `dt` while
    /// holding the sampling clock fixed so both runs draw identical points.
    pub sample_stride: usize,
}

/// Everything recorded at one time-step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_total: Vec<f64>,
    pub u_nominal: Vec<f64>,
    pub u_safeguard: Vec<f64>,
    pub h: f64,
    /// LCBF value; NaN where h ≤ 0 (the barrier is undefined there).
    pub b: f64,
    pub delta_t: f64,
    pub w_c: Vec<f64>,
    pub w_a: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// σ_min of the identifier stack's information matrix.
    pub stack_sigma_min: f64,
    /// Whether the barrier-cost substitution was active at this step.
    pub cost_substituted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    Completed,
    SafetyViolation,
    NumericalBlowup,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalStatus::Completed => "completed",
            TerminalStatus::SafetyViolation => "safety_violation",
            TerminalStatus::NumericalBlowup => "numerical_blowup",
        }
    }
}

/// Time-indexed record of a run plus its terminal status and excitation
/// diagnostics.
#[derive(Debug, Clone)]
pub struct SimLog {
    pub scenario: String,
    pub mode: ControllerMode,
    pub state_dim: usize,
    pub input_dim: usize,
    pub basis_len: usize,
    pub param_dim: usize,
    pub records: Vec<StepRecord>,
    pub status: TerminalStatus,
    pub first_violation_time: Option<f64>,
    pub pe: Option<PeEstimates>,
}

impl SimLog {
    pub fn min_h(&self) -> f64 {
        self.records.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }

    pub fn terminal_state_norm(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(f64::NAN)
    }
}

/// The safe composite policy. Returns `(u_total, u_nominal, u_safeguard)`.
///
/// Safeguarded modes fail with a safety violation when `h(x)` is at or below
/// the boundary guard; unguarded modes never evaluate the barrier.
#[allow(clippy::too_many_arguments)]
pub fn safe_policy(
    x: &DVector<f64>,
    learner: &LearnerState,
    lcbf: &LyapunovLikeCbf,
    system: &ControlAffineSystem,
    cost: &CostSpec,
    basis: &StafBasis,
    c_b: f64,
    mode: ControllerMode,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let m = system.input_dim();
    let nominal = match mode {
        ControllerMode::LqrSafeguarded => -x.clone(),
        _ => approx_policy(basis, x, x, &learner.w_a_hat, system, cost),
    };
    let safeguard = if mode.is_safeguarded() {
        let g = system.eval_input_matrix(x)?;
        safeguard_control(lcbf, x, &g, c_b, SafeguardMode::CostWeighted(cost.r()))?
    } else {
        DVector::zeros(m)
    };
    let total = &nominal + &safeguard;
    Ok((total, nominal, safeguard))
}

/// The policy evaluated along extrapolated points: the learned policy alone,
/// with no safeguarding term. Exploration happens on the identified model,
/// so it never needs shielding; keeping the barrier out of this path is what
/// makes the extrapolated Bellman errors represent the unguarded problem.
pub fn exploratory_policy(
    basis: &StafBasis,
    y: &DVector<f64>,
    x_anchor: &DVector<f64>,
    w_a_hat: &DVector<f64>,
    system: &ControlAffineSystem,
    cost: &CostSpec,
) -> DVector<f64> {
    approx_policy(basis, y, x_anchor, w_a_hat, system, cost)
}

#[derive(Clone)]
struct AugState {
    x: DVector<f64>,
    w_c: DVector<f64>,
    gamma: DMatrix<f64>,
    w_a: DVector<f64>,
    theta: DVector<f64>,
}

impl AugState {
    /// self + other·c, consuming self.
    fn axpy(mut self, other: &AugState, c: f64) -> AugState {
        self.x += &other.x * c;
        self.w_c += &other.w_c * c;
        self.gamma += &other.gamma * c;
        self.w_a += &other.w_a * c;
        self.theta += &other.theta * c;
        self
    }

    fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in [&self.x, &self.w_c, &self.w_a, &self.theta] {
            if !v.is_empty() {
                m = m.max(v.amax());
            }
        }
        m.max(self.gamma.amax())
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.w_c.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite())
            && self.w_a.iter().all(|v| v.is_finite())
            && self.theta.iter().all(|v| v.is_finite())
    }
}

/// Pieces assembled once per run.
struct ScenarioParts {
    system: ControlAffineSystem,
    lcbf: Arc<LyapunovLikeCbf>,
    cost: CostSpec,
    basis: StafBasis,
    gains: LearnerGains,
    c_b: f64,
    mode: ControllerMode,
    w_a_bound: f64,
    icl_gain: f64,
}

/// Inputs held fixed across the stages of one RK4 step.
struct StepContext<'a> {
    extrap_points: &'a [DVector<f64>],
    stack: &'a IclHistoryStack,
    last_safe_b: f64,
}

/// Step-start diagnostics captured from the first stage evaluation.
struct StageDiag {
    u_total: DVector<f64>,
    u_nominal: DVector<f64>,
    u_safeguard: DVector<f64>,
    delta_t: f64,
    lambda: DMatrix<f64>,
    lambda_extrap: DMatrix<f64>,
    substituted: bool,
}

/// Running cost with the barrier-cost substitution: outside the safe set the
/// barrier term is frozen at its last safe value and the step is flagged.
fn stage_cost(
    cost: &CostSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    barrier_mode: bool,
    last_safe_b: f64,
) -> (f64, bool) {
    if !barrier_mode {
        return (
            cost.running_cost(x, u)
                .expect("non-augmented running cost cannot fail"),
            false,
        );
    }
    match cost.running_cost(x, u) {
        Ok(c) => (c, false),
        Err(_) => (
            cost.quadratic_cost(x, u) + cost.barrier_weight() * last_safe_b,
            true,
        ),
    }
}

/// Right-hand side of the full augmented ODE at one (stage) state.
///
/// Extrapolation points and the identifier stack come in through the frozen
/// step context; everything else is evaluated at the given state.
fn eval_derivative(
    aug: &AugState,
    parts: &ScenarioParts,
    ctx: &StepContext<'_>,
) -> Result<(AugState, StageDiag)> {
    let sys = &parts.system;
    let basis = &parts.basis;
    let l = basis.len();
    let barrier_mode = parts.mode == ControllerMode::RlBarrierCost;

    let learner = LearnerState {
        w_c_hat: aug.w_c.clone(),
        gamma: aug.gamma.clone(),
        w_a_hat: aug.w_a.clone(),
        w_a_bound: parts.w_a_bound,
    };
    let (u_total, u_nominal, u_safeguard) = safe_policy(
        &aug.x,
        &learner,
        &parts.lcbf,
        sys,
        &parts.cost,
        basis,
        parts.c_b,
        parts.mode,
    )?;

    // Plant.
    let x_dot = sys.eval_drift(&aug.x)? + sys.eval_input_matrix(&aug.x)? * &u_total;

    if !parts.mode.learns() {
        let diag = StageDiag {
            delta_t: {
                let reg = regressor(
                    basis,
                    &aug.x,
                    &aug.x,
                    &u_total,
                    &aug.theta,
                    sys,
                    parts.gains.gamma_c,
                );
                let (c, _) = stage_cost(&parts.cost, &aug.x, &u_total, false, 0.0);
                c + aug.w_c.dot(&reg.omega)
            },
            u_total,
            u_nominal,
            u_safeguard,
            lambda: DMatrix::zeros(l, l),
            lambda_extrap: DMatrix::zeros(l, l),
            substituted: false,
        };
        let deriv = AugState {
            x: x_dot,
            w_c: DVector::zeros(l),
            gamma: DMatrix::zeros(l, l),
            w_a: DVector::zeros(l),
            theta: DVector::zeros(aug.theta.len()),
        };
        return Ok((deriv, diag));
    }

    // On-trajectory Bellman error.
    let reg = regressor(
        basis,
        &aug.x,
        &aug.x,
        &u_total,
        &aug.theta,
        sys,
        parts.gains.gamma_c,
    );
    let (cost_t, substituted) = stage_cost(&parts.cost, &aug.x, &u_total, barrier_mode, ctx.last_safe_b);
    let delta_t = cost_t + aug.w_c.dot(&reg.omega);
    let on_sample = BeSample {
        reg: Regressor {
            omega: reg.omega.clone(),
            rho: reg.rho,
        },
        delta: delta_t,
    };

    // Extrapolated Bellman errors with the exploratory (unguarded) policy.
    let mut extrap = Vec::with_capacity(ctx.extrap_points.len());
    let mut lambda_extrap = DMatrix::zeros(l, l);
    for xi in ctx.extrap_points {
        let ui = exploratory_policy(basis, xi, &aug.x, &aug.w_a, sys, &parts.cost);
        let regi = regressor(basis, xi, &aug.x, &ui, &aug.theta, sys, parts.gains.gamma_c);
        let (ci, _) = stage_cost(&parts.cost, xi, &ui, barrier_mode, ctx.last_safe_b);
        let deltai = ci + aug.w_c.dot(&regi.omega);
        let g_phi_i = policy_gain_matrix(basis, xi, &aug.x, sys, &parts.cost);
        lambda_extrap += regi.lambda();
        extrap.push(ExtrapPoint {
            reg: regi,
            delta: deltai,
            g_phi: g_phi_i,
        });
    }
    lambda_extrap /= ctx.extrap_points.len() as f64;

    let (w_c_dot, gamma_dot) = critic_dot(&learner, &parts.gains, &on_sample, &extrap);
    let g_phi = policy_gain_matrix(basis, &aug.x, &aug.x, sys, &parts.cost);
    let w_a_dot = actor_dot(&learner, &parts.gains, &g_phi, &on_sample.reg, &extrap)?;
    let theta_deriv = theta_dot(parts.icl_gain, &aug.theta, ctx.stack);

    let diag = StageDiag {
        lambda: on_sample.reg.lambda(),
        lambda_extrap,
        delta_t,
        u_total,
        u_nominal,
        u_safeguard,
        substituted,
    };
    let deriv = AugState {
        x: x_dot,
        w_c: w_c_dot,
        gamma: gamma_dot,
        w_a: w_a_dot,
        theta: theta_deriv,
    };
    Ok((deriv, diag))
}

impl ScenarioParts {
    fn build(cfg: &ScenarioConfig) -> Result<(Self, LearnerState, IdentifierState)> {
        cfg.gains.validate()?;
        if cfg.dt <= 0.0 {
            return Err(Error::contract("dt must be positive"));
        }
        if cfg.horizon < 0.0 {
            return Err(Error::contract("horizon must be nonnegative"));
        }
        if cfg.sample_stride == 0 {
            return Err(Error::contract("sample_stride must be at least 1"));
        }
        let system = system_by_name(&cfg.system)?;
        let n = system.state_dim();
        let m = system.input_dim();
        let p = system.param_dim();
        if cfg.x0.len() != n {
            return Err(Error::contract("x0 dimension does not match the system"));
        }
        if cfg.q_diag.len() != n || cfg.r_diag.len() != m {
            return Err(Error::contract("cost diagonals do not match the system"));
        }
        if cfg.theta0.len() != p {
            return Err(Error::contract("theta0 dimension does not match the drift basis"));
        }
        if cfg.mode == ControllerMode::LqrSafeguarded && (m != n || p != 0) {
            return Err(Error::contract(
                "lqr_safeguarded applies to the single integrator only",
            ));
        }
        let lcbf = Arc::new(cfg.safe_set.build()?);
        let x0 = DVector::from_vec(cfg.x0.clone());
        if cfg.mode.is_safeguarded() && lcbf.min_h(&x0) <= H_GUARD {
            return Err(Error::contract(format!(
                "x0 must be strictly inside the safe set for mode {} (h(x0) = {})",
                cfg.mode,
                lcbf.min_h(&x0)
            )));
        }
        let q = DMatrix::from_diagonal(&DVector::from_vec(cfg.q_diag.clone()));
        let r = DMatrix::from_diagonal(&DVector::from_vec(cfg.r_diag.clone()));
        let barrier = if cfg.mode == ControllerMode::RlBarrierCost {
            Some(lcbf.clone())
        } else {
            None
        };
        let weight = if cfg.mode == ControllerMode::RlBarrierCost {
            cfg.barrier_weight
        } else {
            0.0
        };
        let cost = CostSpec::new(q, r, weight, barrier)?;
        let basis = StafBasis::equilateral_triangle();
        if cfg.w_c0.len() != basis.len() || cfg.w_a0.len() != basis.len() {
            return Err(Error::contract("weight init dimension must match the basis"));
        }
        if cfg.gamma0 <= 0.0 {
            return Err(Error::contract("gamma0 must be positive"));
        }
        let learner = LearnerState::new(
            DVector::from_vec(cfg.w_c0.clone()),
            DMatrix::identity(basis.len(), basis.len()) * cfg.gamma0,
            DVector::from_vec(cfg.w_a0.clone()),
            cfg.w_a_bound,
        )?;
        let ident = IdentifierState::new(
            DVector::from_vec(cfg.theta0.clone()),
            cfg.icl_gain,
            cfg.icl_window,
        );
        let parts = ScenarioParts {
            system,
            lcbf,
            cost,
            basis,
            gains: cfg.gains,
            c_b: cfg.c_b,
            mode: cfg.mode,
            w_a_bound: cfg.w_a_bound,
            icl_gain: cfg.icl_gain,
        };
        Ok((parts, learner, ident))
    }
}

fn push_record(
    log: &mut SimLog,
    t: f64,
    aug: &AugState,
    lcbf: &LyapunovLikeCbf,
    diag: Option<&StageDiag>,
    stack_sigma: f64,
) {
    let h = lcbf.min_h(&aug.x);
    let b = if h > H_GUARD {
        lcbf.value(&aug.x).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let m = log.input_dim;
    let (u_total, u_nominal, u_safeguard, delta_t, substituted) = match diag {
        Some(d) => (
            d.u_total.iter().copied().collect(),
            d.u_nominal.iter().copied().collect(),
            d.u_safeguard.iter().copied().collect(),
            d.delta_t,
            d.substituted,
        ),
        None => (vec![f64::NAN; m], vec![f64::NAN; m], vec![f64::NAN; m], f64::NAN, false),
    };
    if h <= 0.0 && log.first_violation_time.is_none() {
        log.first_violation_time = Some(t);
    }
    let gamma_eigs = aug.gamma.clone().symmetric_eigenvalues();
    let gamma_min = gamma_eigs.min();
    let gamma_max = gamma_eigs.max();
    log.records.push(StepRecord {
        t,
        x: aug.x.iter().copied().collect(),
        u_total,
        u_nominal,
        u_safeguard,
        h,
        b,
        delta_t,
        w_c: aug.w_c.iter().copied().collect(),
        w_a: aug.w_a.iter().copied().collect(),
        theta_hat: aug.theta.iter().copied().collect(),
        gamma_min,
        gamma_max,
        stack_sigma_min: stack_sigma,
        cost_substituted: substituted,
    });
}

/// Run one scenario to completion (or to a recorded safety violation or
/// numerical blowup). Deterministic: identical configurations produce
/// identical logs.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimLog> {
    let (parts, learner0, mut ident) = ScenarioParts::build(cfg)?;
    let n_steps = ((cfg.horizon / cfg.dt) + 1e-9).floor() as usize;
    let l = parts.basis.len();
    let p = parts.system.param_dim();

    let mut log = SimLog {
        scenario: cfg.name.clone(),
        mode: cfg.mode,
        state_dim: parts.system.state_dim(),
        input_dim: parts.system.input_dim(),
        basis_len: l,
        param_dim: p,
        records: Vec::with_capacity(n_steps + 1),
        status: TerminalStatus::Completed,
        first_violation_time: None,
        pe: None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = IclHistoryStack::new(cfg.icl_capacity);
    let mut aug = AugState {
        x: DVector::from_vec(cfg.x0.clone()),
        w_c: learner0.w_c_hat.clone(),
        gamma: learner0.gamma.clone(),
        w_a: learner0.w_a_hat.clone(),
        theta: DVector::from_vec(cfg.theta0.clone()),
    };
    let mut last_safe_b = parts.lcbf.value(&aug.x).unwrap_or(0.0);
    let mut extrap_points: Vec<DVector<f64>> = Vec::new();
    let mut pe_history: Vec<PeSample> = Vec::new();

    // Initial record and identifier sample at t = 0.
    {
        if parts.mode.learns() {
            extrap_points = sample_extrap_points(&aug.x, &mut rng, parts.gains.n_extrap);
        }
        let ctx = StepContext {
            extrap_points: &extrap_points,
            stack: &stack,
            last_safe_b,
        };
        match eval_derivative(&aug, &parts, &ctx) {
            Ok((_, diag)) => {
                if parts.mode.learns() && p > 0 {
                    if let Some(entry) =
                        ident.accumulate(0.0, &aug.x, &diag.u_total, &parts.system, cfg.dt)?
                    {
                        stack.insert(entry);
                    }
                }
                push_record(&mut log, 0.0, &aug, &parts.lcbf, Some(&diag), stack.sigma_min());
            }
            Err(Error::SafetyViolation { .. }) => {
                push_record(&mut log, 0.0, &aug, &parts.lcbf, None, stack.sigma_min());
                log.status = TerminalStatus::SafetyViolation;
                log.first_violation_time.get_or_insert(0.0);
                return Ok(log);
            }
            Err(e) => return Err(e),
        }
    }

    for k in 0..n_steps {
        let t = k as f64 * cfg.dt;
        if parts.mode.learns() && k % cfg.sample_stride == 0 && k > 0 {
            extrap_points = sample_extrap_points(&aug.x, &mut rng, parts.gains.n_extrap);
        }
        let ctx = StepContext {
            extrap_points: &extrap_points,
            stack: &stack,
            last_safe_b,
        };

        // RK4 stages; the context is frozen across them.
        let step = (|| -> Result<(AugState, StageDiag)> {
            let half = cfg.dt / 2.0;
            let (k1, diag) = eval_derivative(&aug, &parts, &ctx)?;
            let (k2, _) = eval_derivative(&aug.clone().axpy(&k1, half), &parts, &ctx)?;
            let (k3, _) = eval_derivative(&aug.clone().axpy(&k2, half), &parts, &ctx)?;
            let (k4, _) = eval_derivative(&aug.clone().axpy(&k3, cfg.dt), &parts, &ctx)?;
            let sixth = cfg.dt / 6.0;
            let next = aug
                .clone()
                .axpy(&k1, sixth)
                .axpy(&k2, 2.0 * sixth)
                .axpy(&k3, 2.0 * sixth)
                .axpy(&k4, sixth);
            Ok((next, diag))
        })();

        let (mut next, diag) = match step {
            Ok(v) => v,
            Err(Error::SafetyViolation { .. }) => {
                log.status = TerminalStatus::SafetyViolation;
                log.first_violation_time.get_or_insert(t);
                log.pe = pe_diagnostic(&pe_history).ok();
                return Ok(log);
            }
            Err(Error::Contract(_)) => {
                // In-loop contract failures (projection ball escape, lost
                // positive-definiteness) are divergence in disguise.
                log.status = TerminalStatus::NumericalBlowup;
                log.pe = pe_diagnostic(&pe_history).ok();
                return Ok(log);
            }
        };
        if parts.mode.learns() {
            pe_history.push(PeSample {
                t,
                lambda: diag.lambda.clone(),
                lambda_extrap: diag.lambda_extrap.clone(),
            });
        }

        // Keep Γ symmetric against rounding drift.
        next.gamma = (&next.gamma + next.gamma.transpose()) * 0.5;

        if !next.is_finite() || next.max_abs() > BLOWUP_LIMIT {
            log.status = TerminalStatus::NumericalBlowup;
            log.pe = pe_diagnostic(&pe_history).ok();
            return Ok(log);
        }
        aug = next;
        let t_next = (k + 1) as f64 * cfg.dt;

        // Barrier-cost bookkeeping: refresh the last safe barrier value.
        if parts.mode == ControllerMode::RlBarrierCost && parts.lcbf.min_h(&aug.x) > H_GUARD {
            if let Ok(b) = parts.lcbf.value(&aug.x) {
                last_safe_b = b;
            }
        }

        // Control at the new grid point for the log and the identifier.
        let ctx_next = StepContext {
            extrap_points: &extrap_points,
            stack: &stack,
            last_safe_b,
        };
        match eval_derivative(&aug, &parts, &ctx_next) {
            Ok((_, diag_next)) => {
                if parts.mode.learns() && p > 0 && (k + 1) % cfg.sample_stride == 0 {
                    if let Some(entry) =
                        ident.accumulate(t_next, &aug.x, &diag_next.u_total, &parts.system, cfg.dt)?
                    {
                        stack.insert(entry);
                    }
                    ident.set_theta_hat(aug.theta.clone());
                }
                push_record(&mut log, t_next, &aug, &parts.lcbf, Some(&diag_next), stack.sigma_min());
            }
            Err(Error::SafetyViolation { .. }) => {
                push_record(&mut log, t_next, &aug, &parts.lcbf, None, stack.sigma_min());
                log.status = TerminalStatus::SafetyViolation;
                log.first_violation_time.get_or_insert(t_next);
                log.pe = pe_diagnostic(&pe_history).ok();
                return Ok(log);
            }
            Err(e) => return Err(e),
        }
    }

    if parts.mode.learns() && !pe_history.is_empty() {
        log.pe = pe_diagnostic(&pe_history).ok();
    }
    Ok(log)
}

/// Classic fixed-step RK4 for a plain autonomous state ODE. The closed-loop
/// engine uses the same scheme on the augmented state; this helper serves
/// open-loop checks and references.
pub fn integrate_rk4(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    dt: f64,
    steps: usize,
) -> DVector<f64> {
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (dt / 2.0)));
        let k3 = f(&(&x + &k2 * (dt / 2.0)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    x
}
