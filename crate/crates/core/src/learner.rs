//! Actor-critic machinery: running cost, local value/policy approximation on
//! the state-following basis, Bellman errors on and off the trajectory,
//! recursive-least-squares critic updates with a forgetting factor, and the
//! projected actor update.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::basis::{nu, StafBasis};
use crate::dynamics::ControlAffineSystem;
use crate::safety::LyapunovLikeCbf;
use crate::{Error, Result};

/// Half-width of the smooth projection boundary layer, relative to the
/// projection radius.
pub const PROJECTION_LAYER: f64 = 0.01;

/// Running-cost specification `r(x, u) = xᵀQx + uᵀRu + w_B·B(x)`, with
/// `w_B = 0` outside the barrier-augmented-cost mode.
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    barrier_weight: f64,
    barrier: Option<Arc<LyapunovLikeCbf>>,
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        barrier_weight: f64,
        barrier: Option<Arc<LyapunovLikeCbf>>,
    ) -> Result<Self> {
        check_spd("Q", &q)?;
        check_spd("R", &r)?;
        if barrier_weight < 0.0 {
            return Err(Error::contract("barrier weight must be nonnegative"));
        }
        if barrier_weight > 0.0 && barrier.is_none() {
            return Err(Error::contract(
                "a positive barrier weight requires a barrier",
            ));
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::contract("R is singular"))?;
        Ok(CostSpec {
            q,
            r,
            r_inv,
            barrier_weight,
            barrier,
        })
    }

    /// Plain quadratic cost.
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        CostSpec::new(q, r, 0.0, None)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn barrier_weight(&self) -> f64 {
        self.barrier_weight
    }

    pub fn barrier(&self) -> Option<&Arc<LyapunovLikeCbf>> {
        self.barrier.as_ref()
    }

    /// The quadratic part xᵀQx + uᵀRu.
    pub fn quadratic_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    /// Full running cost. In the barrier-augmented mode this fails with a
    /// safety violation when the state is outside the safe set.
    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let mut c = self.quadratic_cost(x, u);
        if self.barrier_weight > 0.0 {
            let b = self
                .barrier
                .as_ref()
                .expect("validated at construction")
                .value(x)?;
            c += self.barrier_weight * b;
        }
        Ok(c)
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::contract(format!("{name} must be square")));
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::contract(format!("{name} must be symmetric")));
    }
    let lmin = m.clone().symmetric_eigenvalues().min();
    if lmin <= 0.0 {
        return Err(Error::contract(format!(
            "{name} must be positive definite (λ_min = {lmin})"
        )));
    }
    Ok(())
}

/// Adapted quantities: critic weights, least-squares gain matrix, actor
/// weights, and the actor projection radius.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub w_c_hat: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub w_a_hat: DVector<f64>,
    pub w_a_bound: f64,
}

impl LearnerState {
    pub fn new(
        w_c_hat: DVector<f64>,
        gamma: DMatrix<f64>,
        w_a_hat: DVector<f64>,
        w_a_bound: f64,
    ) -> Result<Self> {
        let l = w_c_hat.len();
        if w_a_hat.len() != l || gamma.shape() != (l, l) {
            return Err(Error::contract("learner state dimensions disagree"));
        }
        check_spd("Γ", &gamma)?;
        if w_a_bound <= 0.0 {
            return Err(Error::contract("actor projection radius must be positive"));
        }
        if w_a_hat.norm() > w_a_bound * (1.0 + PROJECTION_LAYER) {
            return Err(Error::contract(
                "initial actor weights lie outside the projection ball",
            ));
        }
        Ok(LearnerState {
            w_c_hat,
            gamma,
            w_a_hat,
            w_a_bound,
        })
    }

    pub fn min_gamma_eigenvalue(&self) -> f64 {
        self.gamma.clone().symmetric_eigenvalues().min()
    }
}

/// Learning gains of the update laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerGains {
    pub k_c1: f64,
    pub k_c2: f64,
    pub k_a1: f64,
    pub k_a2: f64,
    pub gamma_c: f64,
    pub beta_c: f64,
    pub n_extrap: usize,
}

impl LearnerGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("k_c1", self.k_c1),
            ("k_c2", self.k_c2),
            ("k_a1", self.k_a1),
            ("k_a2", self.k_a2),
            ("gamma_c", self.gamma_c),
            ("beta_c", self.beta_c),
        ];
        for (name, v) in all {
            if v <= 0.0 {
                return Err(Error::contract(format!("gain {name} must be positive")));
            }
        }
        if self.n_extrap == 0 {
            return Err(Error::contract("n_extrap must be at least 1"));
        }
        Ok(())
    }
}

/// Normalized regressor: ω = ∇φ(x, c(x_anchor)) · (Y(x)θ̂ + g(x)u) and
/// ρ = 1 + γ_c·ωᵀω.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub omega: DVector<f64>,
    pub rho: f64,
}

impl Regressor {
    /// Λ = ωωᵀ/ρ².
    pub fn lambda(&self) -> DMatrix<f64> {
        let r2 = self.rho * self.rho;
        &self.omega * self.omega.transpose() / r2
    }
}

/// On-trajectory Bellman-error sample (ω, ρ, δ).
#[derive(Debug, Clone)]
pub struct BeSample {
    pub reg: Regressor,
    pub delta: f64,
}

/// One extrapolated evaluation: regressor, Bellman error, and the policy
/// gain matrix G_φ = ∇φ·G_R·∇φᵀ, all at the extrapolation point.
#[derive(Debug, Clone)]
pub struct ExtrapPoint {
    pub reg: Regressor,
    pub delta: f64,
    pub g_phi: DMatrix<f64>,
}

/// Approximate optimal policy k̂(y, x, Ŵ_a) = −½R⁻¹g(y)ᵀ∇φ(y, c(x))ᵀŴ_a.
pub fn approx_policy(
    basis: &StafBasis,
    y: &DVector<f64>,
    x_anchor: &DVector<f64>,
    w_a_hat: &DVector<f64>,
    system: &ControlAffineSystem,
    cost: &CostSpec,
) -> DVector<f64> {
    let g = system
        .eval_input_matrix(y)
        .expect("state dimension checked by caller");
    let grad = basis.grad_phi(y, x_anchor);
    cost.r_inv() * g.transpose() * grad.transpose() * w_a_hat * (-0.5)
}

/// Regressor at `x` with centers anchored at `x_anchor`, driven by the
/// identified drift and the supplied input.
pub fn regressor(
    basis: &StafBasis,
    x: &DVector<f64>,
    x_anchor: &DVector<f64>,
    u: &DVector<f64>,
    theta_hat: &DVector<f64>,
    system: &ControlAffineSystem,
    gamma_c: f64,
) -> Regressor {
    let f_hat = system
        .eval_drift_basis(x)
        .expect("state dimension checked by caller")
        * theta_hat;
    let gu = system
        .eval_input_matrix(x)
        .expect("state dimension checked by caller")
        * u;
    let omega = basis.grad_phi(x, x_anchor) * (f_hat + gu);
    let rho = 1.0 + gamma_c * omega.dot(&omega);
    Regressor { omega, rho }
}

/// Bellman error δ = r(x, u) + Ŵ_cᵀω. Serves both the on-trajectory
/// evaluation (u = applied control) and the extrapolated one (u =
/// exploratory policy). Fails only if the running cost does.
pub fn bellman_error(
    spec: &CostSpec,
    reg: &Regressor,
    w_c_hat: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    Ok(spec.running_cost(x, u)? + w_c_hat.dot(&reg.omega))
}

/// G_R(y) = g(y)·R⁻¹·g(y)ᵀ.
pub fn input_gain_matrix(
    system: &ControlAffineSystem,
    cost: &CostSpec,
    y: &DVector<f64>,
) -> DMatrix<f64> {
    let g = system
        .eval_input_matrix(y)
        .expect("state dimension checked by caller");
    &g * cost.r_inv() * g.transpose()
}

/// G_φ(y, x) = ∇φ(y, c(x))·G_R(y)·∇φ(y, c(x))ᵀ.
pub fn policy_gain_matrix(
    basis: &StafBasis,
    y: &DVector<f64>,
    x_anchor: &DVector<f64>,
    system: &ControlAffineSystem,
    cost: &CostSpec,
) -> DMatrix<f64> {
    let grad = basis.grad_phi(y, x_anchor);
    &grad * input_gain_matrix(system, cost, y) * grad.transpose()
}

/// Draw `n` points uniformly from the axis-aligned hypercube of side ν(x)
/// centered at `x`. At the origin the cube degenerates to a point.
pub fn sample_extrap_points(
    x: &DVector<f64>,
    rng: &mut impl Rng,
    n: usize,
) -> Vec<DVector<f64>> {
    let side = nu(x);
    (0..n)
        .map(|_| {
            let offset =
                DVector::from_iterator(x.len(), (0..x.len()).map(|_| rng.gen::<f64>() - 0.5));
            x + offset * side
        })
        .collect()
}

/// Critic update: the recursive-least-squares law
/// `Ŵ_c' = −Γ(k_c1·ωδ_t/ρ² + (k_c2/N)·Σᵢ ωᵢδᵢ/ρᵢ²)` with gain dynamics
/// `Γ' = β_cΓ − Γ(k_c1Λ + (k_c2/N)ΣᵢΛᵢ)Γ`.
pub fn critic_dot(
    state: &LearnerState,
    gains: &LearnerGains,
    on_traj: &BeSample,
    extrap: &[ExtrapPoint],
) -> (DVector<f64>, DMatrix<f64>) {
    assert!(!extrap.is_empty(), "at least one extrapolation point required");
    let n = extrap.len() as f64;

    let on_r2 = on_traj.reg.rho * on_traj.reg.rho;
    let mut drive = &on_traj.reg.omega * (gains.k_c1 * on_traj.delta / on_r2);
    let mut lam = on_traj.reg.lambda() * gains.k_c1;
    for p in extrap {
        let r2 = p.reg.rho * p.reg.rho;
        drive += &p.reg.omega * (gains.k_c2 / n * p.delta / r2);
        lam += p.reg.lambda() * (gains.k_c2 / n);
    }
    let w_c_dot = -(&state.gamma * drive);
    let gamma_dot = &state.gamma * gains.beta_c - &state.gamma * lam * &state.gamma;
    (w_c_dot, gamma_dot)
}

/// Actor update: the gradient field of the actor regularization and the
/// BE-coupling terms, passed through the smooth projection.
pub fn actor_dot(
    state: &LearnerState,
    gains: &LearnerGains,
    g_phi: &DMatrix<f64>,
    on_traj: &Regressor,
    extrap: &[ExtrapPoint],
) -> Result<DVector<f64>> {
    assert!(!extrap.is_empty(), "at least one extrapolation point required");
    let n = extrap.len() as f64;

    let mut field = (&state.w_a_hat - &state.w_c_hat) * (-gains.k_a1)
        - &state.w_a_hat * gains.k_a2;
    let on_r2 = on_traj.rho * on_traj.rho;
    field += g_phi.transpose()
        * &state.w_a_hat
        * (gains.k_c1 / (4.0 * on_r2) * on_traj.omega.dot(&state.w_c_hat));
    for p in extrap {
        let r2 = p.reg.rho * p.reg.rho;
        field += p.g_phi.transpose()
            * &state.w_a_hat
            * (gains.k_c2 / (4.0 * n * r2) * p.reg.omega.dot(&state.w_c_hat));
    }
    smooth_project(&state.w_a_hat, &field, state.w_a_bound)
}

/// Smooth projection keeping `‖w‖ ≤ bound·(1 + PROJECTION_LAYER)` under
/// integration: outward radial components of `field` are faded out across
/// the boundary layer `[bound·(1−ε), bound·(1+ε)]`.
pub fn smooth_project(
    w: &DVector<f64>,
    field: &DVector<f64>,
    bound: f64,
) -> Result<DVector<f64>> {
    if bound <= 0.0 {
        return Err(Error::contract("projection radius must be positive"));
    }
    let norm = w.norm();
    let lo = bound * (1.0 - PROJECTION_LAYER);
    let hi = bound * (1.0 + PROJECTION_LAYER);
    if norm > hi * (1.0 + 1e-9) {
        return Err(Error::contract(format!(
            "weights left the projection ball: ‖w‖ = {norm}, limit {hi}"
        )));
    }
    let radial = w.dot(field);
    if norm <= lo || radial <= 0.0 {
        return Ok(field.clone());
    }
    let s = ((norm - lo) / (hi - lo)).clamp(0.0, 1.0);
    let sigma = s * s * (3.0 - 2.0 * s);
    Ok(field - w * (sigma * radial / (norm * norm)))
}

/// One logged excitation sample: Λ(t) on the trajectory and the mean
/// extrapolated N⁻¹ΣᵢΛᵢ(t).
#[derive(Debug, Clone)]
pub struct PeSample {
    pub t: f64,
    pub lambda: DMatrix<f64>,
    pub lambda_extrap: DMatrix<f64>,
}

/// Empirical excitation levels over a window (trapezoidal integrals).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeEstimates {
    /// λ_min(∫ Λ dτ)
    pub c1: f64,
    /// λ_min(∫ N⁻¹ΣΛᵢ dτ)
    pub c2: f64,
    /// min over the window of λ_min(N⁻¹ΣΛᵢ)
    pub c3: f64,
}

/// Excitation diagnostics over the recorded window. Diagnostic only; the
/// closed loop never gates on these values.
pub fn pe_diagnostic(samples: &[PeSample]) -> Result<PeEstimates> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("excitation window is empty"))?;
    let l = first.lambda.nrows();
    let mut int_lambda = DMatrix::zeros(l, l);
    let mut int_extrap = DMatrix::zeros(l, l);
    let mut c3 = f64::INFINITY;
    for s in samples {
        c3 = c3.min(s.lambda_extrap.clone().symmetric_eigenvalues().min());
    }
    for pair in samples.windows(2) {
        let half = 0.5 * (pair[1].t - pair[0].t);
        int_lambda += (&pair[0].lambda + &pair[1].lambda) * half;
        int_extrap += (&pair[0].lambda_extrap + &pair[1].lambda_extrap) * half;
    }
    // The integrands are PSD, so negative eigenvalues can only be rounding.
    Ok(PeEstimates {
        c1: int_lambda.symmetric_eigenvalues().min().max(0.0),
        c2: int_extrap.symmetric_eigenvalues().min().max(0.0),
        c3: c3.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::StafBasis;
    use crate::safety::parabolic_lcbf;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    fn scalar_state(w_c: f64, gamma: f64, w_a: f64) -> LearnerState {
        LearnerState::new(
            DVector::from_vec(vec![w_c]),
            DMatrix::from_row_slice(1, 1, &[gamma]),
            DVector::from_vec(vec![w_a]),
            10.0,
        )
        .unwrap()
    }

    fn gains(k_c1: f64, k_c2: f64, k_a1: f64, k_a2: f64, gamma_c: f64, beta_c: f64) -> LearnerGains {
        LearnerGains {
            k_c1,
            k_c2,
            k_a1,
            k_a2,
            gamma_c,
            beta_c,
            n_extrap: 1,
        }
    }

    fn scalar_reg(omega: f64, rho: f64) -> Regressor {
        Regressor {
            omega: DVector::from_vec(vec![omega]),
            rho,
        }
    }

    fn quadratic_cost_2d() -> CostSpec {
        CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn running_cost_matches_hand_values() {
        let spec = quadratic_cost_2d();
        let c = spec
            .running_cost(&v2(1.0, 1.0), &DVector::from_vec(vec![2.0]))
            .unwrap();
        assert_abs_diff_eq!(c, 6.0, epsilon = 1e-14);
        assert_eq!(
            spec.running_cost(&v2(0.0, 0.0), &DVector::zeros(1)).unwrap(),
            0.0
        );
    }

    #[test]
    fn augmented_cost_composes_with_barrier() {
        let lcbf = Arc::new(parabolic_lcbf(-1.0).unwrap());
        let spec = CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            20.0,
            Some(lcbf),
        )
        .unwrap();
        let x = v2(0.5, 0.3);
        let b = (1.0 / 0.41 - 1.0_f64).powi(2);
        let c = spec.running_cost(&x, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(c, 0.34 + 20.0 * b, max_relative = 1e-12);
        assert_abs_diff_eq!(c, 41.756, epsilon = 1e-3);
        // Outside the set the augmented cost is a safety violation.
        assert!(spec
            .running_cost(&v2(2.0, 0.0), &DVector::zeros(1))
            .is_err());
    }

    #[test]
    fn cost_spec_validates_pd_and_barrier_pairing() {
        let bad_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(CostSpec::quadratic(bad_q, DMatrix::identity(1, 1)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(CostSpec::quadratic(asym, DMatrix::identity(2, 2)).is_err());
        assert!(CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            20.0,
            None
        )
        .is_err());
    }

    #[test]
    fn policy_is_zero_for_zero_weights_and_at_origin() {
        let basis = StafBasis::equilateral_triangle();
        let sys = ControlAffineSystem::single_integrator();
        let cost = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let x = v2(1.3, -0.4);
        let u = approx_policy(&basis, &x, &x, &DVector::zeros(3), &sys, &cost);
        assert_eq!(u.amax(), 0.0);
        let zero = v2(0.0, 0.0);
        let u0 = approx_policy(&basis, &zero, &zero, &v3(1.0, 2.0, 3.0), &sys, &cost);
        assert_eq!(u0.amax(), 0.0);
    }

    #[test]
    fn integrator_policy_with_exact_weights_is_lqr_optimal() {
        // Independent oracle: for ẋ = u, Q = R = I the Riccati equation
        // AᵀP + PA − PBR⁻¹BᵀP + Q = 0 reduces to P² = I, so P = I and
        // k*(x) = −R⁻¹BᵀPx = −x.
        let p = DMatrix::<f64>::identity(2, 2);
        let riccati_residual = (-&p * &p + DMatrix::identity(2, 2)).amax();
        assert_eq!(riccati_residual, 0.0);

        let basis = StafBasis::equilateral_triangle();
        let sys = ControlAffineSystem::single_integrator();
        let cost = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let w = v3(2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng as _;
        for _ in 0..100 {
            let x = v2(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let u = approx_policy(&basis, &x, &x, &w, &sys, &cost);
            let k_star = -&p * &x;
            assert!((u - k_star).amax() <= 1e-12);
        }
    }

    #[test]
    fn regressor_matches_hand_values() {
        let basis = StafBasis::equilateral_triangle();
        let sys = ControlAffineSystem::single_integrator();
        // Zero dynamics drive: ω = 0, ρ = 1.
        let r = regressor(
            &basis,
            &v2(1.0, 0.0),
            &v2(1.0, 0.0),
            &v2(0.0, 0.0),
            &DVector::zeros(0),
            &sys,
            1.0,
        );
        assert_eq!(r.omega.amax(), 0.0);
        assert_eq!(r.rho, 1.0);

        // Anchor at the origin zeroes every center.
        let r = regressor(
            &basis,
            &v2(0.7, -0.3),
            &v2(0.0, 0.0),
            &v2(1.0, 1.0),
            &DVector::zeros(0),
            &sys,
            1.0,
        );
        assert_eq!(r.omega.amax(), 0.0);

        // Hand evaluation from the grad_phi rows at x = (1, 0), u = (−1, 0).
        let r = regressor(
            &basis,
            &v2(1.0, 0.0),
            &v2(1.0, 0.0),
            &v2(-1.0, 0.0),
            &DVector::zeros(0),
            &sys,
            1.0,
        );
        assert_abs_diff_eq!(r.omega[0], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.omega[1], -0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(r.omega[2], -0.75, epsilon = 1e-14);
        assert_relative_eq!(r.rho, 4.375, max_relative = 1e-14);
    }

    #[test]
    fn bellman_error_reduces_to_cost_for_zero_critic() {
        let spec = quadratic_cost_2d();
        let reg = Regressor {
            omega: v3(0.4, -0.2, 0.9),
            rho: 1.5,
        };
        let x = v2(0.3, -0.7);
        let u = DVector::from_vec(vec![0.5]);
        let d = bellman_error(&spec, &reg, &DVector::zeros(3), &x, &u).unwrap();
        assert_relative_eq!(d, spec.running_cost(&x, &u).unwrap(), max_relative = 1e-15);
        let zero = bellman_error(
            &spec,
            &scalar_reg(0.0, 1.0),
            &DVector::zeros(1),
            &v2(0.0, 0.0),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn integrator_bellman_error_vanishes_with_exact_weights() {
        let basis = StafBasis::equilateral_triangle();
        let sys = ControlAffineSystem::single_integrator();
        let cost = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let w = v3(2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng as _;
        for _ in 0..100 {
            let x = v2(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let u = approx_policy(&basis, &x, &x, &w, &sys, &cost);
            let reg = regressor(&basis, &x, &x, &u, &DVector::zeros(0), &sys, 1.0);
            let delta = bellman_error(&cost, &reg, &w, &x, &u).unwrap();
            assert!(delta.abs() <= 1e-10, "δ = {delta} at x = {x}");
        }
    }

    #[test]
    fn extrap_sampling_respects_support_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let at_origin = sample_extrap_points(&v2(0.0, 0.0), &mut rng, 5);
        for p in &at_origin {
            assert_eq!(p.amax(), 0.0);
        }

        let x = v2(1.0, 0.0);
        let mut rng_a = ChaCha8Rng::seed_from_u64(42);
        let mut rng_b = ChaCha8Rng::seed_from_u64(42);
        let a = sample_extrap_points(&x, &mut rng_a, 16);
        let b = sample_extrap_points(&x, &mut rng_b, 16);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa, pb); // bitwise reproducible
        }
        let side = nu(&x);
        for p in &a {
            assert!((p - &x).amax() <= side / 2.0 + 1e-15);
        }
    }

    #[test]
    fn critic_dot_matches_hand_values() {
        // All δ = 0 ⇒ no critic motion.
        let st = scalar_state(1.0, 2.0, 1.0);
        let g = gains(1.0, 1.0, 1.0, 0.1, 1.0, 0.5);
        let on = BeSample {
            reg: scalar_reg(1.0, 1.0),
            delta: 0.0,
        };
        let ex = vec![ExtrapPoint {
            reg: scalar_reg(0.5, 1.25),
            delta: 0.0,
            g_phi: DMatrix::zeros(1, 1),
        }];
        let (wc, _) = critic_dot(&st, &g, &on, &ex);
        assert_eq!(wc.amax(), 0.0);

        // ω = ωᵢ = 0 ⇒ Γ' = β_c·Γ.
        let on0 = BeSample {
            reg: scalar_reg(0.0, 1.0),
            delta: 3.0,
        };
        let ex0 = vec![ExtrapPoint {
            reg: scalar_reg(0.0, 1.0),
            delta: 3.0,
            g_phi: DMatrix::zeros(1, 1),
        }];
        let (_, gd) = critic_dot(&st, &g, &on0, &ex0);
        assert_relative_eq!(gd[(0, 0)], 0.5 * 2.0, max_relative = 1e-15);

        // Scalar case frozen from the update laws: Γ = 2, k_c1 = 1,
        // extrapolation contributes zero, ω = 1, ρ = 1, δ_t = 3, β_c → 0:
        // Ŵ_c' = −Γ·k_c1·ωδ/ρ² = −6 and Γ' = −Γ·k_c1·Λ·Γ = −4.
        let st = scalar_state(0.0, 2.0, 0.0);
        let g = LearnerGains {
            k_c1: 1.0,
            k_c2: 1.0,
            k_a1: 1.0,
            k_a2: 0.1,
            gamma_c: 1e-12,
            beta_c: 1e-300,
            n_extrap: 1,
        };
        let on = BeSample {
            reg: scalar_reg(1.0, 1.0),
            delta: 3.0,
        };
        let ex = vec![ExtrapPoint {
            reg: scalar_reg(0.0, 1.0),
            delta: 0.0,
            g_phi: DMatrix::zeros(1, 1),
        }];
        let (wc, gd) = critic_dot(&st, &g, &on, &ex);
        assert_relative_eq!(wc[0], -6.0, max_relative = 1e-12);
        assert_relative_eq!(gd[(0, 0)], -4.0, max_relative = 1e-12);
    }

    #[test]
    fn actor_dot_matches_hand_values() {
        let g = gains(0.1, 1.0, 1.0, 0.1, 1.0, 0.001);
        // Ŵ_a = Ŵ_c = 0 ⇒ zero field.
        let st = scalar_state(0.0, 1.0, 0.0);
        let on = scalar_reg(0.3, 1.1);
        let ex = vec![ExtrapPoint {
            reg: scalar_reg(0.2, 1.0),
            delta: 0.0,
            g_phi: DMatrix::zeros(1, 1),
        }];
        let out = actor_dot(&st, &g, &DMatrix::zeros(1, 1), &on, &ex).unwrap();
        assert_eq!(out.amax(), 0.0);

        // Ŵ_c = 0, G terms zero ⇒ pure damping −(k_a1 + k_a2)Ŵ_a.
        let st = scalar_state(0.0, 1.0, 0.7);
        let out = actor_dot(&st, &g, &DMatrix::zeros(1, 1), &on, &ex).unwrap();
        assert_relative_eq!(out[0], -(1.0 + 0.1) * 0.7, max_relative = 1e-14);

        // Frozen scalar case: k_a1 = 1, k_a2 = 0.1, Ŵ_a = 2, Ŵ_c = 1,
        // G_φ = 4, ω = 1, ρ = 1, k_c1 = 0.1, no extrapolation contribution:
        // v = −1·(2−1) − 0.1·2 + (0.1/4)·4·2·1·1 = −1.0
        let st = scalar_state(1.0, 1.0, 2.0);
        let g = gains(0.1, 1.0, 1.0, 0.1, 1.0, 0.001);
        let on = scalar_reg(1.0, 1.0);
        let ex = vec![ExtrapPoint {
            reg: scalar_reg(0.0, 1.0),
            delta: 0.0,
            g_phi: DMatrix::zeros(1, 1),
        }];
        let out = actor_dot(&st, &g, &DMatrix::from_row_slice(1, 1, &[4.0]), &on, &ex).unwrap();
        assert_relative_eq!(out[0], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn smooth_projection_branches() {
        let bound = 2.0;
        // Interior: untouched.
        let w = v2(1.0, 0.0) * (bound / 2.0);
        let f = v2(5.0, -3.0);
        assert_eq!(smooth_project(&w, &f, bound).unwrap(), f);

        // On the outer boundary with a fully radial outward field: zeroed.
        let w = v2(0.0, bound * (1.0 + PROJECTION_LAYER));
        let f = w.clone();
        let out = smooth_project(&w, &f, bound).unwrap();
        assert!(out.amax() < 1e-12);

        // Inward field on the outer boundary: untouched.
        let f_in = -w.clone();
        assert_eq!(smooth_project(&w, &f_in, bound).unwrap(), f_in);

        // Beyond the layer: contract violation.
        let w_far = v2(0.0, bound * (1.0 + PROJECTION_LAYER) * 1.01);
        assert!(smooth_project(&w_far, &f_in, bound).is_err());
    }

    #[test]
    fn projected_actor_flow_stays_in_the_ball_under_rk4() {
        // A constant strong outward field with swirl; the projected flow
        // must remain inside bound·(1 + ε) from any admissible start.
        let bound = 1.0;
        let field = |w: &DVector<f64>| {
            let outward = w * 3.0 + v2(2.0, 1.0);
            smooth_project(w, &outward, bound).unwrap()
        };
        let mut w = v2(0.6, -0.8) * 0.999; // starts with ‖w‖ ≈ 1 = bound
        let dt = 1e-3;
        for _ in 0..20_000 {
            let k1 = field(&w);
            let k2 = field(&(&w + &k1 * (dt / 2.0)));
            let k3 = field(&(&w + &k2 * (dt / 2.0)));
            let k4 = field(&(&w + &k3 * dt));
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            assert!(w.norm() <= bound * 1.01 + 1e-12);
        }
    }

    #[test]
    fn pe_diagnostic_matches_hand_values() {
        assert!(pe_diagnostic(&[]).is_err());

        let zero = DMatrix::zeros(2, 2);
        let eye = DMatrix::identity(2, 2);
        // Λ ≡ 0, extrapolated Λ ≡ I over T = 3: c1 = 0, c2 = 3, c3 = 1.
        let samples: Vec<PeSample> = (0..=30)
            .map(|k| PeSample {
                t: k as f64 * 0.1,
                lambda: zero.clone(),
                lambda_extrap: eye.clone(),
            })
            .collect();
        let est = pe_diagnostic(&samples).unwrap();
        assert_relative_eq!(est.c1, 0.0, epsilon = 1e-14);
        assert_relative_eq!(est.c2, 3.0, max_relative = 1e-12);
        assert_relative_eq!(est.c3, 1.0, max_relative = 1e-14);
    }

    /// Independent scalar transcription of the update laws, kept free of any
    /// matrix code so it can serve as an oracle for the L = 1 case.
    mod scalar_oracle {
        pub struct Out {
            pub w_c_dot: f64,
            pub gamma_dot: f64,
            pub w_a_field: f64,
        }

        #[allow(clippy::too_many_arguments)]
        pub fn eval(
            w_c: f64,
            gamma: f64,
            w_a: f64,
            k_c1: f64,
            k_c2: f64,
            k_a1: f64,
            k_a2: f64,
            beta_c: f64,
            omega: f64,
            rho: f64,
            delta_t: f64,
            omega_i: f64,
            rho_i: f64,
            delta_i: f64,
            g_phi: f64,
            g_phi_i: f64,
        ) -> Out {
            let w_c_dot = -gamma
                * (k_c1 * omega * delta_t / (rho * rho)
                    + k_c2 * omega_i * delta_i / (rho_i * rho_i));
            let gamma_dot = beta_c * gamma
                - gamma
                    * (k_c1 * omega * omega / (rho * rho)
                        + k_c2 * omega_i * omega_i / (rho_i * rho_i))
                    * gamma;
            let w_a_field = -k_a1 * (w_a - w_c) - k_a2 * w_a
                + k_c1 / (4.0 * rho * rho) * g_phi * w_a * omega * w_c
                + k_c2 / (4.0 * rho_i * rho_i) * g_phi_i * w_a * omega_i * w_c;
            Out {
                w_c_dot,
                gamma_dot,
                w_a_field,
            }
        }
    }

    #[test]
    fn scalar_case_matches_independent_symbolic_oracle() {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let w_c = rng.gen_range(-2.0..2.0);
            let gamma = rng.gen_range(0.1..5.0);
            let w_a = rng.gen_range(-2.0..2.0);
            let k_c1 = rng.gen_range(0.01..2.0);
            let k_c2 = rng.gen_range(0.01..2.0);
            let k_a1 = rng.gen_range(0.01..2.0);
            let k_a2 = rng.gen_range(0.01..2.0);
            let beta_c = rng.gen_range(0.0001..0.1);
            let omega = rng.gen_range(-2.0..2.0);
            let gamma_c = rng.gen_range(0.1..2.0);
            let rho = 1.0 + gamma_c * omega * omega;
            let delta_t = rng.gen_range(-3.0..3.0);
            let omega_i = rng.gen_range(-2.0..2.0);
            let rho_i = 1.0 + gamma_c * omega_i * omega_i;
            let delta_i = rng.gen_range(-3.0..3.0);
            let g_phi = rng.gen_range(0.0..4.0);
            let g_phi_i = rng.gen_range(0.0..4.0);

            let oracle = scalar_oracle::eval(
                w_c, gamma, w_a, k_c1, k_c2, k_a1, k_a2, beta_c, omega, rho, delta_t, omega_i,
                rho_i, delta_i, g_phi, g_phi_i,
            );

            let st = scalar_state(w_c, gamma, w_a);
            let g = LearnerGains {
                k_c1,
                k_c2,
                k_a1,
                k_a2,
                gamma_c,
                beta_c,
                n_extrap: 1,
            };
            let on = BeSample {
                reg: scalar_reg(omega, rho),
                delta: delta_t,
            };
            let ex = vec![ExtrapPoint {
                reg: scalar_reg(omega_i, rho_i),
                delta: delta_i,
                g_phi: DMatrix::from_row_slice(1, 1, &[g_phi_i]),
            }];
            let (wc, gd) = critic_dot(&st, &g, &on, &ex);
            assert_relative_eq!(wc[0], oracle.w_c_dot, max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(
                gd[(0, 0)],
                oracle.gamma_dot,
                max_relative = 1e-12,
                epsilon = 1e-12
            );
            let ad = actor_dot(
                &st,
                &g,
                &DMatrix::from_row_slice(1, 1, &[g_phi]),
                &scalar_reg(omega, rho),
                &ex,
            )
            .unwrap();
            // ‖w_a‖ < bound/2 here, so the projection is the identity.
            assert_relative_eq!(ad[0], oracle.w_a_field, max_relative = 1e-12, epsilon = 1e-12);
        }
    }
}
