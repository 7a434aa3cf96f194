//! Candidate control barrier functions over sets `{h ≥ 0}`, their recentered
//! Lyapunov-like form `B(x) = (b(x) − b(0))²`, and the safeguarding
//! controller assembled from `∇B`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::{Error, Result};

/// Values of `h` at or below this are treated as boundary contact: the
/// reciprocal barrier `1/h` is no longer meaningfully finite there.
pub const H_GUARD: f64 = 1e-9;

type ScalarField = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradField = Box<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;

enum BarrierForm {
    /// b = 1/h, ∇b = −∇h/h². The only bundled form.
    Reciprocal,
    /// User-supplied (b, ∇b) pair for barriers that are not reciprocal in h.
    Custom { b: ScalarField, grad_b: GradField },
}

/// A candidate CBF: the set-defining function `h` with its gradient and a
/// barrier `b` that grows without bound as `h ↓ 0`.
pub struct CandidateCbf {
    h: ScalarField,
    grad_h: GradField,
    form: BarrierForm,
}

impl CandidateCbf {
    /// Reciprocal barrier over `{h ≥ 0}`.
    pub fn reciprocal(
        h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_h: impl Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync + 'static,
    ) -> Self {
        CandidateCbf {
            h: Box::new(h),
            grad_h: Box::new(grad_h),
            form: BarrierForm::Reciprocal,
        }
    }

    /// Candidate CBF with an explicit barrier pair `(b, ∇b)`.
    pub fn with_barrier(
        h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_h: impl Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync + 'static,
        b: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_b: impl Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync + 'static,
    ) -> Self {
        CandidateCbf {
            h: Box::new(h),
            grad_h: Box::new(grad_h),
            form: BarrierForm::Custom {
                b: Box::new(b),
                grad_b: Box::new(grad_b),
            },
        }
    }

    pub fn h(&self, x: &DVector<f64>) -> f64 {
        (self.h)(x)
    }

    pub fn grad_h(&self, x: &DVector<f64>) -> RowDVector<f64> {
        (self.grad_h)(x)
    }

    /// Barrier value; only meaningful where `h(x) > 0`.
    fn b(&self, x: &DVector<f64>) -> f64 {
        match &self.form {
            BarrierForm::Reciprocal => 1.0 / (self.h)(x),
            BarrierForm::Custom { b, .. } => b(x),
        }
    }

    fn grad_b(&self, x: &DVector<f64>) -> RowDVector<f64> {
        match &self.form {
            BarrierForm::Reciprocal => {
                let h = (self.h)(x);
                (self.grad_h)(x) * (-1.0 / (h * h))
            }
            BarrierForm::Custom { grad_b, .. } => grad_b(x),
        }
    }
}

struct LcbfComponent {
    cbf: CandidateCbf,
    b_at_origin: f64,
}

/// Recentered Lyapunov-like CBF `B(x) = Σᵢ (bᵢ(x) − bᵢ(0))²`.
///
/// A single-set LCBF has one component; composing several safe sets sums
/// their components, which keeps `B(0) = 0` and `∇B(0) = 0`.
pub struct LyapunovLikeCbf {
    components: Vec<LcbfComponent>,
}

/// Which variant of the safeguarding controller to apply.
pub enum SafeguardMode<'a> {
    /// `k_b(x) = −c_b · gᵀ∇Bᵀ`.
    Direct,
    /// `k_b(x) = −(c_b/2) · R⁻¹ gᵀ∇Bᵀ`, the form composed with the learned
    /// policy; `R` is the control-effort weight of the running cost.
    CostWeighted(&'a DMatrix<f64>),
}

impl LyapunovLikeCbf {
    /// Build a single-set LCBF over states of the given dimension. Fails if
    /// the origin is not strictly inside the set (`h(0) ≤ 0`), since `b(0)`
    /// must be finite.
    pub fn new(cbf: CandidateCbf, state_dim: usize) -> Result<Self> {
        let zero = DVector::zeros(state_dim);
        let h0 = cbf.h(&zero);
        if h0 <= H_GUARD {
            return Err(Error::contract(format!(
                "origin is not strictly inside the safe set: h(0) = {h0}"
            )));
        }
        let b_at_origin = cbf.b(&zero);
        Ok(LyapunovLikeCbf {
            components: vec![LcbfComponent { cbf, b_at_origin }],
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Smallest `h` over the composed sets; safety requires it positive.
    pub fn min_h(&self, x: &DVector<f64>) -> f64 {
        self.components
            .iter()
            .map(|c| c.cbf.h(x))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_interior(&self, x: &DVector<f64>) -> Result<()> {
        for c in &self.components {
            let h = c.cbf.h(x);
            if h <= H_GUARD {
                return Err(Error::safety(x, h));
            }
        }
        Ok(())
    }

    /// B(x) = Σᵢ (bᵢ(x) − bᵢ(0))².
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_interior(x)?;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let d = c.cbf.b(x) - c.b_at_origin;
                d * d
            })
            .sum())
    }

    /// ∇B(x) = Σᵢ 2(bᵢ(x) − bᵢ(0))·∇bᵢ(x), a row vector.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        self.check_interior(x)?;
        let mut grad = RowDVector::zeros(x.len());
        for c in &self.components {
            let d = c.cbf.b(x) - c.b_at_origin;
            grad += c.cbf.grad_b(x) * (2.0 * d);
        }
        Ok(grad)
    }
}

/// Safeguarding controller from the LCBF gradient.
///
/// `Direct` returns `−c_b·gᵀ∇Bᵀ`; `CostWeighted(R)` returns
/// `−(c_b/2)·R⁻¹gᵀ∇Bᵀ`. Both vanish at the origin because `∇B(0) = 0`.
pub fn safeguard_control(
    lcbf: &LyapunovLikeCbf,
    x: &DVector<f64>,
    g_at_x: &DMatrix<f64>,
    c_b: f64,
    mode: SafeguardMode<'_>,
) -> Result<DVector<f64>> {
    let grad_b = lcbf.gradient(x)?;
    let descent = g_at_x.transpose() * grad_b.transpose();
    match mode {
        SafeguardMode::Direct => Ok(descent * (-c_b)),
        SafeguardMode::CostWeighted(r) => {
            let m =r.nrows();
            if r.ncols() != m || !is_spd(r) {
                return Err(Error::contract(
                    "safeguard weight must be symmetric positive definite",
                ));
            }
            let r_inv = r
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::contract("safeguard weight is singular"))?;
            Ok(r_inv * descent * (-c_b / 2.0))
        }
    }
}

/// Sum-compose several LCBFs into one. Gradients and values add.
pub fn compose_lcbfs(parts: Vec<LyapunovLikeCbf>) -> Result<LyapunovLikeCbf> {
    if parts.is_empty() {
        return Err(Error::contract("cannot compose an empty list of LCBFs"));
    }
    let components = parts
        .into_iter()
        .flat_map(|p| p.components)
        .collect::<Vec<_>>();
    Ok(LyapunovLikeCbf { components })
}

/// Parabolic safe set of the nonlinear example: `h(x) = p·x₂² − x₁ + 1`
/// with `p = −1` (convex set) or `p = +1` (nonconvex set).
pub fn parabolic_lcbf(p: f64) -> Result<LyapunovLikeCbf> {
    let cbf = CandidateCbf::reciprocal(
        move |x| p * x[1] * x[1] - x[0] + 1.0,
        move |x| RowDVector::from_vec(vec![-1.0, 2.0 * p * x[1]]),
    );
    LyapunovLikeCbf::new(cbf, 2)
}

/// Disk-obstacle safe set: `h(x) = ‖x − x_o‖² − r_o²`.
pub fn obstacle_lcbf(center: [f64; 2], radius: f64) -> Result<LyapunovLikeCbf> {
    let [cx, cy] = center;
    let r2 = radius * radius;
    let cbf = CandidateCbf::reciprocal(
        move |x| {
            let dx = x[0] - cx;
            let dy = x[1] - cy;
            dx * dx + dy * dy - r2
        },
        move |x| RowDVector::from_vec(vec![2.0 * (x[0] - cx), 2.0 * (x[1] - cy)]),
    );
    LyapunovLikeCbf::new(cbf, 2)
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let sym_err = (m - m.transpose()).amax();
    if sym_err > 1e-12 * (1.0 + m.amax()) {
        return false;
    }
    m.clone().symmetric_eigenvalues().iter().all(|&l| l > 0.0)
}
