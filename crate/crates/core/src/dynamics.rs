//! Control-affine plants `ẋ = f(x) + g(x)u` and their structured drift
//! parametrization `f(x) = Y(x)θ`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

type VectorField = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixField = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A control-affine plant with a drift that is linear in unknown weights:
/// `f(x) = Y(x)·θ`. A plant with `param_dim() == 0` has known drift and
/// skips system identification entirely.
pub struct ControlAffineSystem {
    name: String,
    state_dim: usize,
    input_dim: usize,
    param_dim: usize,
    drift: VectorField,
    input_matrix: MatrixField,
    drift_basis: MatrixField,
    true_weights: DVector<f64>,
}

impl ControlAffineSystem {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    /// True drift weights θ. Used by the plant simulation and by tests;
    /// the learner only ever sees its own estimate.
    pub fn true_weights(&self) -> &DVector<f64> {
        &self.true_weights
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::contract(format!(
                "state dimension mismatch: system '{}' has n = {}, got {}",
                self.name,
                self.state_dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// f(x).
    pub fn eval_drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok((self.drift)(x))
    }

    /// g(x), an n×m matrix.
    pub fn eval_input_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        Ok((self.input_matrix)(x))
    }

    /// Y(x), an n×p matrix with Y(x)·θ = f(x) for the bundled systems.
    pub fn eval_drift_basis(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        Ok((self.drift_basis)(x))
    }

    /// The nonlinear example: n = 2, m = 1,
    /// f(x) = (−0.6x₁ − x₂, x₁³), g(x) = (0, x₂)ᵀ,
    /// Y(x) = [x₁, x₂, 0; 0, 0, x₁³], θ = (−0.6, −1, 1).
    pub fn nonlinear_example(name: &str) -> Self {
        ControlAffineSystem {
            name: name.to_string(),
            state_dim: 2,
            input_dim: 1,
            param_dim: 3,
            drift: Box::new(|x| {
                DVector::from_vec(vec![-0.6 * x[0] - x[1], x[0].powi(3)])
            }),
            input_matrix: Box::new(|x| DMatrix::from_column_slice(2, 1, &[0.0, x[1]])),
            drift_basis: Box::new(|x| {
                DMatrix::from_row_slice(2, 3, &[x[0], x[1], 0.0, 0.0, 0.0, x[0].powi(3)])
            }),
            true_weights: DVector::from_vec(vec![-0.6, -1.0, 1.0]),
        }
    }

    /// Two-dimensional single integrator ẋ = u. Drift is identically zero
    /// and known, so the drift basis is empty (p = 0).
    pub fn single_integrator() -> Self {
        ControlAffineSystem {
            name: "single_integrator".to_string(),
            state_dim: 2,
            input_dim: 2,
            param_dim: 0,
            drift: Box::new(|_| DVector::zeros(2)),
            input_matrix: Box::new(|_| DMatrix::identity(2, 2)),
            drift_basis: Box::new(|_| DMatrix::zeros(2, 0)),
            true_weights: DVector::zeros(0),
        }
    }
}

/// Look up a bundled plant by scenario-facing name.
///
/// `nonlinear_p_minus` and `nonlinear_p_plus` share the same dynamics; the
/// suffix only selects which safe set the scenario pairs them with.
pub fn system_by_name(name: &str) -> Result<ControlAffineSystem> {
    match name {
        "nonlinear_p_minus" | "nonlinear_p_plus" => {
            Ok(ControlAffineSystem::nonlinear_example(name))
        }
        "single_integrator" => Ok(ControlAffineSystem::single_integrator()),
        other => Err(Error::contract(format!(
            "unknown system '{other}' (known: nonlinear_p_minus, nonlinear_p_plus, single_integrator)"
        ))),
    }
}
