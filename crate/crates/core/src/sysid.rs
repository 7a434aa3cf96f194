//! Online drift-weight identification via integral concurrent learning: the
//! plant equation integrated over a sliding window gives
//! `x(t) − x(t−Δt) − ∫g·u dτ = (∫Y dτ)·θ`, and a small history stack of such
//! windows drives the estimate θ̂ toward θ without state-derivative
//! measurements.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlAffineSystem;
use crate::{Error, Result};

/// One windowed record: `script_y = ∫ Y(x(τ)) dτ` and
/// `residual = x(t) − x(t−Δt) − ∫ g(x)u dτ`, both over the same window.
/// With exact integration and an exactly parametrized drift,
/// `residual = script_y · θ`.
#[derive(Debug, Clone)]
pub struct IclEntry {
    pub script_y: DMatrix<f64>,
    pub residual: DVector<f64>,
}

/// Fixed-capacity history stack maintained to maximize
/// `σ_min(Σⱼ script_yⱼᵀ·script_yⱼ)`.
#[derive(Debug, Clone)]
pub struct IclHistoryStack {
    capacity: usize,
    entries: Vec<IclEntry>,
}

impl IclHistoryStack {
    pub fn new(capacity: usize) -> Self {
        IclHistoryStack {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[IclEntry] {
        &self.entries
    }

    /// Information matrix S = Σⱼ script_yⱼᵀ·script_yⱼ (p×p, PSD).
    pub fn information_matrix(&self) -> DMatrix<f64> {
        let p = self
            .entries
            .first()
            .map(|e| e.script_y.ncols())
            .unwrap_or(0);
        let mut s = DMatrix::zeros(p, p);
        for e in &self.entries {
            s += e.script_y.transpose() * &e.script_y;
        }
        s
    }

    /// σ_min of the information matrix; zero while the stack is empty.
    pub fn sigma_min(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        min_eigenvalue(&self.information_matrix())
    }

    /// Insert-or-replace policy: append while below capacity; once full,
    /// replace the entry whose replacement maximizes σ_min of the
    /// information matrix, and only if that strictly improves on the
    /// current σ_min. Returns whether the candidate was kept.
    pub fn insert(&mut self, candidate: IclEntry) -> bool {
        if !self.is_full() {
            self.entries.push(candidate);
            return true;
        }
        let current = self.sigma_min();
        let cand_info = candidate.script_y.transpose() * &candidate.script_y;
        let full = self.information_matrix();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.entries.len() {
            let old = &self.entries[j].script_y;
            let trial = &full - old.transpose() * old + &cand_info;
            let s = min_eigenvalue(&trial);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        match best {
            Some((j, s)) if s > current => {
                self.entries[j] = candidate;
                true
            }
            _ => false,
        }
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// θ̂-update law: `θ̂' = k_θ · Σⱼ script_yⱼᵀ (residualⱼ − script_yⱼ·θ̂)`,
/// the scaled negative gradient of `½Σⱼ‖residualⱼ − script_yⱼ·θ̂‖²`.
pub fn theta_dot(gain: f64, theta_hat: &DVector<f64>, stack: &IclHistoryStack) -> DVector<f64> {
    let mut acc = DVector::zeros(theta_hat.len());
    for e in stack.entries() {
        let err = &e.residual - &e.script_y * theta_hat;
        acc += e.script_y.transpose() * err;
    }
    acc * gain
}

struct WindowSample {
    t: f64,
    x: DVector<f64>,
    y_basis: DMatrix<f64>,
    gu: DVector<f64>,
}

/// Running window state of the identifier: the current estimate, the
/// adaptation gain, and the grid samples backing the window integrals.
pub struct IdentifierState {
    theta_hat: DVector<f64>,
    gain: f64,
    window: f64,
    samples: VecDeque<WindowSample>,
    last_t: Option<f64>,
}

impl IdentifierState {
    pub fn new(theta0: DVector<f64>, gain: f64, window: f64) -> Self {
        IdentifierState {
            theta_hat: theta0,
            gain,
            window,
            samples: VecDeque::new(),
            last_t: None,
        }
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Overwrite the estimate (the simulation integrates θ̂ together with the
    /// rest of the augmented state and writes the result back each step).
    pub fn set_theta_hat(&mut self, theta: DVector<f64>) {
        self.theta_hat = theta;
    }

    /// θ̂' against the given stack, evaluated at the stored estimate.
    pub fn theta_dot(&self, stack: &IclHistoryStack) -> DVector<f64> {
        theta_dot(self.gain, &self.theta_hat, stack)
    }

    /// Record a grid sample and, once the buffer spans the window, emit a
    /// candidate stack entry with trapezoidal window integrals.
    ///
    /// Calls must come at strictly increasing `t`. For a plant with an empty
    /// drift basis (p = 0) this is a no-op.
    pub fn accumulate(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        system: &ControlAffineSystem,
        dt: f64,
    ) -> Result<Option<IclEntry>> {
        if dt <= 0.0 {
            return Err(Error::contract("identifier step must be positive"));
        }
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(Error::contract(format!(
                    "identifier samples must arrive at increasing times (got t = {t} after {last})"
                )));
            }
        }
        self.last_t = Some(t);
        if system.param_dim() == 0 {
            return Ok(None);
        }

        let y_basis = system.eval_drift_basis(x)?;
        let gu = system.eval_input_matrix(x)? * u;
        self.samples.push_back(WindowSample {
            t,
            x: x.clone(),
            y_basis,
            gu,
        });

        // Keep the smallest sample set spanning the window.
        let window = self.window;
        let span_ok = |s: &VecDeque<WindowSample>| {
            s.len() >= 2 && s.back().unwrap().t - s[1].t >= window - 1e-9
        };
        while span_ok(&self.samples) {
            self.samples.pop_front();
        }
        let spans = self.samples.len() >= 2
            && self.samples.back().unwrap().t - self.samples.front().unwrap().t
                >= window - 1e-9;
        if !spans {
            return Ok(None);
        }

        let n = system.state_dim();
        let p = system.param_dim();
        let mut script_y = DMatrix::zeros(n, p);
        let mut gu_int = DVector::zeros(n);
        for w in self.samples.iter().zip(self.samples.iter().skip(1)) {
            let (a, b) = w;
            let half = 0.5 * (b.t - a.t);
            script_y += (&a.y_basis + &b.y_basis) * half;
            gu_int += (&a.gu + &b.gu) * half;
        }
        let first = self.samples.front().unwrap();
        let last = self.samples.back().unwrap();
        let residual = &last.x - &first.x - gu_int;
        Ok(Some(IclEntry { script_y, residual }))
    }
}
