//! State-following kernel basis: polynomial kernels whose centers ride with
//! the current state, `cᵢ(x) = x + ν(x)·dᵢ`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Center-shrinkage factor ν(x) = xᵀx/(xᵀx + 1) ∈ [0, 1).
pub fn nu(x: &DVector<f64>) -> f64 {
    let q = x.dot(x);
    q / (q + 1.0)
}

/// Kernel family tag. Only the degree-one polynomial kernel
/// `φᵢ(y, cᵢ) = yᵀcᵢ` is bundled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    PolynomialDegreeOne,
}

/// A set of `L` state-following kernels with fixed offset directions.
pub struct StafBasis {
    offsets: Vec<DVector<f64>>,
    kind: KernelKind,
}

impl StafBasis {
    /// Basis from explicit offset directions (all of the same dimension).
    pub fn new(offsets: Vec<DVector<f64>>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::contract("a StaF basis needs at least one kernel"));
        }
        let n = offsets[0].len();
        if offsets.iter().any(|d| d.len() != n) {
            return Err(Error::contract("kernel offsets must share one dimension"));
        }
        Ok(StafBasis {
            offsets,
            kind: KernelKind::PolynomialDegreeOne,
        })
    }

    /// The bundled planar basis: unit offsets on the vertices of an
    /// equilateral triangle, d₁ = (1, 0), d₂ = (−½, √3/2), d₃ = (−½, −√3/2).
    pub fn equilateral_triangle() -> Self {
        let s = 3.0_f64.sqrt() / 2.0;
        StafBasis {
            offsets: vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![-0.5, s]),
                DVector::from_vec(vec![-0.5, -s]),
            ],
            kind: KernelKind::PolynomialDegreeOne,
        }
    }

    /// Number of kernels L.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.offsets[0].len()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }

    /// Kernel centers cᵢ(x) = x + ν(x)·dᵢ.
    pub fn centers(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let s = nu(x);
        self.offsets.iter().map(|d| x + d * s).collect()
    }

    /// φ(y, c(x)): component i is yᵀcᵢ(x).
    pub fn phi(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let centers = self.centers(x);
        DVector::from_iterator(self.len(), centers.iter().map(|c| y.dot(c)))
    }

    /// ∇φ(y, c(x)): derivative with respect to the first argument only, with
    /// the centers held fixed at the anchor. Row i is cᵢ(x)ᵀ; for the
    /// polynomial kernel this does not depend on `y`.
    pub fn grad_phi(&self, _y: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let centers = self.centers(x);
        let n = self.state_dim();
        DMatrix::from_fn(self.len(), n, |i, j| centers[i][j])
    }
}
