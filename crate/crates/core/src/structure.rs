//! Structural-stability decomposition of the collision matrix.
//!
//! Given a positive diagonal `Λ₀` with `S = Λ₀ Q` symmetric negative
//! semidefinite, this module builds an invertible `P` and a positive diagonal
//! `Λ` (size `r = rank Q`) such that
//!
//! ```text
//! P Q P⁻¹ = -diag(0, Λ)        Λ₀ Q = -Pᵀ diag(0, Λ) P
//! ```
//!
//! Construction: whiten `W = Λ₀^{-1/2} S Λ₀^{-1/2}`, diagonalize
//! `W = R D Rᵀ` by Jacobi with zero eigenvalues ordered first, and set
//! `P = Rᵀ Λ₀^{1/2}`. Then `Pᵀ P = Λ₀` and both identities hold by
//! construction.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricEigen};
use crate::model::{CoplanarSteadyState, KineticModel};

/// Relative asymmetry allowed in `Λ₀ Q`.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct StructuralDecomposition {
    pub p: Matrix,
    pub p_inv: Matrix,
    /// Diagonal of `Λ₀`.
    pub lambda0: Vec<f64>,
    /// Diagonal of `Λ`, length `rank`.
    pub lambda: Vec<f64>,
    pub rank: usize,
}

impl StructuralDecomposition {
    pub fn n_velocities(&self) -> usize {
        self.lambda0.len()
    }

    /// Dimension `K - r` of the conserved block.
    pub fn conserved_dim(&self) -> usize {
        self.n_velocities() - self.rank
    }

    /// `diag(0_{K-r}, Λ)` as a dense matrix.
    pub fn block_diagonal(&self) -> Matrix {
        let k = self.n_velocities();
        let mut diag = vec![0.0; k];
        diag[k - self.rank..].copy_from_slice(&self.lambda);
        Matrix::from_diagonal(&diag)
    }

    /// Smallest entry of `Λ`; `None` when `r = 0`.
    pub fn lambda_min(&self) -> Option<f64> {
        self.lambda.iter().copied().reduce(f64::min)
    }

    pub fn lambda0_max(&self) -> f64 {
        self.lambda0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda0_min(&self) -> f64 {
        self.lambda0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Max-norm residuals of the decomposition identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionResiduals {
    /// `‖P Q P⁻¹ + diag(0, Λ)‖_max`
    pub similarity: f64,
    /// `‖Λ₀ Q + Pᵀ diag(0, Λ) P‖_max`
    pub symmetrizer: f64,
    /// `‖P P⁻¹ - I‖_max`
    pub inverse: f64,
}

impl DecompositionResiduals {
    pub fn max(&self) -> f64 {
        self.similarity.max(self.symmetrizer).max(self.inverse)
    }
}

/// `Λ₀ = diag(1/f1, 1/f2, 1/f3, 1/f4)` for the coplanar model.
pub fn coplanar_lambda0(s: &CoplanarSteadyState) -> Vec<f64> {
    s.densities().iter().map(|f| 1.0 / f).collect()
}

/// Builds `P`, `Λ` and `r` for the unscaled collision matrix of `model`.
pub fn decompose(model: &KineticModel, lambda0: &[f64]) -> Result<StructuralDecomposition> {
    let k = model.n_velocities();
    if lambda0.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "lambda0 has {} entries, model has {k} velocities",
            lambda0.len()
        )));
    }
    if lambda0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "lambda0 entries must be positive, got {lambda0:?}"
        )));
    }

    let q = model.collision();
    let s = q.scale_rows(lambda0);
    let scale = s.max_abs();
    let asymmetry = s.sub(&s.transpose()).max_abs();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry, scale });
    }

    let sqrt_l0: Vec<f64> = lambda0.iter().map(|v| v.sqrt()).collect();
    let inv_sqrt_l0: Vec<f64> = sqrt_l0.iter().map(|v| 1.0 / v).collect();
    let w = s.scale_rows(&inv_sqrt_l0).scale_cols(&inv_sqrt_l0);
    let w = w.add(&w.transpose()).scale(0.5);

    let eig = SymmetricEigen::new(&w);
    let tol_rank = 1e-10 * w.max_abs().max(1.0);
    if let Some(&pos) = eig.values.iter().find(|&&v| v > tol_rank) {
        return Err(Error::PositiveEigenvalue(pos));
    }

    // descending: zero block first, most negative last; stable sort keeps
    // original index order on ties
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));
    let rank = eig.values.iter().filter(|&&v| v < -tol_rank).count();
    if rank == 0 && !q.is_zero() {
        return Err(Error::DegenerateRank);
    }
    let lambda: Vec<f64> = order[k - rank..].iter().map(|&i| -eig.values[i]).collect();

    // R has the sorted eigenvectors as columns
    let r = Matrix::from_fn(k, k, |row, col| eig.vectors[(row, order[col])]);
    let p = r.transpose().scale_cols(&sqrt_l0);
    let p_inv = r.scale_rows(&inv_sqrt_l0);

    Ok(StructuralDecomposition {
        p,
        p_inv,
        lambda0: lambda0.to_vec(),
        lambda,
        rank,
    })
}

pub fn verify_decomposition(
    model: &KineticModel,
    dec: &StructuralDecomposition,
) -> DecompositionResiduals {
    let q = model.collision();
    let k = model.n_velocities();
    let block = dec.block_diagonal();
    let similarity = dec.p.matmul(q).matmul(&dec.p_inv).add(&block).max_abs();
    let symmetrizer = q
        .scale_rows(&dec.lambda0)
        .add(&dec.p.transpose().matmul(&block).matmul(&dec.p))
        .max_abs();
    let inverse = dec.p.matmul(&dec.p_inv).sub(&Matrix::identity(k)).max_abs();
    DecompositionResiduals {
        similarity,
        symmetrizer,
        inverse,
    }
}
