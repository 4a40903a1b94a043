//! Linear discrete-velocity systems `f_t + Σ Λ_i f_{x_i} = (1/σ) Q f` and the
//! coplanar four-velocity instance obtained by linearizing its quadratic
//! collision term at a uniform steady state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Relative tolerance on the steady-state identity `f1 f2 = f3 f4`.
pub const STEADY_STATE_TOL: f64 = 1e-12;

/// A validated linear discrete-velocity model. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KineticModel {
    /// `K x d`; row `k` is the velocity `v_k`, i.e. the `k`-th diagonal
    /// entries of `Λ_1 .. Λ_d`.
    velocities: Matrix,
    collision: Matrix,
    sigma: f64,
}

impl KineticModel {
    pub fn new(velocities: Matrix, collision: Matrix, sigma: f64) -> Result<Self> {
        let k = velocities.rows();
        let d = velocities.cols();
        if k == 0 || d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "velocity matrix must be non-empty, got {k}x{d}"
            )));
        }
        if collision.rows() != k || collision.cols() != k {
            return Err(Error::DimensionMismatch(format!(
                "collision matrix is {}x{}, expected {k}x{k}",
                collision.rows(),
                collision.cols()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if !velocities.is_finite() || !collision.is_finite() {
            return Err(Error::InvalidParameter("non-finite model entry".into()));
        }
        for row in 0..k {
            if velocities.row(row).iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVelocityRow(row));
            }
        }
        Ok(Self {
            velocities,
            collision,
            sigma,
        })
    }

    pub fn from_rows(velocities: &[Vec<f64>], collision: &[Vec<f64>], sigma: f64) -> Result<Self> {
        Self::new(
            Matrix::from_rows(velocities)?,
            Matrix::from_rows(collision)?,
            sigma,
        )
    }

    /// Spatial dimension `d`.
    pub fn dim(&self) -> usize {
        self.velocities.cols()
    }

    /// Number of discrete velocities `K`.
    pub fn n_velocities(&self) -> usize {
        self.velocities.rows()
    }

    pub fn velocities(&self) -> &Matrix {
        &self.velocities
    }

    /// `λ_{ki}`: speed of component `k` along axis `i`.
    #[inline]
    pub fn speed(&self, k: usize, axis: usize) -> f64 {
        self.velocities[(k, axis)]
    }

    /// The unscaled collision matrix `Q`.
    pub fn collision(&self) -> &Matrix {
        &self.collision
    }

    /// The effective source matrix `Q / σ`.
    pub fn scaled_collision(&self) -> Matrix {
        self.collision.scale(1.0 / self.sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same transport and collision structure with a different stiffness scale.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.velocities.clone(), self.collision.clone(), sigma)
    }

    /// `max_k Σ_i |λ_{ki}|`, the denominator of the CFL bound.
    pub fn max_speed_sum(&self) -> f64 {
        (0..self.n_velocities())
            .map(|k| self.velocities.row(k).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Returns the speed modulus `U` if this is the coplanar layout
    /// `(U,0), (-U,0), (0,U), (0,-U)`.
    pub fn coplanar_speed(&self) -> Option<f64> {
        if self.dim() != 2 || self.n_velocities() != 4 {
            return None;
        }
        let u = self.speed(0, 0);
        let expected = [[u, 0.0], [-u, 0.0], [0.0, u], [0.0, -u]];
        let matches = expected
            .iter()
            .enumerate()
            .all(|(k, row)| self.velocities.row(k) == row.as_slice());
        (u > 0.0 && matches).then_some(u)
    }

    pub fn is_coplanar(&self) -> bool {
        self.coplanar_speed().is_some()
    }
}

/// Uniform steady state of the coplanar model: speed modulus `U` and the four
/// equilibrium densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoplanarSteadyState {
    speed: f64,
    densities: [f64; 4],
}

impl CoplanarSteadyState {
    pub fn new(speed: f64, densities: [f64; 4]) -> Result<Self> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "speed modulus must be positive, got {speed}"
            )));
        }
        if densities.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "steady-state densities must be positive, got {densities:?}"
            )));
        }
        let [f1, f2, f3, f4] = densities;
        let defect = (f1 * f2 - f3 * f4).abs();
        let tolerance = STEADY_STATE_TOL * f1 * f2;
        if defect > tolerance {
            return Err(Error::SteadyStateViolation { defect, tolerance });
        }
        Ok(Self { speed, densities })
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn densities(&self) -> [f64; 4] {
        self.densities
    }

    /// `f_k^e` with a one-based component index, matching the usual labelling.
    pub fn density(&self, one_based: usize) -> f64 {
        self.densities[one_based - 1]
    }
}

/// Linearization of the coplanar model at `s`.
///
/// Velocity rows are `(U,0), (-U,0), (0,U), (0,-U)`; rows 1 and 2 of `Q` are
/// `(-f2, -f1, f4, f3)` and rows 3 and 4 are their negation.
pub fn coplanar_model(s: &CoplanarSteadyState, sigma: f64) -> Result<KineticModel> {
    let u = s.speed;
    let [f1, f2, f3, f4] = s.densities;
    let gain = [-f2, -f1, f4, f3];
    let loss = gain.map(|v| -v);
    let velocities = Matrix::from_rows(&[[u, 0.0], [-u, 0.0], [0.0, u], [0.0, -u]])?;
    let collision = Matrix::from_rows(&[gain, gain, loss, loss])?;
    KineticModel::new(velocities, collision, sigma)
}

/// `(f3 f4 - f1 f2) / σ`, the common magnitude of the coplanar collision terms.
pub fn nonlinear_collision_residual(fvals: [f64; 4], sigma: f64) -> f64 {
    let [f1, f2, f3, f4] = fvals;
    (f3 * f4 - f1 * f2) / sigma
}

/// Right-hand sides of the four nonlinear coplanar equations:
/// `(+r, +r, -r, -r)` with `r` the collision residual.
pub fn coplanar_collision_terms(fvals: [f64; 4], sigma: f64) -> [f64; 4] {
    let r = nonlinear_collision_residual(fvals, sigma);
    [r, r, -r, -r]
}
