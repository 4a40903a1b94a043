//! Stability certificates: the full constant chain behind the exponential
//! decay estimate `‖fⁿ‖ ≤ C e^{-ν nΔt} ‖f⁰‖` for the split schemes, with
//! explicit or implicit collision.
//!
//! All constants except `dt_cfl` are independent of `Δx` and `Δt`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::KineticModel;
use crate::structure::StructuralDecomposition;

/// Lattice points per axis used for the coupling-bound supremum.
pub const COUPLING_LATTICE: usize = 17;
/// Multiplicative margin applied to the lattice maximum.
pub const COUPLING_INFLATION: f64 = 1.05;
/// Samples of `Δx ∈ (0, 1]` used to cross-check the damping closed form.
pub const DAMPING_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub scheme_kind: SchemeKind,
    /// Max entry of `exp(-Σ Λ_l x_l)` over the closed cube.
    #[serde(rename = "M")]
    pub m_max: f64,
    /// Min entry of the same.
    #[serde(rename = "m")]
    pub m_min: f64,
    #[serde(rename = "lambda_M")]
    pub lambda_max: f64,
    #[serde(rename = "lambda_m")]
    pub lambda_min: f64,
    pub mu: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Higher-order collision constant, explicit scheme only.
    #[serde(rename = "M_tilde")]
    pub m_tilde: Option<f64>,
    /// `λ_M / λ_m`, implicit scheme only.
    #[serde(rename = "C3")]
    pub c3: Option<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub dt_cfl: f64,
    /// `+∞` when there is no source restriction (implicit, or `Q = 0`).
    #[serde(serialize_with = "serialize_unbounded")]
    pub dt_source: f64,
    pub nu: f64,
    #[serde(rename = "C_amp")]
    pub c_amp: f64,
    /// Smallest entry of `Λ`; `None` when `r = 0`.
    pub lambda_dissipative: Option<f64>,
    pub p_norm: f64,
    pub q_norm: f64,
    pub sigma: f64,
    pub rank: usize,
}

fn serialize_unbounded<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

impl StabilityCertificate {
    /// Per-step contraction rate `μ₁ = mμ / (4 λ_M α) = 2ν`.
    pub fn mu1(&self) -> f64 {
        self.m_min * self.mu / (4.0 * self.lambda_max * self.alpha)
    }

    pub fn dt_source_unbounded(&self) -> bool {
        !self.dt_source.is_finite()
    }

    /// Largest certified time step: `min(dt_cfl, dt_source)`.
    pub fn dt_max(&self) -> f64 {
        self.dt_cfl.min(self.dt_source)
    }

    /// The time step chosen by `dt = "auto"`.
    pub fn dt_auto(&self) -> f64 {
        0.9 * self.dt_max()
    }

    /// `C e^{-ν t}`.
    pub fn envelope(&self, t: f64) -> f64 {
        self.c_amp * (-self.nu * t).exp()
    }
}

/// `(M, m)`: extrema of `exp(-Σ_l λ_{kl} x_l)` over `[0,1]^d`, all `k`.
pub fn geometry_extrema(model: &KineticModel) -> (f64, f64) {
    let mut big = f64::NEG_INFINITY;
    let mut small = f64::INFINITY;
    for k in 0..model.n_velocities() {
        let row = model.velocities().row(k);
        let hi = (-row.iter().map(|&v| v.min(0.0)).sum::<f64>()).exp();
        let lo = (-row.iter().map(|&v| v.max(0.0)).sum::<f64>()).exp();
        big = big.max(hi);
        small = small.min(lo);
    }
    (big, small)
}

/// `μ̃_k(Δx) = Σ_{i: λ≠0} |λ_{ki}| (1 - e^{-|λ_{ki}|Δx}) / Δx`, the interior
/// damping coefficient of component `k` on a grid of spacing `dx`.
pub fn damping_profile(model: &KineticModel, k: usize, dx: f64) -> f64 {
    let row = model.velocities().row(k);
    let mut acc = 0.0;
    for &v in row {
        if v > 0.0 {
            acc -= v * ((-v * dx).exp() - 1.0) / dx;
        } else if v < 0.0 {
            acc -= v * (1.0 - (v * dx).exp()) / dx;
        }
    }
    acc
}

/// `μ = min_k min_{Δx ∈ (0,1]} μ̃_k(Δx)`. Each summand of `μ̃_k` decreases in
/// `Δx`, so the minimum sits at `Δx = 1`; the closed form is cross-checked
/// against a sampled minimum.
pub fn interior_damping(model: &KineticModel) -> Result<f64> {
    let mut mu = f64::INFINITY;
    for k in 0..model.n_velocities() {
        let closed: f64 = model
            .velocities()
            .row(k)
            .iter()
            .filter(|&&v| v != 0.0)
            .map(|&v| v.abs() * (1.0 - (-v.abs()).exp()))
            .sum();
        let sampled = (1..=DAMPING_SAMPLES)
            .map(|i| damping_profile(model, k, i as f64 / DAMPING_SAMPLES as f64))
            .fold(f64::INFINITY, f64::min);
        if (sampled - closed).abs() > 1e-12 * closed.abs().max(1.0) {
            return Err(Error::DampingCrossCheck { closed, sampled });
        }
        mu = mu.min(closed);
    }
    if !(mu > 0.0) {
        return Err(Error::NonPositiveDamping(mu));
    }
    Ok(mu)
}

/// `(C1, C2)`: twice the suprema over the cube of `‖Λ Λ²¹(x)‖₂` and
/// `‖Λ Λ²²(x)‖₂`, where `P⁻ᵀ Λ_x P⁻¹` is split conformally with `diag(0, Λ)`.
///
/// The supremum is taken on a `17^d` lattice including every vertex, then
/// inflated by 5%; any upper bound only enlarges `α`.
pub fn coupling_bounds(model: &KineticModel, dec: &StructuralDecomposition) -> (f64, f64) {
    let k = model.n_velocities();
    let r = dec.rank;
    if r == 0 {
        return (0.0, 0.0);
    }
    let d = model.dim();
    let kr = k - r;
    let mut c1 = 0.0_f64;
    let mut c2 = 0.0_f64;
    let mut x = vec![0.0; d];
    let mut weights = vec![0.0; k];
    let p_inv_t = dec.p_inv.transpose();
    let steps = COUPLING_LATTICE - 1;
    for node in 0..COUPLING_LATTICE.pow(d as u32) {
        let mut rem = node;
        for xi in x.iter_mut().rev() {
            *xi = (rem % COUPLING_LATTICE) as f64 / steps as f64;
            rem /= COUPLING_LATTICE;
        }
        for (kk, w) in weights.iter_mut().enumerate() {
            let row = model.velocities().row(kk);
            *w = (-row.iter().zip(&x).map(|(v, xi)| v * xi).sum::<f64>()).exp();
        }
        let b = p_inv_t.scale_cols(&weights).matmul(&dec.p_inv);
        let b21 = b.block(kr, 0, r, kr).scale_rows(&dec.lambda);
        let b22 = b.block(kr, kr, r, r).scale_rows(&dec.lambda);
        c1 = c1.max(2.0 * b21.spectral_norm());
        c2 = c2.max(2.0 * b22.spectral_norm());
    }
    (c1 * COUPLING_INFLATION, c2 * COUPLING_INFLATION)
}

/// Constants shared by both certificate flavours.
struct Chain {
    m_max: f64,
    m_min: f64,
    lambda_max: f64,
    lambda_min: f64,
    mu: f64,
    c1: f64,
    c2: f64,
    p_norm: f64,
    q_norm: f64,
    lambda_dissipative: Option<f64>,
    dt_cfl: f64,
    rank: usize,
}

fn chain(model: &KineticModel, dec: &StructuralDecomposition, dx: f64) -> Result<Chain> {
    if dec.n_velocities() != model.n_velocities() {
        return Err(Error::DimensionMismatch(
            "decomposition and model sizes differ".into(),
        ));
    }
    if !(dx > 0.0 && dx <= 1.0) {
        return Err(Error::InvalidParameter(format!("dx must lie in (0, 1], got {dx}")));
    }
    let cells = 1.0 / dx;
    if (cells - cells.round()).abs() > 1e-9 * cells {
        return Err(Error::InvalidParameter(format!("1/dx must be an integer, got {cells}")));
    }
    let q_zero = model.collision().is_zero();
    if dec.rank == 0 && !q_zero {
        return Err(Error::RankZero);
    }
    let (m_max, m_min) = geometry_extrema(model);
    let mu = interior_damping(model)?;
    let (c1, c2) = coupling_bounds(model, dec);
    Ok(Chain {
        m_max,
        m_min,
        lambda_max: dec.lambda0_max(),
        lambda_min: dec.lambda0_min(),
        mu,
        c1,
        c2,
        p_norm: dec.p.spectral_norm(),
        q_norm: model.collision().spectral_norm(),
        lambda_dissipative: dec.lambda_min(),
        dt_cfl: dx / model.max_speed_sum(),
        rank: dec.rank,
    })
}

/// Certificate for upwind advection followed by forward-Euler collision.
///
/// `α` is the weight for the unscaled `Q`; the source bound uses `‖Q/σ‖₂`.
pub fn certify_explicit(
    model: &KineticModel,
    dec: &StructuralDecomposition,
    dx: f64,
) -> Result<StabilityCertificate> {
    let ch = chain(model, dec, dx)?;
    let mmu = ch.m_min * ch.mu;
    let p2 = ch.p_norm * ch.p_norm;
    let q_scaled = ch.q_norm / model.sigma();
    let m_tilde = 2.0 * ch.lambda_max * q_scaled * q_scaled / ch.lambda_min;
    let epsilon = mmu * ch.lambda_min / (8.0 * p2 * ch.lambda_max);
    let floor = ch.m_max / ch.lambda_max;
    let alpha = match ch.lambda_dissipative {
        Some(lam) => {
            let coupled = 2.0 * ch.c1 * ch.c1 * ch.lambda_max * p2 / (mmu * ch.lambda_min * lam)
                + ch.c2 / lam;
            coupled.max(floor)
        }
        None => floor,
    };
    let dt_source = if m_tilde > 0.0 {
        mmu / (8.0 * m_tilde * ch.lambda_max * alpha)
    } else {
        f64::INFINITY
    };
    Ok(finish(ch, SchemeKind::Explicit, Some(m_tilde), None, epsilon, alpha, dt_source, model))
}

/// Certificate for upwind advection followed by implicit collision. The only
/// time-step restriction is the CFL bound.
pub fn certify_implicit(
    model: &KineticModel,
    dec: &StructuralDecomposition,
    dx: f64,
) -> Result<StabilityCertificate> {
    let ch = chain(model, dec, dx)?;
    let sigma = model.sigma();
    let mmu = ch.m_min * ch.mu;
    let p2 = ch.p_norm * ch.p_norm;
    let c3 = ch.lambda_max / ch.lambda_min;
    let epsilon = mmu * ch.lambda_min * sigma / (4.0 * p2 * ch.lambda_max * c3);
    let floor = ch.m_max / ch.lambda_max;
    let alpha = match ch.lambda_dissipative {
        Some(lam) => {
            let coupled = ch.c1 * ch.c1 * ch.lambda_max * c3 * p2 / (mmu * lam * ch.lambda_min * sigma)
                + ch.c2 / lam;
            coupled.max(floor)
        }
        None => floor,
    };
    Ok(finish(ch, SchemeKind::Implicit, None, Some(c3), epsilon, alpha, f64::INFINITY, model))
}

pub fn certify(
    model: &KineticModel,
    dec: &StructuralDecomposition,
    dx: f64,
    kind: SchemeKind,
) -> Result<StabilityCertificate> {
    match kind {
        SchemeKind::Explicit => certify_explicit(model, dec, dx),
        SchemeKind::Implicit => certify_implicit(model, dec, dx),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ch: Chain,
    scheme_kind: SchemeKind,
    m_tilde: Option<f64>,
    c3: Option<f64>,
    epsilon: f64,
    alpha: f64,
    dt_source: f64,
    model: &KineticModel,
) -> StabilityCertificate {
    let nu = ch.m_min * ch.mu / (8.0 * ch.lambda_max * alpha);
    StabilityCertificate {
        scheme_kind,
        m_max: ch.m_max,
        m_min: ch.m_min,
        lambda_max: ch.lambda_max,
        lambda_min: ch.lambda_min,
        mu: ch.mu,
        c1: ch.c1,
        c2: ch.c2,
        m_tilde,
        c3,
        epsilon,
        alpha,
        dt_cfl: ch.dt_cfl,
        dt_source,
        nu,
        c_amp: (2.0 * ch.lambda_max / ch.lambda_min).sqrt(),
        lambda_dissipative: ch.lambda_dissipative,
        p_norm: ch.p_norm,
        q_norm: ch.q_norm,
        sigma: model.sigma(),
        rank: ch.rank,
    }
}
