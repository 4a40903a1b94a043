//! Runtime diagnostics built on the discrete Lyapunov functional
//!
//! ```text
//! L(f) = (Δx)^d Σ_k Σ_j f_{k,j}² (α λ_{k0} + exp(-Σ_l λ_{kl} x_{l,j_l}))
//! ```
//!
//! and the split of its advection increment into an interior part `𝓘` and a
//! boundary part `𝓑`: `L(f̃) - L(f) ≤ Δt (𝓘 + 𝓑)` under the CFL bound.

use serde::Serialize;

use crate::certify::StabilityCertificate;
use crate::error::{Error, Result};
use crate::grid::{Face, FaceTrace, Field, Grid};
use crate::model::{CoplanarSteadyState, KineticModel};

/// Slack on the per-step contraction test, relative to `L(f⁰)`.
pub const DECAY_SLACK: f64 = 1e-12;
/// Relative slack on the envelope test `‖fⁿ‖ ≤ C e^{-νt} ‖f⁰‖`.
pub const ENVELOPE_SLACK: f64 = 1e-12;
/// Minimum trace length accepted by [`fit_decay_rate`].
pub const MIN_FIT_SAMPLES: usize = 10;

/// `exp(-Σ_l λ_{kl} x_l)`.
fn geometric_weight(model: &KineticModel, k: usize, x: &[f64]) -> f64 {
    let row = model.velocities().row(k);
    (-row.iter().zip(x).map(|(v, xi)| v * xi).sum::<f64>()).exp()
}

fn coords(grid: &Grid, j: &[usize]) -> Vec<f64> {
    j.iter().map(|&ji| grid.coord(ji)).collect()
}

/// Interior weights `α λ_{k0} + exp(-Σ λ_{kl} x_l)` for one grid, stored in
/// field layout so that repeated evaluation is a single weighted sum.
#[derive(Debug, Clone)]
pub struct LyapunovWeights {
    grid: Grid,
    alpha: f64,
    weights: Vec<f64>,
    volume: f64,
}

impl LyapunovWeights {
    pub fn new(model: &KineticModel, grid: Grid, lambda0: &[f64], alpha: f64) -> Result<Self> {
        if lambda0.len() != model.n_velocities() || grid.dim() != model.dim() {
            return Err(Error::DimensionMismatch(
                "lambda0, model and grid sizes differ".into(),
            ));
        }
        let nint = grid.interior_count();
        let mut weights = Vec::with_capacity(model.n_velocities() * nint);
        for (k, &l0) in lambda0.iter().enumerate() {
            for p in 0..nint {
                let x = coords(&grid, &grid.interior_index(p));
                weights.push(alpha * l0 + geometric_weight(model, k, &x));
            }
        }
        Ok(Self {
            grid,
            alpha,
            weights,
            volume: grid.dx().powi(grid.dim() as i32),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `L(f)`, summed sequentially in storage order.
    pub fn value(&self, field: &Field) -> f64 {
        debug_assert_eq!(field.grid(), &self.grid);
        let mut sum = 0.0;
        for (w, v) in self.weights.iter().zip(field.values()) {
            sum += w * v * v;
        }
        self.volume * sum
    }
}

pub fn lyapunov_value(field: &Field, model: &KineticModel, lambda0: &[f64], alpha: f64) -> Result<f64> {
    Ok(LyapunovWeights::new(model, *field.grid(), lambda0, alpha)?.value(field))
}

/// How incoming boundary values are weighted in [`boundary_term_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IncomingWeight {
    /// `exp(-Σλx) · exp(∓λΔx)`, the weight produced by the index shift.
    #[default]
    Shifted,
    /// `exp(-Σλx)` alone; wrong, kept to exercise the dual-formula check.
    Unshifted,
}

/// The boundary term `𝓑` for the trace `incoming` used to advect `field`.
pub fn boundary_term(
    field: &Field,
    incoming: &FaceTrace,
    model: &KineticModel,
    lambda0: &[f64],
    alpha: f64,
) -> f64 {
    boundary_term_with(field, incoming, model, lambda0, alpha, IncomingWeight::Shifted)
}

/// `𝓑` in any dimension: for each component and each axis with `λ > 0`,
/// `+λ f²(αλ₀ + E e^{-λΔx})` on the incoming face `j_i = 0` and
/// `-λ f²(αλ₀ + E)` on the outgoing layer `j_i = N-1`; for `λ < 0`,
/// `+λ f²(αλ₀ + E)` on `j_i = 1` and `-λ f²(αλ₀ + E e^{λΔx})` on `j_i = N`.
/// Here `E = exp(-Σλx)` at the point itself and every sum carries
/// `(Δx)^{d-1}`.
pub fn boundary_term_with(
    field: &Field,
    incoming: &FaceTrace,
    model: &KineticModel,
    lambda0: &[f64],
    alpha: f64,
    weight: IncomingWeight,
) -> f64 {
    let grid = *field.grid();
    let dx = grid.dx();
    let scale = dx.powi(grid.dim() as i32 - 1);
    let m = grid.face_count();
    let mut total = 0.0;
    for k in 0..model.n_velocities() {
        let base = alpha * lambda0[k];
        for axis in 0..grid.dim() {
            let lam = model.speed(k, axis);
            if lam == 0.0 {
                continue;
            }
            let (in_face, out_face) = if lam > 0.0 {
                (Face::low(axis), Face::high(axis))
            } else {
                (Face::high(axis), Face::low(axis))
            };
            let shift = match weight {
                IncomingWeight::Shifted => (-lam.abs() * dx).exp(),
                IncomingWeight::Unshifted => 1.0,
            };
            let vals = incoming.values(in_face, k).expect("incoming component missing");
            let adjacent = out_face.adjacent_index(&grid);
            let mut inflow = 0.0;
            let mut outflow = 0.0;
            for o in 0..m {
                let mut j = grid.face_index(in_face, o);
                let e = geometric_weight(model, k, &coords(&grid, &j));
                inflow += vals[o] * vals[o] * (base + e * shift);
                j[axis] = adjacent;
                let f = field.get(k, &j);
                let e = geometric_weight(model, k, &coords(&grid, &j));
                outflow += f * f * (base + e);
            }
            total += scale * lam.abs() * (inflow - outflow);
        }
    }
    total
}

/// The interior term `𝓘 = -(Δx)^d Σ_k μ̃_k(Δx) Σ_j f² exp(-Σλx)`.
pub fn interior_term(field: &Field, model: &KineticModel) -> f64 {
    let grid = *field.grid();
    let vol = grid.dx().powi(grid.dim() as i32);
    let mut total = 0.0;
    for k in 0..model.n_velocities() {
        let damping = crate::certify::damping_profile(model, k, grid.dx());
        let mut sum = 0.0;
        for (p, &v) in field.component(k).iter().enumerate() {
            let x = coords(&grid, &grid.interior_index(p));
            sum += v * v * geometric_weight(model, k, &x);
        }
        total -= vol * damping * sum;
    }
    total
}

/// Closed-form `𝓑` for the coplanar model, written out edge by edge. The
/// incoming weight on the right and top edges is `exp(U(N-1)Δx)`, the value
/// of `exp(-Σλx) e^{λΔx}` at `x = 1`.
pub fn coplanar_boundary_term(
    field: &Field,
    incoming: &FaceTrace,
    s: &CoplanarSteadyState,
    alpha: f64,
) -> f64 {
    coplanar_edges(field, incoming, s, alpha, false)
}

/// As [`coplanar_boundary_term`] but with `exp(UNΔx)` on the right and top
/// incoming weights. Agrees with the general evaluation only when those
/// incoming values vanish.
pub fn coplanar_boundary_term_unit_shift(
    field: &Field,
    incoming: &FaceTrace,
    s: &CoplanarSteadyState,
    alpha: f64,
) -> f64 {
    coplanar_edges(field, incoming, s, alpha, true)
}

fn coplanar_edges(
    field: &Field,
    incoming: &FaceTrace,
    s: &CoplanarSteadyState,
    alpha: f64,
    unit_shift: bool,
) -> f64 {
    let g = field.grid();
    let n = g.cells();
    let u = s.speed();
    let dx = g.dx();
    let fe = s.densities();
    let w = |k: usize| alpha / fe[k];
    let far = if unit_shift {
        (u * n as f64 * dx).exp()
    } else {
        (u * (n - 1) as f64 * dx).exp()
    };
    let left_in = incoming.values(Face::low(0), 0).unwrap();
    let bottom_in = incoming.values(Face::low(1), 2).unwrap();
    let right_in = incoming.values(Face::high(0), 1).unwrap();
    let top_in = incoming.values(Face::high(1), 3).unwrap();
    let mut b = 0.0;
    for t in 1..n {
        let o = t - 1;
        b += u * dx * left_in[o].powi(2) * (w(0) + (-u * dx).exp());
        b += u * dx * bottom_in[o].powi(2) * (w(2) + (-u * dx).exp());
        b -= u * dx * field.get(0, &[n - 1, t]).powi(2) * (w(0) + (-u * (n - 1) as f64 * dx).exp());
        b -= u * dx * field.get(2, &[t, n - 1]).powi(2) * (w(2) + (-u * (n - 1) as f64 * dx).exp());
        b -= u * dx * field.get(1, &[1, t]).powi(2) * (w(1) + (u * dx).exp());
        b -= u * dx * field.get(3, &[t, 1]).powi(2) * (w(3) + (u * dx).exp());
        b += u * dx * right_in[o].powi(2) * (w(1) + far);
        b += u * dx * top_in[o].powi(2) * (w(3) + far);
    }
    b
}

/// One recorded row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub t: f64,
    pub l2: f64,
    pub lyapunov: f64,
    pub boundary_term: f64,
    /// `L(fⁿ) / L(fⁿ⁻¹)` against the previous recorded row.
    pub per_step_ratio: Option<f64>,
    /// `‖fⁿ‖ ≤ C e^{-νt} ‖f⁰‖`.
    pub bound_ok: bool,
}

/// `L(next) ≤ (1 - μ₁Δt) L(prev) + 1e-12 L(f⁰)`.
pub fn assert_per_step_decay(
    prev: &StepDiagnostics,
    next: &StepDiagnostics,
    cert: &StabilityCertificate,
    dt: f64,
    initial_lyapunov: f64,
) -> bool {
    next.lyapunov <= (1.0 - cert.mu1() * dt) * prev.lyapunov + DECAY_SLACK * initial_lyapunov
}

/// `‖fⁿ‖ ≤ C e^{-νt} ‖f⁰‖` up to [`ENVELOPE_SLACK`].
pub fn within_envelope(l2: f64, t: f64, initial_l2: f64, cert: &StabilityCertificate) -> bool {
    l2 <= cert.envelope(t) * initial_l2 * (1.0 + ENVELOPE_SLACK)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Minus the slope of `log ‖f‖` against `t`.
    pub rate: f64,
    pub r2: f64,
    /// Index of the first sample used (the trailing half).
    pub window_start: usize,
    pub samples_used: usize,
}

/// Least-squares slope of `log l2` against `t` over the trailing half of
/// `trace`. A constant trace fits exactly, so it reports `r² = 1`.
pub fn fit_decay_rate(trace: &[(f64, f64)]) -> Result<DecayFit> {
    if trace.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: trace.len(),
        });
    }
    if let Some(&(_, bad)) = trace.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveNorm(bad));
    }
    let start = trace.len() / 2;
    let window = &trace[start..];
    let n = window.len() as f64;
    let mean_t = window.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = window.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for &(t, v) in window {
        let dt = t - mean_t;
        let dy = v.ln() - mean_y;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: 1,
        });
    }
    let slope = sty / stt;
    let ss_res = (syy - slope * sty).max(0.0);
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(DecayFit {
        rate: -slope,
        r2,
        window_start: start,
        samples_used: window.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{extract_outgoing, BoundaryLaw, CoplanarGainLaw, TrivialLaw};
    use crate::certify::certify_explicit;
    use crate::grid::l2_norm;
    use crate::model::coplanar_model;
    use crate::scheme::advect_with_trace;
    use crate::structure::{coplanar_lambda0, decompose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_state() -> CoplanarSteadyState {
        CoplanarSteadyState::new(1.0, [0.4, 0.3, 0.2, 0.6]).unwrap()
    }

    fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
        let vals = (0..4 * grid.interior_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_values(grid, 4, vals).unwrap()
    }

    fn random_trace(model: &KineticModel, grid: Grid, rng: &mut ChaCha8Rng) -> FaceTrace {
        let mut t = FaceTrace::zeros(model, grid);
        let vals: Vec<f64> = (0..t.stacked_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t.fill_from_stacked(&vals).unwrap();
        t
    }

    #[test]
    fn single_point_value() {
        let s = reference_state();
        let m = coplanar_model(&s, 1.0).unwrap();
        let g = Grid::new(2, 2).unwrap();
        let f = Field::constant(g, &[1.0; 4]);
        let l0 = coplanar_lambda0(&s);
        for alpha in [0.5, 3.0] {
            let expected = 0.25 * (12.5 * alpha + 2.0 * ((-0.5f64).exp() + 0.5f64.exp()));
            assert_relative_eq!(lyapunov_value(&f, &m, &l0, alpha).unwrap(), expected, max_relative = 1e-14);
        }
        assert_relative_eq!(2.0 * ((-0.5f64).exp() + 0.5f64.exp()), 4.510504, epsilon = 1e-6);
        assert_eq!(lyapunov_value(&Field::zeros(g, 4), &m, &l0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn trivial_law_boundary_term_is_non_positive() {
        let s = reference_state();
        let m = coplanar_model(&s, 1.0).unwrap();
        let l0 = coplanar_lambda0(&s);
        let g = Grid::new(2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let f = random_field(g, &mut rng);
            let tr = TrivialLaw.apply(&m, &extract_outgoing(&f, &m), 0).unwrap();
            assert!(boundary_term(&f, &tr, &m, &l0, 2.0) <= 0.0);
        }
        let zero = FaceTrace::zeros(&m, g);
        assert_eq!(boundary_term(&Field::zeros(g, 4), &zero, &m, &l0, 2.0), 0.0);
    }

    #[test]
    fn unit_shift_form_agrees_when_far_edges_are_zero() {
        let s = reference_state();
        let m = coplanar_model(&s, 1.0).unwrap();
        let l0 = coplanar_lambda0(&s);
        let g = Grid::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_field(g, &mut rng);
        let tr = CoplanarGainLaw::gain46(1.0, 1.0).apply(&m, &extract_outgoing(&f, &m), 0).unwrap();
        let general = boundary_term(&f, &tr, &m, &l0, 7.0);
        let printed = coplanar_boundary_term_unit_shift(&f, &tr, &s, 7.0);
        assert!((general - printed).abs() <= 1e-12 * general.abs().max(1.0));
        // with traffic on the far edges the two forms part ways
        let tr = random_trace(&m, g, &mut rng);
        let general = boundary_term(&f, &tr, &m, &l0, 7.0);
        let printed = coplanar_boundary_term_unit_shift(&f, &tr, &s, 7.0);
        assert!((general - printed).abs() > 1e-3);
    }

    #[test]
    fn advection_increment_is_bounded_by_split() {
        // L(f̃) - L(f) ≤ Δt (𝓘 + 𝓑)
        let s = reference_state();
        let m = coplanar_model(&s, 1.0).unwrap();
        let l0 = coplanar_lambda0(&s);
        let g = Grid::new(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let f = random_field(g, &mut rng);
            let tr = random_trace(&m, g, &mut rng);
            let dt = rng.gen_range(0.01..1.0) * g.dx();
            let adv = advect_with_trace(&f, &m, &tr, dt).unwrap();
            let alpha = 3.0;
            let lhs = lyapunov_value(&adv, &m, &l0, alpha).unwrap() - lyapunov_value(&f, &m, &l0, alpha).unwrap();
            let rhs = dt * (interior_term(&f, &m) + boundary_term(&f, &tr, &m, &l0, alpha));
            assert!(lhs <= rhs + 1e-13, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn per_step_decay_predicate() {
        let s = reference_state();
        let m = coplanar_model(&s, 1.0).unwrap();
        let dec = decompose(&m, &coplanar_lambda0(&s)).unwrap();
        let cert = certify_explicit(&m, &dec, 0.1).unwrap();
        let row = |l: f64| StepDiagnostics {
            step: 0,
            t: 0.0,
            l2: 0.0,
            lyapunov: l,
            boundary_term: 0.0,
            per_step_ratio: None,
            bound_ok: true,
        };
        assert!(assert_per_step_decay(&row(0.0), &row(0.0), &cert, 0.01, 0.0));
        assert!(assert_per_step_decay(&row(1.0), &row(0.5), &cert, 0.01, 1.0));
        assert!(!assert_per_step_decay(&row(1.0), &row(1.0), &cert, 0.01, 1.0));
    }

    #[test]
    fn fit_examples() {
        let exp_trace: Vec<(f64, f64)> = (0..50).map(|i| {
            let t = i as f64 * 0.1;
            (t, 3.0 * (-0.7 * t).exp())
        }).collect();
        let fit = fit_decay_rate(&exp_trace).unwrap();
        assert!((fit.rate - 0.7).abs() <= 1e-9);
        assert!((fit.r2 - 1.0).abs() <= 1e-12);
        assert_eq!(fit.window_start, 25);

        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0)).collect();
        let fit = fit_decay_rate(&flat).unwrap();
        assert_eq!(fit.rate, 0.0);
        assert_eq!(fit.r2, 1.0);

        let grow: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, (i as f64 * 0.1).exp())).collect();
        assert!((fit_decay_rate(&grow).unwrap().rate + 1.0).abs() <= 1e-9);

        assert!(matches!(fit_decay_rate(&flat[..5]), Err(Error::InsufficientData { .. })));
        let mut bad = flat.clone();
        bad[3].1 = 0.0;
        assert!(matches!(fit_decay_rate(&bad), Err(Error::NonPositiveNorm(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn general_matches_coplanar_closed_form(seed in 0u64..100_000, n in 2usize..12, alpha in 0.1f64..300.0) {
            let s = reference_state();
            let m = coplanar_model(&s, 1.0).unwrap();
            let l0 = coplanar_lambda0(&s);
            let g = Grid::new(2, n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let tr = random_trace(&m, g, &mut rng);
            let a = boundary_term(&f, &tr, &m, &l0, alpha);
            let b = coplanar_boundary_term(&f, &tr, &s, alpha);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }

        #[test]
        fn sandwich_bounds(seed in 0u64..100_000) {
            let s = reference_state();
            let m = coplanar_model(&s, 1.0).unwrap();
            let dec = decompose(&m, &coplanar_lambda0(&s)).unwrap();
            let cert = certify_explicit(&m, &dec, 0.1).unwrap();
            let g = Grid::new(2, 6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let l = lyapunov_value(&f, &m, &dec.lambda0, cert.alpha).unwrap();
            let n2 = l2_norm(&f).powi(2);
            prop_assert!(cert.alpha * cert.lambda_min * n2 <= l * (1.0 + 1e-14));
            prop_assert!(l <= 2.0 * cert.lambda_max * cert.alpha * n2 * (1.0 + 1e-14));
        }

        #[test]
        fn axis_swap_symmetry(seed in 0u64..100_000, n in 2usize..9) {
            // swapping x1 ↔ x2 together with components (1,2) ↔ (3,4)
            let s = reference_state();
            let m = coplanar_model(&s, 1.0).unwrap();
            let l0 = coplanar_lambda0(&s);
            let swapped_l0 = vec![l0[2], l0[3], l0[0], l0[1]];
            let g = Grid::new(2, n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let tr = random_trace(&m, g, &mut rng);
            let perm = [2usize, 3, 0, 1];
            let mut fs = Field::zeros(g, 4);
            for k in 0..4 {
                for j in g.interior_indices() {
                    fs.set(perm[k], &[j[1], j[0]], f.get(k, &j));
                }
            }
            let mut ts = FaceTrace::zeros(&m, g);
            for (face, k) in [(Face::low(0), 0), (Face::high(0), 1), (Face::low(1), 2), (Face::high(1), 3)] {
                let other = Face { axis: 1 - face.axis, side: face.side };
                let v = tr.values(face, k).unwrap().to_vec();
                ts.values_mut(other, perm[k]).unwrap().copy_from_slice(&v);
            }
            let a = boundary_term(&f, &tr, &m, &l0, 5.0);
            let b = boundary_term(&fs, &ts, &m, &swapped_l0, 5.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
