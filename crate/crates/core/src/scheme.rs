//! Split time stepping: first-order upwind advection followed by an explicit
//! or implicit collision update.
//!
//! Advection is written as the convex combination
//!
//! ```text
//! f̃_{k,j} = (1 - Σ_i c_{ki}) f_{k,j} + Σ_i c_{ki} f_{k, j ∓ e_i},   c_{ki} = Δt |λ_{ki}| / Δx
//! ```
//!
//! with the upwind neighbour taken from the previous-step field, or from the
//! incoming boundary trace when it falls on a face. Terms are accumulated in
//! ascending axis order, so every entry point here (and the fused
//! [`Stepper`]) produces bitwise-identical values.

use rayon::prelude::*;

use crate::boundary::{extract_outgoing_into, BoundaryLaw, OutgoingTrace};
use crate::certify::SchemeKind;
use crate::error::{Error, Result};
use crate::grid::{Face, FaceTrace, FaceValues, Field, Grid};
use crate::linalg::{Lu, Matrix};
use crate::model::KineticModel;

/// Relative slack on the CFL test, absorbing the rounding in `dx / Σ|λ|`.
pub const CFL_SLACK: f64 = 1e-12;

/// Environment variable capping intra-run parallelism; `0` (the default) is
/// sequential.
pub const THREADS_ENV: &str = "KINLYAP_THREADS";

/// `Δx / max_k Σ_i |λ_{ki}|`.
pub fn cfl_limit(model: &KineticModel, grid: &Grid) -> f64 {
    grid.dx() / model.max_speed_sum()
}

pub fn check_cfl(model: &KineticModel, grid: &Grid, dt: f64) -> Result<()> {
    check_dt(dt)?;
    let dt_cfl = cfl_limit(model, grid);
    if dt > dt_cfl * (1.0 + CFL_SLACK) {
        return Err(Error::CflViolation { dt, dt_cfl });
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(())
}

fn check_shapes(field: &Field, model: &KineticModel) -> Result<()> {
    if field.components() != model.n_velocities() || field.grid().dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} components in {} dimensions, model has {} in {}",
            field.components(),
            field.grid().dim(),
            model.n_velocities(),
            model.dim()
        )));
    }
    Ok(())
}

/// Reads `KINLYAP_THREADS`; unset or unparsable means sequential.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
struct AxisTerm {
    axis: usize,
    weight: f64,
    /// `λ_{ki} > 0`: neighbour at `j - e_i`, else at `j + e_i`.
    positive: bool,
}

/// Precomputed upwind weights for one `(model, grid, dt)`.
#[derive(Debug, Clone)]
struct Advection {
    dim: usize,
    side: usize,
    rows: usize,
    keep: Vec<f64>,
    terms: Vec<Vec<AxisTerm>>,
}

impl Advection {
    fn new(model: &KineticModel, grid: &Grid, dt: f64) -> Self {
        let ratio = dt / grid.dx();
        let mut keep = Vec::new();
        let mut terms = Vec::new();
        for k in 0..model.n_velocities() {
            let mut sum = 0.0;
            let mut axes = Vec::new();
            for axis in 0..model.dim() {
                let v = model.speed(k, axis);
                if v != 0.0 {
                    let weight = ratio * v.abs();
                    sum += weight;
                    axes.push(AxisTerm {
                        axis,
                        weight,
                        positive: v > 0.0,
                    });
                }
            }
            keep.push(1.0 - sum);
            terms.push(axes);
        }
        Self {
            dim: grid.dim(),
            side: grid.side(),
            rows: grid.interior_count() / grid.side(),
            keep,
            terms,
        }
    }

    /// Row stride of `axis` (< d-1) in units of rows.
    fn row_stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 2 - axis) as u32)
    }

    /// Advects row `r` (all of `j_d` for fixed `j_1..j_{d-1}`) of component
    /// `k`. `src` is the component block.
    fn row(&self, k: usize, r: usize, src: &[f64], incoming: &FaceValues, out: &mut [f64]) {
        let n = self.side;
        let row = &src[r * n..(r + 1) * n];
        let keep = self.keep[k];
        for (o, &v) in out.iter_mut().zip(row) {
            *o = keep * v;
        }
        for term in &self.terms[k] {
            let c = term.weight;
            if term.axis + 1 < self.dim {
                let rs = self.row_stride(term.axis);
                let digit = (r / rs) % n;
                let face_row = |face: Face| {
                    let start = ((r / (rs * n)) * rs + r % rs) * n;
                    &incoming.values(face, k).expect("incoming component missing")[start..start + n]
                };
                let nb = if term.positive {
                    if digit == 0 {
                        face_row(Face::low(term.axis))
                    } else {
                        &src[(r - rs) * n..(r - rs + 1) * n]
                    }
                } else if digit == n - 1 {
                    face_row(Face::high(term.axis))
                } else {
                    &src[(r + rs) * n..(r + rs + 1) * n]
                };
                for (o, &v) in out.iter_mut().zip(nb) {
                    *o += c * v;
                }
            } else if term.positive {
                let b = incoming
                    .values(Face::low(term.axis), k)
                    .expect("incoming component missing")[r];
                out[0] += c * b;
                for t in 1..n {
                    out[t] += c * row[t - 1];
                }
            } else {
                let b = incoming
                    .values(Face::high(term.axis), k)
                    .expect("incoming component missing")[r];
                for t in 0..n - 1 {
                    out[t] += c * row[t + 1];
                }
                out[n - 1] += c * b;
            }
        }
    }
}

/// `A = I - (Δt/σ) Q`, factored once and reused for every cell and step.
#[derive(Debug, Clone)]
pub struct ImplicitSolver {
    matrix: Matrix,
    lu: Lu,
    dt: f64,
}

impl ImplicitSolver {
    pub fn build(model: &KineticModel, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let h = dt / model.sigma();
        let q = model.collision();
        let k = model.n_velocities();
        let matrix = Matrix::from_fn(k, k, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - h * q[(i, j)]
        });
        let lu = Lu::new(&matrix)?;
        Ok(Self { matrix, lu, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn lu(&self) -> &Lu {
        &self.lu
    }

    /// `‖L U - P A‖_max / ‖A‖_max`.
    pub fn relative_residual(&self) -> f64 {
        self.lu.reconstruction_residual(&self.matrix) / self.matrix.max_abs()
    }

    pub fn solve_cell(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }
}

/// `I + (Δt/σ) Q`.
pub fn explicit_update_matrix(model: &KineticModel, dt: f64) -> Matrix {
    let h = dt / model.sigma();
    let q = model.collision();
    let k = model.n_velocities();
    Matrix::from_fn(k, k, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta + h * q[(i, j)]
    })
}

#[derive(Debug, Clone)]
enum Collision {
    Explicit(Matrix),
    Implicit(ImplicitSolver),
}

impl Collision {
    fn new(model: &KineticModel, dt: f64, kind: SchemeKind) -> Result<Self> {
        Ok(match kind {
            SchemeKind::Explicit => Collision::Explicit(explicit_update_matrix(model, dt)),
            SchemeKind::Implicit => Collision::Implicit(ImplicitSolver::build(model, dt)?),
        })
    }

    /// Collides `len` cells held component-major in `input` (length `K len`)
    /// into `outs[k][off..off + len]`. `scratch` has the length of `input`.
    fn apply(&self, input: &[f64], len: usize, scratch: &mut [f64], outs: &mut [&mut [f64]], off: usize) {
        match self {
            Collision::Explicit(a) => explicit_cells(a, input, len, outs, off),
            Collision::Implicit(s) => {
                implicit_cells(&s.lu, input, len, scratch);
                for (k, out) in outs.iter_mut().enumerate() {
                    out[off..off + len].copy_from_slice(&scratch[k * len..(k + 1) * len]);
                }
            }
        }
    }
}

fn explicit_cells(a: &Matrix, input: &[f64], len: usize, outs: &mut [&mut [f64]], off: usize) {
    let kk = a.rows();
    for (k, out) in outs.iter_mut().enumerate() {
        let out = &mut out[off..off + len];
        let row = a.row(k);
        let first = &input[..len];
        for (o, &v) in out.iter_mut().zip(first) {
            *o = row[0] * v;
        }
        for m in 1..kk {
            let coef = row[m];
            for (o, &v) in out.iter_mut().zip(&input[m * len..(m + 1) * len]) {
                *o += coef * v;
            }
        }
    }
}

/// Same arithmetic as [`Lu::solve_in_place`], vectorized over cells.
fn implicit_cells(lu: &Lu, input: &[f64], len: usize, y: &mut [f64]) {
    let kk = lu.dim();
    let f = lu.packed();
    for (i, &p) in lu.permutation().iter().enumerate() {
        y[i * len..(i + 1) * len].copy_from_slice(&input[p * len..(p + 1) * len]);
    }
    for i in 0..kk {
        let (head, tail) = y.split_at_mut(i * len);
        let yi = &mut tail[..len];
        for j in 0..i {
            let l = f[(i, j)];
            for (a, &b) in yi.iter_mut().zip(&head[j * len..(j + 1) * len]) {
                *a -= l * b;
            }
        }
    }
    for i in (0..kk).rev() {
        let (head, tail) = y.split_at_mut((i + 1) * len);
        let yi = &mut head[i * len..];
        for j in (i + 1)..kk {
            let u = f[(i, j)];
            let yj = &tail[(j - i - 1) * len..(j - i) * len];
            for (a, &b) in yi.iter_mut().zip(yj) {
                *a -= u * b;
            }
        }
        let d = f[(i, i)];
        for a in yi.iter_mut() {
            *a /= d;
        }
    }
}

/// Upwind step with a given incoming trace; the trace must carry the
/// incoming components of `model` on `field`'s grid.
pub fn advect_with_trace(
    field: &Field,
    model: &KineticModel,
    incoming: &FaceTrace,
    dt: f64,
) -> Result<Field> {
    check_shapes(field, model)?;
    let grid = *field.grid();
    check_cfl(model, &grid, dt)?;
    if !incoming.matches_model(model) || incoming.grid() != &grid {
        return Err(Error::DimensionMismatch(
            "incoming trace does not match the model and grid".into(),
        ));
    }
    let adv = Advection::new(model, &grid, dt);
    let n = grid.side();
    let nint = grid.interior_count();
    let mut out = Field::zeros(grid, field.components());
    out.step = field.step;
    for k in 0..field.components() {
        let src = field.component(k);
        let dst = &mut out.values_mut()[k * nint..(k + 1) * nint];
        for r in 0..adv.rows {
            adv.row(k, r, src, incoming, &mut dst[r * n..(r + 1) * n]);
        }
    }
    Ok(out)
}

/// One upwind step with incoming values from `law` applied to the outgoing
/// traces of `field`.
pub fn advection_step(
    field: &Field,
    model: &KineticModel,
    law: &dyn BoundaryLaw,
    dt: f64,
) -> Result<Field> {
    check_shapes(field, model)?;
    check_cfl(model, field.grid(), dt)?;
    let incoming = incoming_trace(field, model, law)?;
    advect_with_trace(field, model, &incoming, dt)
}

/// `law` applied to the outgoing traces of `field`.
pub fn incoming_trace(field: &Field, model: &KineticModel, law: &dyn BoundaryLaw) -> Result<FaceTrace> {
    let mut outgoing = OutgoingTrace::zeros(model, *field.grid());
    extract_outgoing_into(field, &mut outgoing);
    let incoming = law.apply(model, &outgoing, field.step)?;
    if !incoming.matches_model(model) {
        return Err(Error::DimensionMismatch(format!(
            "law {} produced a trace with the wrong components",
            law.name()
        )));
    }
    Ok(incoming)
}

fn collide_field(field: &Field, collision: &Collision) -> Field {
    let nint = field.grid().interior_count();
    let mut out = Field::zeros(*field.grid(), field.components());
    out.step = field.step;
    let mut scratch = vec![0.0; field.values().len()];
    let mut outs: Vec<&mut [f64]> = out.values_mut().chunks_mut(nint).collect();
    collision.apply(field.values(), nint, &mut scratch, &mut outs, 0);
    out
}

/// Per cell `f ← (I + (Δt/σ) Q) f`.
pub fn collision_explicit(field: &Field, model: &KineticModel, dt: f64) -> Field {
    collide_field(field, &Collision::Explicit(explicit_update_matrix(model, dt)))
}

/// Per cell solves `(I - (Δt/σ) Q) f_new = f`.
pub fn collision_implicit(field: &Field, solver: &ImplicitSolver) -> Field {
    collide_field(field, &Collision::Implicit(solver.clone()))
}

/// Advection then collision; the step counter advances by one. An implicit
/// step without a `solver` factors one on the fly.
pub fn split_step(
    field: &Field,
    model: &KineticModel,
    law: &dyn BoundaryLaw,
    dt: f64,
    kind: SchemeKind,
    solver: Option<&ImplicitSolver>,
) -> Result<Field> {
    let advected = advection_step(field, model, law, dt)?;
    let mut next = match kind {
        SchemeKind::Explicit => collision_explicit(&advected, model, dt),
        SchemeKind::Implicit => match solver {
            Some(s) => collision_implicit(&advected, s),
            None => collision_implicit(&advected, &ImplicitSolver::build(model, dt)?),
        },
    };
    next.step = field.step + 1;
    Ok(next)
}

/// Fused split stepper: advects and collides row by row without storing the
/// intermediate field. Results are bitwise equal to [`split_step`] for any
/// thread count.
pub struct Stepper<'a> {
    model: &'a KineticModel,
    law: &'a dyn BoundaryLaw,
    grid: Grid,
    dt: f64,
    kind: SchemeKind,
    advection: Advection,
    collision: Collision,
    outgoing: OutgoingTrace,
    incoming: FaceTrace,
    next: Vec<f64>,
    tmp: Vec<f64>,
    scratch: Vec<f64>,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Stepper<'a> {
    /// With `force`, a time step above the CFL limit is accepted.
    pub fn new(
        model: &'a KineticModel,
        law: &'a dyn BoundaryLaw,
        grid: Grid,
        dt: f64,
        kind: SchemeKind,
        force: bool,
    ) -> Result<Self> {
        if grid.dim() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "grid is {}-dimensional, model is {}-dimensional",
                grid.dim(),
                model.dim()
            )));
        }
        if force {
            check_dt(dt)?;
        } else {
            check_cfl(model, &grid, dt)?;
        }
        let k = model.n_velocities();
        let n = grid.side();
        Ok(Self {
            model,
            law,
            grid,
            dt,
            kind,
            advection: Advection::new(model, &grid, dt),
            collision: Collision::new(model, dt, kind)?,
            outgoing: OutgoingTrace::zeros(model, grid),
            incoming: FaceTrace::zeros(model, grid),
            next: vec![0.0; k * grid.interior_count()],
            tmp: vec![0.0; k * n],
            scratch: vec![0.0; k * n],
            pool: None,
        })
    }

    /// Runs rows on a dedicated pool of `threads` workers; `0` or `1` is
    /// sequential.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    /// Computes the incoming trace for `field`; [`Stepper::advance`] uses it.
    pub fn prepare(&mut self, field: &Field) -> Result<&FaceTrace> {
        check_shapes(field, self.model)?;
        extract_outgoing_into(field, &mut self.outgoing);
        self.law
            .apply_into(self.model, &self.outgoing, field.step, &mut self.incoming)?;
        if !self.incoming.matches_model(self.model) {
            return Err(Error::DimensionMismatch(format!(
                "law {} produced a trace with the wrong components",
                self.law.name()
            )));
        }
        Ok(&self.incoming)
    }

    /// The trace from the last [`Stepper::prepare`].
    pub fn incoming(&self) -> &FaceTrace {
        &self.incoming
    }

    pub fn outgoing(&self) -> &OutgoingTrace {
        &self.outgoing
    }

    /// `prepare` followed by `advance`.
    pub fn step(&mut self, field: &mut Field) -> Result<()> {
        self.prepare(field)?;
        self.advance(field);
        Ok(())
    }

    /// Advances `field` one step using the prepared trace, which must have
    /// been computed from this same `field`.
    pub fn advance(&mut self, field: &mut Field) {
        debug_assert_eq!(field.grid(), &self.grid);
        let k = self.model.n_velocities();
        let n = self.grid.side();
        let nint = self.grid.interior_count();
        let rows = self.advection.rows;
        let adv = &self.advection;
        let collision = &self.collision;
        let incoming: &FaceValues = &self.incoming;
        let src = field.values();

        let run_rows = |r0: usize, r1: usize, tmp: &mut [f64], scratch: &mut [f64], outs: &mut [&mut [f64]]| {
            for r in r0..r1 {
                for c in 0..k {
                    adv.row(c, r, &src[c * nint..(c + 1) * nint], incoming, &mut tmp[c * n..(c + 1) * n]);
                }
                collision.apply(tmp, n, scratch, outs, (r - r0) * n);
            }
        };

        match &self.pool {
            None => {
                let mut outs: Vec<&mut [f64]> = self.next.chunks_mut(nint).collect();
                run_rows(0, rows, &mut self.tmp, &mut self.scratch, &mut outs);
            }
            Some(pool) => {
                let chunks = (pool.current_num_threads() * 4).min(rows).max(1);
                let per = rows.div_ceil(chunks);
                let mut blocks: Vec<Vec<&mut [f64]>> = (0..rows.div_ceil(per)).map(|_| Vec::new()).collect();
                for comp in self.next.chunks_mut(nint) {
                    for (b, piece) in blocks.iter_mut().zip(comp.chunks_mut(per * n)) {
                        b.push(piece);
                    }
                }
                pool.install(|| {
                    blocks.par_iter_mut().enumerate().for_each(|(i, outs)| {
                        let r0 = i * per;
                        let r1 = (r0 + per).min(rows);
                        let mut tmp = vec![0.0; k * n];
                        let mut scratch = vec![0.0; k * n];
                        run_rows(r0, r1, &mut tmp, &mut scratch, outs);
                    });
                });
            }
        }
        field.swap_values(&mut self.next);
        field.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{CoplanarGainLaw, TrivialLaw};
    use crate::model::{coplanar_model, CoplanarSteadyState};
    use crate::structure::{coplanar_lambda0, decompose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(fe: [f64; 4]) -> CoplanarSteadyState {
        CoplanarSteadyState::new(1.0, fe).unwrap()
    }

    fn reference_model(sigma: f64) -> KineticModel {
        coplanar_model(&state([0.4, 0.3, 0.2, 0.6]), sigma).unwrap()
    }

    fn uniform_model() -> KineticModel {
        coplanar_model(&state([0.25; 4]), 1.0).unwrap()
    }

    fn random_field(grid: Grid, k: usize, rng: &mut ChaCha8Rng) -> Field {
        let vals = (0..k * grid.interior_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_values(grid, k, vals).unwrap()
    }

    fn bits(f: &Field) -> Vec<u64> {
        f.values().iter().map(|v| v.to_bits()).collect()
    }

    fn single_cell(v: [f64; 4]) -> Field {
        Field::from_values(Grid::new(2, 2).unwrap(), 4, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_field_stays_zero() {
        let m = reference_model(1.0);
        let g = Grid::new(2, 6).unwrap();
        let out = advection_step(&Field::zeros(g, 4), &m, &TrivialLaw, 0.1).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_hand_expansion() {
        let m = reference_model(1.0);
        let g = Grid::new(2, 2).unwrap();
        let f = single_cell([0.9, -0.4, 0.3, 0.2]);
        let mut tr = FaceTrace::zeros(&m, g);
        tr.values_mut(Face::low(0), 0).unwrap()[0] = 0.7;
        let dt = 0.3;
        let c = dt / 0.5;
        let out = advect_with_trace(&f, &m, &tr, dt).unwrap();
        assert_eq!(out.values()[0], (1.0 - c) * 0.9 + c * 0.7);
        // trivial incoming for the others
        assert_eq!(out.values()[1], (1.0 - c) * -0.4);
    }

    #[test]
    fn unit_courant_number_shifts_in_boundary_zeros() {
        let m = reference_model(1.0);
        let g = Grid::new(2, 5).unwrap();
        let out = advection_step(&Field::constant(g, &[1.0; 4]), &m, &TrivialLaw, g.dx()).unwrap();
        for j in g.interior_indices() {
            let expected = if j[0] == 1 { 0.0 } else { 1.0 };
            assert_eq!(out.get(0, &j), expected);
        }
    }

    #[test]
    fn cfl_violation_is_an_error() {
        let m = reference_model(1.0);
        let g = Grid::new(2, 10).unwrap();
        let err = advection_step(&Field::zeros(g, 4), &m, &TrivialLaw, 0.11).unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
        assert!(Stepper::new(&m, &TrivialLaw, g, 0.11, SchemeKind::Explicit, true).is_ok());
        assert!(check_cfl(&m, &g, 0.1).is_ok());
    }

    #[test]
    fn explicit_collision_example() {
        let out = collision_explicit(&single_cell([1.0, 0.0, 0.0, 0.0]), &uniform_model(), 0.1);
        let expected = [0.975, -0.025, 0.025, 0.025];
        for (a, b) in out.values().iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn explicit_collision_fixes_null_vectors() {
        for fe in [[0.25; 4], [0.4, 0.3, 0.2, 0.6]] {
            let m = coplanar_model(&state(fe), 1.0).unwrap();
            // Q is rank one with first row q; the null space is spanned by
            // e_j - (q_j / q_0) e_0
            let q = m.collision().row(0).to_vec();
            for j in 1..4 {
                let mut v = [0.0; 4];
                v[j] = 1.0;
                v[0] = -q[j] / q[0];
                let out = collision_explicit(&single_cell(v), &m, 0.37);
                for (a, b) in out.values().iter().zip(v) {
                    assert!((a - b).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn implicit_rank_one_closed_forms() {
        let m = uniform_model();
        let u = [1.0, 1.0, -1.0, -1.0];
        for (dt, coef) in [(0.4, 0.1 / 1.4), (0.1, 0.025 / 1.1)] {
            let s = ImplicitSolver::build(&m, dt).unwrap();
            assert!(s.relative_residual() <= 1e-12);
            let out = collision_implicit(&single_cell([1.0, 0.0, 0.0, 0.0]), &s);
            for i in 0..4 {
                let e = if i == 0 { 1.0 } else { 0.0 };
                assert_relative_eq!(out.values()[i], e - coef * u[i], epsilon = 1e-15);
            }
        }
        let out = collision_implicit(&single_cell([0.0; 4]), &ImplicitSolver::build(&m, 0.4).unwrap());
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn implicit_matrix_is_well_conditioned() {
        // symmetric Q here, so A = I - (dt/σ)Q has every singular value ≥ 1
        for m in [uniform_model(), uniform_model().with_sigma(0.02).unwrap()] {
            for dt in [0.01, 0.05, 1.0, 100.0] {
                let s = ImplicitSolver::build(&m, dt).unwrap();
                assert!(s.matrix().min_singular_value() >= 0.99);
            }
        }
    }

    #[test]
    fn zero_collision_solver_is_identity() {
        let m = KineticModel::from_rows(&[vec![1.0], vec![-1.0]], &[vec![0.0; 2], vec![0.0; 2]], 1.0)
            .unwrap();
        let s = ImplicitSolver::build(&m, 0.3).unwrap();
        assert_eq!(s.matrix(), &Matrix::identity(2));
        let g = Grid::new(1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(g, 2, &mut rng);
        let adv = advection_step(&f, &m, &TrivialLaw, 0.1).unwrap();
        for kind in [SchemeKind::Explicit, SchemeKind::Implicit] {
            let out = split_step(&f, &m, &TrivialLaw, 0.1, kind, None).unwrap();
            assert_eq!(out.values(), adv.values());
            assert_eq!(out.step, 1);
        }
    }

    #[test]
    fn implicit_and_explicit_agree_for_tiny_steps() {
        let m = reference_model(1.0);
        let dt = 1e-6;
        let s = ImplicitSolver::build(&m, dt).unwrap();
        let f = single_cell([1.0; 4]);
        let a = collision_explicit(&f, &m, dt);
        let b = collision_implicit(&f, &s);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn fused_stepper_matches_composition_bitwise() {
        let m = reference_model(1.0);
        let law = CoplanarGainLaw::gain46(0.8, -0.3);
        let g = Grid::new(2, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f0 = random_field(g, 4, &mut rng);
        for kind in [SchemeKind::Explicit, SchemeKind::Implicit] {
            let dt = 0.07;
            let solver = ImplicitSolver::build(&m, dt).unwrap();
            let mut reference = f0.clone();
            let mut fused = f0.clone();
            let mut threaded = f0.clone();
            let mut st = Stepper::new(&m, &law, g, dt, kind, false).unwrap();
            let mut st3 = Stepper::new(&m, &law, g, dt, kind, false)
                .unwrap()
                .with_threads(3)
                .unwrap();
            for _ in 0..5 {
                let adv = advection_step(&reference, &m, &law, dt).unwrap();
                let mut composed = match kind {
                    SchemeKind::Explicit => collision_explicit(&adv, &m, dt),
                    SchemeKind::Implicit => collision_implicit(&adv, &solver),
                };
                composed.step = reference.step + 1;
                let split = split_step(&reference, &m, &law, dt, kind, Some(&solver)).unwrap();
                assert_eq!(bits(&split), bits(&composed));
                st.step(&mut fused).unwrap();
                st3.step(&mut threaded).unwrap();
                assert_eq!(bits(&fused), bits(&composed));
                assert_eq!(bits(&threaded), bits(&composed));
                assert_eq!(fused.step, composed.step);
                reference = composed;
            }
        }
    }

    #[test]
    fn stepper_handles_one_and_three_dimensions() {
        // 1-D: two opposite speeds; 3-D: a velocity with all axes active
        let m1 = KineticModel::from_rows(&[vec![1.0], vec![-0.5]], &[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0)
            .unwrap();
        let m3 = KineticModel::from_rows(&[vec![0.3, -0.2, 0.4], vec![-0.3, 0.2, -0.4]], &[vec![0.0; 2], vec![0.0; 2]], 1.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (m, g) in [(m1, Grid::new(1, 9).unwrap()), (m3, Grid::new(3, 5).unwrap())] {
            let law = crate::boundary::GeneralLinearLaw::for_model(&m, g, vec![(0, 0, 0.5), (1, 1, -0.25)])
                .unwrap();
            let f = random_field(g, 2, &mut rng);
            let dt = 0.9 * cfl_limit(&m, &g);
            let reference = split_step(&f, &m, &law, dt, SchemeKind::Explicit, None).unwrap();
            let mut fused = f.clone();
            Stepper::new(&m, &law, g, dt, SchemeKind::Explicit, false)
                .unwrap()
                .step(&mut fused)
                .unwrap();
            assert_eq!(bits(&fused), bits(&reference));
            // per-point oracle straight from the upwind formula
            let tr = incoming_trace(&f, &m, &law).unwrap();
            let adv = advect_with_trace(&f, &m, &tr, dt).unwrap();
            for k in 0..2 {
                for j in g.interior_indices() {
                    let mut expected = f.get(k, &j);
                    for axis in 0..g.dim() {
                        let v = m.speed(k, axis);
                        let mut nb = j.clone();
                        let upwind = if v > 0.0 {
                            nb[axis] -= 1;
                            nb[axis] == 0
                        } else {
                            nb[axis] += 1;
                            nb[axis] == g.cells()
                        };
                        let other = if upwind {
                            let face = if v > 0.0 { Face::low(axis) } else { Face::high(axis) };
                            tr.values(face, k).unwrap()[g.face_offset(face, &j)]
                        } else {
                            f.get(k, &nb)
                        };
                        expected -= dt / g.dx() * v.abs() * (f.get(k, &j) - other);
                    }
                    assert!((adv.get(k, &j) - expected).abs() <= 1e-14);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn advection_max_principle(seed in 0u64..10_000, bound in 0.0f64..2.0, frac in 0.05f64..1.0) {
            let m = reference_model(1.0);
            let g = Grid::new(2, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, 4, &mut rng);
            let mut tr = FaceTrace::zeros(&m, g);
            let vals: Vec<f64> = (0..tr.stacked_len()).map(|_| rng.gen_range(-bound..=bound)).collect();
            tr.fill_from_stacked(&vals).unwrap();
            let out = advect_with_trace(&f, &m, &tr, frac * cfl_limit(&m, &g)).unwrap();
            for k in 0..4 {
                prop_assert!(out.max_abs_component(k) <= f.max_abs_component(k).max(bound) * (1.0 + 1e-15));
            }
        }

        #[test]
        fn collision_conserves_null_coordinates(seed in 0u64..10_000, dt in 1e-3f64..10.0, sigma in 0.01f64..2.0) {
            let m = reference_model(sigma);
            let s = state([0.4, 0.3, 0.2, 0.6]);
            let dec = decompose(&m, &coplanar_lambda0(&s)).unwrap();
            let g = Grid::new(2, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, 4, &mut rng);
            let solver = ImplicitSolver::build(&m, dt).unwrap();
            let ex = collision_explicit(&f, &m, dt);
            let im = collision_implicit(&f, &solver);
            let kept = dec.conserved_dim();
            for p in 0..g.interior_count() {
                let before = dec.p.matvec(&f.cell(p));
                for after in [dec.p.matvec(&ex.cell(p)), dec.p.matvec(&im.cell(p))] {
                    for i in 0..kept {
                        prop_assert!((after[i] - before[i]).abs() <= 1e-12 * (1.0 + dt / sigma));
                    }
                }
            }
        }

        #[test]
        fn implicit_collision_contracts_weighted_norm(seed in 0u64..10_000, dt in 1e-3f64..100.0) {
            let s = state([0.4, 0.3, 0.2, 0.6]);
            let m = coplanar_model(&s, 0.02).unwrap();
            let l0 = coplanar_lambda0(&s);
            let g = Grid::new(2, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, 4, &mut rng);
            let out = collision_implicit(&f, &ImplicitSolver::build(&m, dt).unwrap());
            for p in 0..g.interior_count() {
                let w = |v: Vec<f64>| v.iter().zip(&l0).map(|(x, l)| l * x * x).sum::<f64>();
                let (a, b) = (w(out.cell(p)), w(f.cell(p)));
                prop_assert!(a <= b * (1.0 + 1e-12));
            }
        }
    }
}
