//! Self-check suite behind `kinlyap validate`. Each check takes the inputs a
//! mutation test needs to break it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boundary::TrivialLaw;
use crate::certify::{certify_explicit, SchemeKind};
use crate::grid::{l2_norm, FaceTrace, Field, Grid};
use crate::linalg::Matrix;
use crate::lyapunov::{
    assert_per_step_decay, boundary_term_with, coplanar_boundary_term, IncomingWeight, LyapunovWeights,
    StepDiagnostics,
};
use crate::model::{coplanar_model, CoplanarSteadyState, KineticModel};
use crate::scheme::{advect_with_trace, collision_explicit, collision_implicit, ImplicitSolver, Stepper};
use crate::structure::{coplanar_lambda0, decompose, verify_decomposition};

pub const RESIDUAL_TOL: f64 = 1e-10;
pub const EQUALITY_TOL: f64 = 1e-12;
const SEED: u64 = 20_251_016;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

pub fn reference_state() -> CoplanarSteadyState {
    CoplanarSteadyState::new(1.0, [0.4, 0.3, 0.2, 0.6]).expect("reference steady state")
}

pub fn random_field(grid: Grid, components: usize, rng: &mut impl Rng) -> Field {
    let vals = (0..components * grid.interior_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Field::from_values(grid, components, vals).expect("sized to the grid")
}

pub fn random_trace(model: &KineticModel, grid: Grid, rng: &mut impl Rng) -> FaceTrace {
    let mut t = FaceTrace::zeros(model, grid);
    let vals: Vec<f64> = (0..t.stacked_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    t.fill_from_stacked(&vals).expect("sized to the trace");
    t
}

pub fn check_decomposition(model: &KineticModel, lambda0: &[f64]) -> CheckResult {
    const NAME: &str = "decomposition residuals";
    match decompose(model, lambda0) {
        Ok(dec) => {
            let r = verify_decomposition(model, &dec).max();
            CheckResult::new(NAME, r <= RESIDUAL_TOL, format!("max residual {r:e}, rank {}", dec.rank))
        }
        Err(e) => CheckResult::new(NAME, false, e.to_string()),
    }
}

/// `αλ_m‖f‖² ≤ L(f) ≤ 2λ_Mα‖f‖²` on random fields.
pub fn check_sandwich(model: &KineticModel, lambda0: &[f64], fields: usize) -> CheckResult {
    const NAME: &str = "Lyapunov sandwich";
    let run = || -> crate::Result<(usize, f64)> {
        let dec = decompose(model, lambda0)?;
        let grid = Grid::new(model.dim(), 6)?;
        let cert = certify_explicit(model, &dec, grid.dx())?;
        let w = LyapunovWeights::new(model, grid, lambda0, cert.alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut bad = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..fields {
            let f = random_field(grid, model.n_velocities(), &mut rng);
            let l = w.value(&f);
            let n2 = l2_norm(&f).powi(2);
            let lo = cert.alpha * cert.lambda_min * n2;
            let hi = 2.0 * cert.lambda_max * cert.alpha * n2;
            worst = worst.max((lo - l) / l).max((l - hi) / l);
            if l < lo * (1.0 - EQUALITY_TOL) || l > hi * (1.0 + EQUALITY_TOL) {
                bad += 1;
            }
        }
        Ok((bad, worst))
    };
    match run() {
        Ok((bad, worst)) => CheckResult::new(NAME, bad == 0, format!("{bad} violations, worst margin {worst:e}")),
        Err(e) => CheckResult::new(NAME, false, e.to_string()),
    }
}

/// Each advected component stays within the range of its old values and
/// its incoming boundary values.
pub fn check_max_principle(model: &KineticModel, fields: usize) -> CheckResult {
    const NAME: &str = "advection max principle";
    let grid = Grid::new(model.dim(), 7).expect("valid grid");
    let dt = 0.9 * grid.dx() / model.max_speed_sum();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut bad = 0;
    for _ in 0..fields {
        let f = random_field(grid, model.n_velocities(), &mut rng);
        let tr = random_trace(model, grid, &mut rng);
        let out = match advect_with_trace(&f, model, &tr, dt) {
            Ok(o) => o,
            Err(e) => return CheckResult::new(NAME, false, e.to_string()),
        };
        for k in 0..model.n_velocities() {
            let boundary = grid.faces().filter_map(|face| tr.values(face, k)).flatten();
            let (lo, hi) = f
                .component(k)
                .iter()
                .chain(boundary)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if out.component(k).iter().any(|&v| v < lo || v > hi) {
                bad += 1;
            }
        }
    }
    CheckResult::new(NAME, bad == 0, format!("{bad} component violations over {fields} fields"))
}

/// `u = (P f)_{1..K-r}` per cell is unchanged by either collision step.
pub fn check_conservation(model: &KineticModel, lambda0: &[f64], cells: usize) -> CheckResult {
    const NAME: &str = "collision conservation";
    let dec = match decompose(model, lambda0) {
        Ok(d) => d,
        Err(e) => return CheckResult::new(NAME, false, e.to_string()),
    };
    let conserved = dec.conserved_dim();
    let u_rows = Matrix::from_fn(conserved, model.n_velocities(), |i, j| dec.p[(i, j)]);
    // smallest grid whose interior holds at least `cells` points
    let mut side = 2;
    while (side - 1usize).pow(model.dim() as u32) < cells {
        side += 1;
    }
    let grid = Grid::new(model.dim(), side).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let f = random_field(grid, model.n_velocities(), &mut rng);
    let dt = 0.05;
    let solver = match ImplicitSolver::build(model, dt) {
        Ok(s) => s,
        Err(e) => return CheckResult::new(NAME, false, e.to_string()),
    };
    let mut worst: f64 = 0.0;
    for out in [collision_explicit(&f, model, dt), collision_implicit(&f, &solver)] {
        for p in 0..grid.interior_count() {
            let before = u_rows.matvec(&f.cell(p));
            let after = u_rows.matvec(&out.cell(p));
            for (a, b) in before.iter().zip(&after) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    CheckResult::new(NAME, worst <= EQUALITY_TOL, format!("max drift {worst:e} over {} cells", grid.interior_count()))
}

/// `L(fⁿ⁺¹) ≤ (1 - μ₁Δt) L(fⁿ) + 1e-12 L(f⁰)` for `steps` steps of the
/// coplanar reference run on `cells` cells.
pub fn check_per_step_decay(cells: usize, steps: u64) -> CheckResult {
    const NAME: &str = "per-step Lyapunov decay";
    let run = || -> crate::Result<(u64, f64)> {
        let s = reference_state();
        let model = coplanar_model(&s, 1.0)?;
        let l0 = coplanar_lambda0(&s);
        let dec = decompose(&model, &l0)?;
        let grid = Grid::new(2, cells)?;
        let cert = certify_explicit(&model, &dec, grid.dx())?;
        let dt = cert.dt_auto();
        let w = LyapunovWeights::new(&model, grid, &l0, cert.alpha)?;
        let law = TrivialLaw;
        let mut stepper = Stepper::new(&model, &law, grid, dt, SchemeKind::Explicit, false)?;
        let mut f = Field::constant(grid, &[1.0; 4]);
        let row = |f: &Field, step: u64| StepDiagnostics {
            step,
            t: step as f64 * dt,
            l2: 0.0,
            lyapunov: w.value(f),
            boundary_term: 0.0,
            per_step_ratio: None,
            bound_ok: true,
        };
        let initial = w.value(&f);
        let mut prev = row(&f, 0);
        let mut bad = 0;
        for n in 1..=steps {
            stepper.step(&mut f)?;
            let next = row(&f, n);
            if !assert_per_step_decay(&prev, &next, &cert, dt, initial) {
                bad += 1;
            }
            prev = next;
        }
        Ok((bad, prev.lyapunov / initial))
    };
    match run() {
        Ok((bad, ratio)) => CheckResult::new(NAME, bad == 0, format!("{bad} violations in {steps} steps, L ratio {ratio:.6}")),
        Err(e) => CheckResult::new(NAME, false, e.to_string()),
    }
}

/// General-dimension `𝓑` (with the given incoming weighting) against the
/// coplanar closed form on random fields and traces.
pub fn check_dual_boundary(weight: IncomingWeight, samples: usize) -> CheckResult {
    const NAME: &str = "dual boundary-term evaluation";
    let s = reference_state();
    let model = coplanar_model(&s, 1.0).expect("reference model");
    let l0 = coplanar_lambda0(&s);
    let grid = Grid::new(2, 9).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let f = random_field(grid, 4, &mut rng);
        let tr = random_trace(&model, grid, &mut rng);
        let alpha = rng.gen_range(0.1..300.0);
        let a = boundary_term_with(&f, &tr, &model, &l0, alpha, weight);
        let b = coplanar_boundary_term(&f, &tr, &s, alpha);
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    CheckResult::new(NAME, worst <= EQUALITY_TOL, format!("max relative gap {worst:e} over {samples} samples"))
}

/// `Σ_k λ_{k0} f_k²` per cell does not grow across the implicit collision.
pub fn check_implicit_contraction(model: &KineticModel, lambda0: &[f64], dts: &[f64], cells: usize) -> CheckResult {
    const NAME: &str = "implicit collision contraction";
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let weighted = |v: &[f64]| v.iter().zip(lambda0).map(|(x, l)| l * x * x).sum::<f64>();
    let mut worst: f64 = 0.0;
    for &dt in dts {
        let solver = match ImplicitSolver::build(model, dt) {
            Ok(s) => s,
            Err(e) => return CheckResult::new(NAME, false, e.to_string()),
        };
        for _ in 0..cells {
            let b: Vec<f64> = (0..model.n_velocities()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solver.solve_cell(&b);
            let (before, after) = (weighted(&b), weighted(&x));
            worst = worst.max((after - before) / before);
        }
    }
    CheckResult::new(NAME, worst <= EQUALITY_TOL, format!("largest relative growth {worst:e}"))
}

/// The full suite on the coplanar reference model.
pub fn run_all() -> Vec<CheckResult> {
    let s = reference_state();
    let model = coplanar_model(&s, 1.0).expect("reference model");
    let l0 = coplanar_lambda0(&s);
    vec![
        check_decomposition(&model, &l0),
        check_sandwich(&model, &l0, 100),
        check_max_principle(&model, 100),
        check_conservation(&model, &l0, 1000),
        check_per_step_decay(10, 2000),
        check_dual_boundary(IncomingWeight::Shifted, 100),
        check_implicit_contraction(&model, &l0, &[0.05, 1.0, 100.0], 1000),
    ]
}

/// Prints one line per check; `true` when all pass.
pub fn cmd_validate() -> bool {
    let results = run_all();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    results.iter().all(|r| r.passed)
}
