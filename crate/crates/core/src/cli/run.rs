//! Certificate reports and simulation runs driven by a [`RunConfig`].

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::config::{BuiltModel, DtSpec, InitialSpec, LawSpec, RunConfig};
use super::svg::{write_svg, Series};
use crate::boundary::{admissible_gain_45, admissible_gains_46, BoundaryLaw};
use crate::certify::{certify, StabilityCertificate};
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, l2_norm, Field, Grid};
use crate::lyapunov::{
    boundary_term, fit_decay_rate, within_envelope, DecayFit, LyapunovWeights, StepDiagnostics,
    DECAY_SLACK,
};
use crate::scheme::{cfl_limit, threads_from_env, Stepper, CFL_SLACK};
use crate::structure::{decompose, verify_decomposition, DecompositionResiduals, StructuralDecomposition};

/// A run stops once `‖fⁿ‖` exceeds this multiple of `‖f⁰‖`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

pub const TRACE_HEADER: &str = "step,t,l2,log_l2,lyapunov,boundary_term";

/// Everything a run needs, resolved from a config.
#[derive(Debug)]
pub struct Prepared {
    pub built: BuiltModel,
    pub dec: StructuralDecomposition,
    pub grid: Grid,
    pub cert: StabilityCertificate,
    pub dt: f64,
    pub steps: u64,
    /// `dt ≤ min(dt_cfl, dt_source)`.
    pub certified: bool,
    pub law: Box<dyn BoundaryLaw>,
    pub initial: Field,
}

/// Resolves model, certificate, time step and initial data. `base` anchors
/// relative paths inside the config. An uncertified fixed `dt` is an error
/// unless `force` (or the config's own `force`) is set.
pub fn prepare(cfg: &RunConfig, base: &Path, force: bool) -> Result<Prepared> {
    cfg.validate()?;
    let built = cfg.model.build()?;
    let dec = decompose(&built.model, &built.lambda0)?;
    let grid = Grid::new(built.model.dim(), cfg.cells)?;
    let cert = certify(&built.model, &dec, grid.dx(), cfg.scheme)?;
    let force = force || cfg.force;
    let dt = match cfg.dt {
        DtSpec::Auto => cert.dt_auto(),
        DtSpec::Fixed(dt) => dt,
    };
    let certified = dt <= cert.dt_max() * (1.0 + CFL_SLACK);
    if !certified && !force {
        let dt_cfl = cfl_limit(&built.model, &grid);
        return Err(if dt > dt_cfl * (1.0 + CFL_SLACK) {
            Error::CflViolation { dt, dt_cfl }
        } else {
            Error::UncertifiedTimeStep {
                dt,
                bound: cert.dt_max(),
            }
        });
    }
    if !certified {
        log::warn!(
            "dt = {dt:e} exceeds the certified bound {:e}; running uncertified",
            cert.dt_max()
        );
    }
    warn_on_gains(&cfg.boundary, &built, &cert);
    let law = cfg.boundary.build(&built.model, grid, base)?;
    let initial = InitialSpec::build(cfg.initial.as_ref(), grid, built.model.n_velocities(), base)?;
    Ok(Prepared {
        steps: cfg.step_count(dt),
        built,
        dec,
        grid,
        cert,
        dt,
        certified,
        law,
        initial,
    })
}

fn warn_on_gains(law: &LawSpec, built: &BuiltModel, cert: &StabilityCertificate) {
    let Some(s) = &built.steady else { return };
    match *law {
        LawSpec::Gain45 { k } => {
            let bound = admissible_gain_45(cert.alpha, s);
            if k.abs() > bound {
                log::warn!("|k| = {} exceeds the admissible gain {bound}", k.abs());
            }
        }
        LawSpec::Gain46 { k1, k2 } => {
            let (b1, b2) = admissible_gains_46(cert.alpha, s);
            if k1.abs() > b1 || k2.abs() > b2 {
                log::warn!("gains ({k1}, {k2}) exceed the admissible bounds ({b1}, {b2})");
            }
        }
        _ => {}
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scheme: crate::certify::SchemeKind,
    pub law: String,
    #[serde(rename = "N")]
    pub cells: usize,
    pub dx: f64,
    pub dt: f64,
    pub steps_requested: u64,
    pub steps_taken: u64,
    pub t_end: f64,
    pub certified: bool,
    pub certificate: StabilityCertificate,
    pub initial_l2: f64,
    pub final_l2: f64,
    pub initial_lyapunov: f64,
    pub final_lyapunov: f64,
    /// Fit of `log ‖f‖` over the trailing half of the recorded rows.
    pub decay_rate: Option<f64>,
    pub r2: Option<f64>,
    pub diverged: bool,
    pub min_boundary_term: f64,
    pub max_boundary_term: f64,
    /// Recorded pairs with `L` above `(1 - μ₁Δt)^s` times its previous value.
    pub contraction_violations: u64,
    pub envelope_violations: u64,
    pub recorded_rows: usize,
    pub threads: usize,
    pub wall_time_s: f64,
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub rows: Vec<StepDiagnostics>,
    pub final_field: Field,
}

/// Advances the prepared run, recording every `record_every` steps and at
/// the last step. `𝓑` on a row is the boundary term of the trace that
/// advects that row's field.
pub fn execute(p: &Prepared, record_every: u64) -> Result<RunOutcome> {
    let started = Instant::now();
    let model = &p.built.model;
    let threads = threads_from_env();
    let weights = LyapunovWeights::new(model, p.grid, &p.built.lambda0, p.cert.alpha)?;
    let mut stepper =
        Stepper::new(model, p.law.as_ref(), p.grid, p.dt, p.cert.scheme_kind, true)?.with_threads(threads)?;
    let mut field = p.initial.clone();
    field.step = 0;
    let initial_l2 = l2_norm(&field);
    let initial_lyapunov = weights.value(&field);
    let contraction = 1.0 - p.cert.mu1() * p.dt;

    let mut rows: Vec<StepDiagnostics> = Vec::new();
    let mut diverged = false;
    let mut contraction_violations = 0;
    let mut envelope_violations = 0;
    let mut n = 0u64;
    loop {
        let trace = stepper.prepare(&field)?;
        if n.is_multiple_of(record_every) || n == p.steps {
            let t = n as f64 * p.dt;
            let l2 = l2_norm(&field);
            let lyapunov = weights.value(&field);
            let prev = rows.last().copied();
            let row = StepDiagnostics {
                step: n,
                t,
                l2,
                lyapunov,
                boundary_term: boundary_term(&field, trace, model, &p.built.lambda0, p.cert.alpha),
                per_step_ratio: prev.map(|r| lyapunov / r.lyapunov),
                bound_ok: within_envelope(l2, t, initial_l2, &p.cert),
            };
            if let Some(prev) = prev {
                let s = (n - prev.step) as f64;
                let bound = contraction.powf(s) * prev.lyapunov + s * DECAY_SLACK * initial_lyapunov;
                if !(lyapunov <= bound) {
                    contraction_violations += 1;
                }
            }
            if !row.bound_ok {
                envelope_violations += 1;
            }
            rows.push(row);
            if !(l2.is_finite() && l2 <= DIVERGENCE_FACTOR * initial_l2) {
                diverged = true;
                break;
            }
        }
        if n == p.steps {
            break;
        }
        stepper.advance(&mut field);
        n += 1;
    }

    let fit = fit_rows(&rows);
    let last = rows.last().expect("at least the initial row is recorded");
    let (min_b, max_b) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.boundary_term), hi.max(r.boundary_term))
    });
    let summary = RunSummary {
        scheme: p.cert.scheme_kind,
        law: p.law.name(),
        cells: p.grid.cells(),
        dx: p.grid.dx(),
        dt: p.dt,
        steps_requested: p.steps,
        steps_taken: last.step,
        t_end: last.t,
        certified: p.certified,
        certificate: p.cert.clone(),
        initial_l2,
        final_l2: last.l2,
        initial_lyapunov,
        final_lyapunov: last.lyapunov,
        decay_rate: fit.map(|f| f.rate),
        r2: fit.map(|f| f.r2),
        diverged,
        min_boundary_term: min_b,
        max_boundary_term: max_b,
        contraction_violations,
        envelope_violations,
        recorded_rows: rows.len(),
        threads,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        summary,
        rows,
        final_field: field,
    })
}

/// The decay fit used in summaries: `(t, l2)` of every recorded row.
pub fn fit_rows(rows: &[StepDiagnostics]) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.l2)).collect();
    match fit_decay_rate(&pts) {
        Ok(f) => Some(f),
        Err(e) => {
            log::info!("no decay fit: {e}");
            None
        }
    }
}

pub fn write_trace_csv<W: Write>(rows: &[StepDiagnostics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.t),
            fmt_f64(r.l2),
            fmt_f64(r.l2.ln()),
            fmt_f64(r.lyapunov),
            fmt_f64(r.boundary_term)
        )?;
    }
    Ok(())
}

/// Parses `(t, l2)` pairs back out of a trace CSV.
pub fn read_trace_norms(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad trace row {rec:?}")))
        };
        out.push((parse(1)?, parse(2)?));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace_file(rows: &[StepDiagnostics], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_trace_csv(rows, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn log_norm_series(label: &str, rows: &[StepDiagnostics]) -> Series {
    Series {
        label: label.to_string(),
        points: rows
            .iter()
            .filter(|r| r.l2 > 0.0 && r.l2.is_finite())
            .map(|r| (r.t, r.l2.ln()))
            .collect(),
    }
}

/// Prepares, executes and writes every output named in the config.
/// Divergence is recorded in the summary and does not prevent output.
pub fn cmd_run(cfg: &RunConfig, base: &Path, force: bool) -> Result<RunOutcome> {
    let prepared = prepare(cfg, base, force)?;
    log::info!(
        "running {} steps of dt = {:e} on N = {} ({} law)",
        prepared.steps,
        prepared.dt,
        cfg.cells,
        prepared.law.name()
    );
    let outcome = execute(&prepared, cfg.record_every)?;
    if outcome.summary.diverged {
        log::warn!("run diverged at step {}", outcome.summary.steps_taken);
    }
    let o = &cfg.outputs;
    if let Some(p) = &o.trace_csv {
        write_trace_file(&outcome.rows, &base.join(p))?;
    }
    if let Some(p) = &o.summary_json {
        write_json(&outcome.summary, &base.join(p))?;
    }
    if let Some(p) = &o.svg {
        let label = format!("N = {}", cfg.cells);
        write_svg(&base.join(p), "log ||f|| against t", &[log_norm_series(&label, &outcome.rows)])?;
    }
    if let Some(p) = &o.snapshot_csv {
        let path = base.join(p);
        let mut out = create(&path)?;
        outcome.final_field.write_snapshot(&mut out).map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibleGains {
    pub gain45_k_max: f64,
    pub gain46_k1_max: f64,
    pub gain46_k2_max: f64,
}

/// The certificate fields at top level plus context.
#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    #[serde(flatten)]
    pub certificate: StabilityCertificate,
    pub dx: f64,
    pub dt_auto: f64,
    /// `true` when there is no source restriction on `dt`.
    pub unbounded: bool,
    pub decomposition_residuals: DecompositionResiduals,
    pub lambda: Vec<f64>,
    pub admissible_gains: Option<AdmissibleGains>,
    pub notes: Vec<String>,
}

pub fn cmd_certify(cfg: &RunConfig) -> Result<CertifyReport> {
    cfg.validate()?;
    let built = cfg.model.build()?;
    let dec = decompose(&built.model, &built.lambda0)?;
    let grid = Grid::new(built.model.dim(), cfg.cells)?;
    let certificate = certify(&built.model, &dec, grid.dx(), cfg.scheme)?;
    let admissible_gains = built.steady.as_ref().map(|s| {
        let (k1, k2) = admissible_gains_46(certificate.alpha, s);
        AdmissibleGains {
            gain45_k_max: admissible_gain_45(certificate.alpha, s),
            gain46_k1_max: k1,
            gain46_k2_max: k2,
        }
    });
    let notes = vec![
        "C1 and C2 are lattice maxima over 17 points per axis, inflated by 1.05".to_string(),
        "gain bounds are sufficient conditions uniform in dx".to_string(),
    ];
    Ok(CertifyReport {
        dx: grid.dx(),
        dt_auto: certificate.dt_auto(),
        unbounded: certificate.dt_source_unbounded(),
        decomposition_residuals: verify_decomposition(&built.model, &dec),
        lambda: dec.lambda.clone(),
        admissible_gains,
        notes,
        certificate,
    })
}
