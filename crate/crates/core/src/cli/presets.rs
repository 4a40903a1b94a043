//! The three reproduction presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CoplanarSpec, DtSpec, LawSpec, ModelSpec, Outputs, RunConfig, SCHEMA_VERSION};
use super::run::{cmd_run, log_norm_series, write_json, RunSummary};
use super::svg::write_svg;
use crate::certify::SchemeKind;
use crate::error::{Error, Result};

pub const STEADY_STATE: [f64; 4] = [0.4, 0.3, 0.2, 0.6];
pub const T_FINAL: f64 = 5.0;
/// Grids for the first simulation (not fixed by the source figures).
pub const SIM1_GRIDS: [usize; 4] = [10, 20, 40, 80];
/// Keeps the first simulation's traces near two thousand rows.
pub const SIM1_RECORD_EVERY: u64 = 2000;
pub const SIM3_SIGMAS: [f64; 3] = [1.0, 0.1, 0.02];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Simulation {
    /// Trivial law on four grids with the automatic time step.
    Grids,
    /// Three laws at `Δx = 0.05`, `Δt = 0.01`.
    Laws,
    /// Implicit collision at three `σ`, plus a forced explicit run.
    Stiff,
}

impl FromStr for Simulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Simulation::Grids),
            "sim2" => Ok(Simulation::Laws),
            "sim3" => Ok(Simulation::Stiff),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected sim1, sim2 or sim3"))),
        }
    }
}

impl fmt::Display for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Simulation::Grids => "sim1",
            Simulation::Laws => "sim2",
            Simulation::Stiff => "sim3",
        })
    }
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub name: String,
    pub config: RunConfig,
}

fn base_config(sigma: f64, cells: usize) -> RunConfig {
    RunConfig {
        schema: SCHEMA_VERSION,
        model: ModelSpec::Coplanar(CoplanarSpec {
            speed: 1.0,
            f_e: STEADY_STATE,
            sigma,
        }),
        cells,
        dt: DtSpec::Auto,
        t_final: Some(T_FINAL),
        steps: None,
        scheme: SchemeKind::Explicit,
        boundary: LawSpec::Trivial,
        initial: None,
        outputs: Outputs::default(),
        force: false,
        record_every: 1,
    }
}

/// The runs of one preset, without output paths.
pub fn preset_runs(sim: Simulation) -> Vec<PresetRun> {
    match sim {
        Simulation::Grids => SIM1_GRIDS
            .iter()
            .map(|&n| PresetRun {
                name: format!("sim1_N{n}"),
                config: RunConfig {
                    record_every: SIM1_RECORD_EVERY,
                    ..base_config(1.0, n)
                },
            })
            .collect(),
        Simulation::Laws => [
            ("trivial", LawSpec::Trivial),
            ("gain45", LawSpec::Gain45 { k: 1.0 }),
            ("gain46", LawSpec::Gain46 { k1: 1.0, k2: 1.0 }),
        ]
        .into_iter()
        .map(|(name, law)| PresetRun {
            name: format!("sim2_{name}"),
            config: RunConfig {
                dt: DtSpec::Fixed(0.01),
                boundary: law,
                // far above the explicit source bound, as in the source runs
                force: true,
                ..base_config(1.0, 20)
            },
        })
        .collect(),
        Simulation::Stiff => {
            let mut runs: Vec<PresetRun> = SIM3_SIGMAS
                .iter()
                .map(|&sigma| PresetRun {
                    name: format!("sim3_implicit_sigma{sigma}"),
                    config: RunConfig {
                        dt: DtSpec::Fixed(0.05),
                        scheme: SchemeKind::Implicit,
                        ..base_config(sigma, 10)
                    },
                })
                .collect();
            runs.push(PresetRun {
                name: "sim3_explicit_sigma0.02".into(),
                config: RunConfig {
                    dt: DtSpec::Fixed(0.05),
                    force: true,
                    ..base_config(0.02, 10)
                },
            });
            runs
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproduceEntry {
    pub name: String,
    pub trace_csv: PathBuf,
    pub summary: RunSummary,
}

/// Runs every preset run (concurrently), writing `<name>.csv`,
/// `<name>.json`, `<sim>.svg` and `<sim>_summary.json` under `outdir`.
pub fn cmd_reproduce(sim: Simulation, outdir: &Path) -> Result<Vec<ReproduceEntry>> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let runs = preset_runs(sim);
    let results: Vec<Result<(ReproduceEntry, super::svg::Series)>> = runs
        .into_par_iter()
        .map(|run| {
            let trace = PathBuf::from(format!("{}.csv", run.name));
            let mut cfg = run.config;
            cfg.outputs = Outputs {
                trace_csv: Some(trace.clone()),
                summary_json: Some(format!("{}.json", run.name).into()),
                svg: None,
                snapshot_csv: None,
            };
            let outcome = cmd_run(&cfg, outdir, false)?;
            log::info!("{}: final l2 {:e}", run.name, outcome.summary.final_l2);
            let series = log_norm_series(&run.name, &outcome.rows);
            Ok((
                ReproduceEntry {
                    name: run.name,
                    trace_csv: trace,
                    summary: outcome.summary,
                },
                series,
            ))
        })
        .collect();
    let mut entries = Vec::new();
    let mut series = Vec::new();
    for r in results {
        let (e, s) = r?;
        entries.push(e);
        series.push(s);
    }
    write_svg(&outdir.join(format!("{sim}.svg")), &format!("{sim}: log ||f|| against t"), &series)?;
    write_json(&entries, &outdir.join(format!("{sim}_summary.json")))?;
    Ok(entries)
}
