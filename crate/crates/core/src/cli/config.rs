//! JSON run configuration (`"schema": 1`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryLaw, CoplanarGainLaw, GeneralLinearLaw, TrivialLaw};
use crate::certify::SchemeKind;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::Matrix;
use crate::model::{coplanar_model, CoplanarSteadyState, KineticModel};
use crate::structure::coplanar_lambda0;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelSpec,
    #[serde(rename = "N")]
    pub cells: usize,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default)]
    pub boundary: LawSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub force: bool,
    #[serde(default = "one")]
    pub record_every: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Coplanar(CoplanarSpec),
    Generic(GenericSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoplanarSpec {
    #[serde(rename = "U")]
    pub speed: f64,
    pub f_e: [f64; 4],
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSpec {
    pub velocities: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub collision: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Diagonal of `Λ₀`; must make `Λ₀ Q` symmetric.
    pub lambda0: Vec<f64>,
}

/// A model with the data needed downstream.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: KineticModel,
    pub lambda0: Vec<f64>,
    pub steady: Option<CoplanarSteadyState>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<BuiltModel> {
        match self {
            ModelSpec::Coplanar(c) => {
                let s = CoplanarSteadyState::new(c.speed, c.f_e)?;
                Ok(BuiltModel {
                    model: coplanar_model(&s, c.sigma)?,
                    lambda0: coplanar_lambda0(&s),
                    steady: Some(s),
                })
            }
            ModelSpec::Generic(g) => Ok(BuiltModel {
                model: KineticModel::new(
                    Matrix::from_rows(&g.velocities)?,
                    Matrix::from_rows(&g.collision)?,
                    g.sigma,
                )?,
                lambda0: g.lambda0.clone(),
                steady: None,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DtSpec {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for DtSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DtSpec::Auto => s.serialize_str("auto"),
            DtSpec::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DtSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(DtSpec::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(DtSpec::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "dt must be a number or \"auto\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawSpec {
    #[default]
    Trivial,
    Gain45 {
        k: f64,
    },
    Gain46 {
        k1: f64,
        k2: f64,
    },
    Linear {
        matrix_csv: PathBuf,
    },
}

impl LawSpec {
    /// `base` resolves a relative `matrix_csv`.
    pub fn build(&self, model: &KineticModel, grid: Grid, base: &Path) -> Result<Box<dyn BoundaryLaw>> {
        Ok(match self {
            LawSpec::Trivial => Box::new(TrivialLaw),
            LawSpec::Gain45 { k } => Box::new(CoplanarGainLaw::gain45(*k)),
            LawSpec::Gain46 { k1, k2 } => Box::new(CoplanarGainLaw::gain46(*k1, *k2)),
            LawSpec::Linear { matrix_csv } => {
                Box::new(GeneralLinearLaw::from_csv(&base.join(matrix_csv), model, grid)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// The same `K`-vector at every interior point.
    Constant(Vec<f64>),
    /// A field snapshot CSV.
    SnapshotCsv(PathBuf),
}

impl InitialSpec {
    pub fn build(spec: Option<&Self>, grid: Grid, components: usize, base: &Path) -> Result<Field> {
        match spec {
            None => Ok(Field::constant(grid, &vec![1.0; components])),
            Some(InitialSpec::Constant(v)) => {
                if v.len() != components {
                    return Err(Error::DimensionMismatch(format!(
                        "initial vector has {} entries, model has {components} velocities",
                        v.len()
                    )));
                }
                Ok(Field::constant(grid, v))
            }
            Some(InitialSpec::SnapshotCsv(p)) => {
                let path = base.join(p);
                let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                Field::read_snapshot(grid, components, file)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        match (self.t_final, self.steps) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config("give exactly one of t_final and steps".into()))
            }
            (Some(t), None) if !(t >= 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!("t_final must be non-negative, got {t}")))
            }
            _ => {}
        }
        if self.cells < 2 {
            return Err(Error::Config(format!("N must be at least 2, got {}", self.cells)));
        }
        if let DtSpec::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps for time step `dt`: `steps`, or `ceil(t_final / dt)`
    /// with a relative guard so that `5 / 0.01` gives 500.
    pub fn step_count(&self, dt: f64) -> u64 {
        match (self.steps, self.t_final) {
            (Some(n), _) => n,
            (None, Some(t)) => {
                let ratio = t / dt;
                let nearest = ratio.round();
                if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
                    nearest as u64
                } else {
                    ratio.ceil() as u64
                }
            }
            (None, None) => 0,
        }
    }
}
