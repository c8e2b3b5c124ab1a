//! Declarative run configuration (TOML) with strict parsing and dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolver::{default_regularity, EvolverConfig, KickFilter, Renormalize, SplittingScheme};
use crate::geometry::TargetManifold;
use crate::grid::{GridSpec, PeriodicGrid};
use crate::nonlinearity::DEFAULT_DEALIAS_FACTOR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub points: usize,
    #[serde(default = "default_periods")]
    pub periods: Vec<f64>,
}

fn default_periods() -> Vec<f64> {
    vec![2.0 * std::f64::consts::PI]
}

impl GridSection {
    pub fn build(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::from_spec(&GridSpec { dim: self.dim, points: self.points, periods: self.periods.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSection {
    Sphere {
        ambient_dim: usize,
        #[serde(default = "one")]
        radius: f64,
    },
    Flat {
        ambient_dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

impl TargetSection {
    pub fn build(&self) -> Result<TargetManifold> {
        match *self {
            TargetSection::Sphere { ambient_dim, radius } => TargetManifold::round_sphere(ambient_dim, radius),
            TargetSection::Flat { ambient_dim } => {
                if ambient_dim == 0 {
                    return Err(Error::Config("flat target needs ambient_dim >= 1".into()));
                }
                Ok(TargetManifold::flat(ambient_dim))
            }
        }
    }
}

/// Localized perturbation added to the last ambient component before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub center: Vec<f64>,
}

fn default_width() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialKind {
    GreatCircle {
        #[serde(default = "unit_wave")]
        wave: Vec<i64>,
        #[serde(default)]
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    RandomBump {
        amplitude: f64,
        #[serde(default = "default_band")]
        band: usize,
        /// Falls back to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    FromFile {
        path: PathBuf,
    },
}

fn unit_wave() -> Vec<i64> {
    vec![1]
}

fn default_band() -> usize {
    4
}

/// Unknown keys are rejected by the tagged `kind` variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDataSpec {
    #[serde(flatten)]
    pub kind: InitialKind,
    #[serde(default)]
    pub bump: Option<BumpSpec>,
}

/// Evolver settings as written in a config file; `dt` and `k` may be left to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolverSection {
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Multiplies the step, whether given or defaulted.
    #[serde(default = "one")]
    pub dt_scale: f64,
    #[serde(default)]
    pub scheme: SplittingScheme,
    #[serde(default = "default_dealias")]
    pub dealias_factor: f64,
    #[serde(default)]
    pub renormalize: Renormalize,
    #[serde(default)]
    pub filter: KickFilter,
    #[serde(default)]
    pub k: Option<usize>,
}

fn default_dealias() -> f64 {
    DEFAULT_DEALIAS_FACTOR
}

impl Default for EvolverSection {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            dt: None,
            dt_scale: 1.0,
            scheme: SplittingScheme::default(),
            dealias_factor: DEFAULT_DEALIAS_FACTOR,
            renormalize: Renormalize::default(),
            filter: KickFilter::default(),
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_name")]
    pub name: String,
    /// Write a checkpoint after every this many records (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub energy_equality: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_name() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir(), name: default_name(), checkpoint_every: 0, energy_equality: false }
    }
}

impl OutputSection {
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_eps_list")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_eps_list() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_deltas() -> Vec<f64> {
    (4..=10).map(|j| 2f64.powi(-j)).collect()
}

fn default_radii() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

fn default_workers() -> usize {
    1
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            epsilons: default_eps_list(),
            deltas: default_deltas(),
            radii: default_radii(),
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub target: TargetSection,
    pub initial: InitialDataSpec,
    #[serde(default)]
    pub evolver: EvolverSection,
    pub duration: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: StudySection,
}

fn default_stride() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse `text`, apply `key=value` overrides (dotted keys, TOML values), then validate.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be non-negative, got {}", self.duration)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be positive".into()));
        }
        if !(self.evolver.dt_scale > 0.0 && self.evolver.dt_scale.is_finite()) {
            return Err(Error::Config("dt_scale must be positive".into()));
        }
        if self.study.workers == 0 {
            return Err(Error::Config("study.workers must be positive".into()));
        }
        self.grid.build()?;
        self.target.build()?;
        Ok(())
    }

    /// Evolver settings with `dt` (given or the default for `u0`) and `k` filled in.
    pub fn resolve_evolver(&self, u0: &crate::grid::Field) -> Result<EvolverConfig> {
        let e = &self.evolver;
        let dt = match e.dt {
            Some(dt) => dt,
            None => crate::evolver::default_time_step(u0)?,
        } * e.dt_scale;
        let cfg = EvolverConfig {
            epsilon: e.epsilon,
            dt,
            scheme: e.scheme,
            dealias_factor: e.dealias_factor,
            renormalize: e.renormalize,
            filter: e.filter,
            k: e.k.unwrap_or_else(|| default_regularity(self.grid.dim)),
        };
        cfg.validate(&u0.grid)?;
        Ok(cfg)
    }

    /// Copy with the evolver section pinned to resolved values, so reruns are exact.
    pub fn resolved(&self, evolver: &EvolverConfig) -> RunConfig {
        let mut c = self.clone();
        c.evolver = EvolverSection {
            epsilon: evolver.epsilon,
            dt: Some(evolver.dt),
            dt_scale: 1.0,
            scheme: evolver.scheme,
            dealias_factor: evolver.dealias_factor,
            renormalize: evolver.renormalize,
            filter: evolver.filter,
            k: Some(evolver.k),
        };
        c
    }

    /// SHA-256 of the canonical JSON form, ignoring the output section.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override must look like key=value: {assignment}")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in path {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
