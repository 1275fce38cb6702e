//! Run configuration: sectioned TOML with every parameter defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::ActivationParams;
use crate::circulation::CircuitParams;
use crate::coupling::sis::SisParams;
use crate::coupling::SaddleOptions;
use crate::electrophysiology::EpParams;
use crate::error::{Error, Result};
use crate::fibers::{AngleSet, FiberRule};
use crate::geometry::GeometrySpec;
use crate::mechanics::{BaseBcVariant, MaterialParams};
use crate::preflow::{AccelerationOptions, InflationOptions, PrerunOptions, RecoveryOptions, ResidualLoads};

/// Named active-tension distributions (n_f, n_s, n_n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossFiberPreset {
    I,
    Ii,
    Iii,
    Iv,
    V,
}

impl CrossFiberPreset {
    pub fn proportions(self) -> [f64; 3] {
        match self {
            Self::I => [0.7, 0.3, 0.0],
            Self::Ii => [1.0, 0.3, 0.0],
            Self::Iii => [1.0, 0.0, 0.0],
            Self::Iv => [0.7, 0.0, 0.3],
            Self::V => [1.0, 0.0, 0.3],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        toml::Value::String(name.to_ascii_lowercase())
            .try_into()
            .map_err(|_| Error::Config {
                line: None,
                message: format!("unknown cross-fiber preset `{name}` (expected i, ii, iii, iv or v)"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberConfig {
    pub rule: FiberRule,
    pub angles: AngleSet,
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self {
            rule: FiberRule::DRbm,
            angles: AngleSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanicsConfig {
    pub material: MaterialParams,
    pub base_bc: BaseBcVariant,
    /// Overrides the material's (n_f, n_s, n_n) when set.
    pub cross_fibers: Option<CrossFiberPreset>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    pub saddle: SaddleOptions,
    pub sis: SisParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreflowConfig {
    pub residual: ResidualLoads,
    pub recovery: RecoveryOptions,
    /// End-diastolic volume targets (mL), LV then RV.
    pub ed_volumes: [f64; 2],
    pub inflation: InflationOptions,
    pub prerun: PrerunOptions,
    /// Coupled beats recorded before the 0D acceleration; 0 skips it.
    pub emulator_beats: usize,
    pub emulator_bins: usize,
    pub acceleration: AccelerationOptions,
}

impl Default for PreflowConfig {
    fn default() -> Self {
        Self {
            residual: ResidualLoads::default(),
            recovery: RecoveryOptions::default(),
            ed_volumes: [137.0, 137.0],
            inflation: InflationOptions::default(),
            prerun: PrerunOptions::default(),
            emulator_beats: 3,
            emulator_bins: 80,
            acceleration: AccelerationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Coupled heartbeats after initialization.
    pub beats: usize,
    /// VTK snapshot cadence in mechanics steps (0 = none).
    pub snapshot_every: usize,
    /// Checkpoint cadence in mechanics steps (0 = none).
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("output"),
            beats: 3,
            snapshot_every: 100,
            checkpoint_every: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub fibers: FiberConfig,
    pub electrophysiology: EpParams,
    pub activation: ActivationParams,
    pub mechanics: MechanicsConfig,
    pub circulation: CircuitParams,
    pub coupling: CouplingConfig,
    pub preflow: PreflowConfig,
    pub output: OutputConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of the key named in a deserialization message.
fn line_of_key(text: &str, message: &str) -> Option<usize> {
    let key = message.split('`').nth(1)?;
    let key = key.rsplit('.').next()?;
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Recursively overlays `user` onto `base`.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses configuration text; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::default().overlay(text)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config {
            line: None,
            message: e.to_string(),
        })?;
        merge(&mut base, user);
        let mut cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| {
            let message = e.message().trim().to_string();
            Error::Config {
                line: line_of_key(text, &message),
                message,
            }
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::default().overlay_file(path)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.overlay(&text).map_err(|e| match e {
            Error::Config { line, message } => Error::Config {
                line,
                message: format!("{}: {message}", path.display()),
            },
            e => e,
        })
    }

    fn resolve(&mut self) {
        if let Some(p) = self.mechanics.cross_fibers {
            let [f, s, n] = p.proportions();
            let m = &mut self.mechanics.material;
            (m.n_f, m.n_s, m.n_n) = (f, s, n);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| Error::Config {
                line: None,
                message: format!("[{section}] {e}"),
            })
        };
        wrap("geometry", self.geometry.validate())?;
        wrap("fibers", self.fibers.angles.validate())?;
        wrap("electrophysiology", self.electrophysiology.validate())?;
        wrap("activation", self.activation.validate())?;
        wrap("mechanics", self.mechanics.material.validate())?;
        wrap("circulation", self.circulation.validate())?;
        if !(self.coupling.sis.dt > 0.0) {
            return wrap("coupling", Err(Error::InvalidParameter("time step must be positive".into())));
        }
        if self.preflow.ed_volumes.iter().any(|v| !(*v > 0.0)) {
            return wrap("preflow", Err(Error::InvalidParameter("end-diastolic volumes must be positive".into())));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            line: None,
            message: e.to_string(),
        })
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let text = self.to_toml_string().unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Settings sized for a workstation run of the default biventricle:
    /// coarser time steps, widened fronts on the fine EP mesh and no
    /// residual tension during reference recovery.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.electrophysiology.tau = 1e-4;
        c.electrophysiology.conductivity_scale = 30.0;
        c.electrophysiology.pacing.radius = 6e-3;
        c.coupling.sis.dt = 1e-3;
        c.preflow.residual.ta = 0.0;
        c.preflow.acceleration.dt = 1e-3;
        c.preflow.emulator_beats = 1;
        c
    }

    /// Named starting points: `full` (all defaults) and `desk`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config {
                line: None,
                message: format!("unknown preset `{other}` (expected full or desk)"),
            }),
        }
    }
}
