//! Experiment configuration: one JSON document covering data, trajectory,
//! hardware limits, transform, model and training, with named presets and
//! environment overrides.
//!
//! Resolution order: preset (or the built-in defaults), then a JSON file,
//! then `KTRAJ__SECTION__KEY=value` environment variables, then explicit
//! `section.key=value` overrides. Override values are parsed as JSON when
//! possible and taken as strings otherwise. Unknown keys are rejected at every
//! stage.
//!
//! ```json
//! {
//!   "data": { "height": 64, "width": 64, "n_frames": 8, "n_sequences": 200,
//!             "fractions": [0.8, 0.175, 0.025], "seed": 7 },
//!   "trajectory": { "n_shots": 6, "samples_per_shot": 64, "init": "radial", "k_extent": 0.5 },
//!   "limits": null,
//!   "nufft": { "kind": "fast", "kernel": null },
//!   "recon": { "base_channels": 4, "scales": 3, "temporal_radius": 1, "dropout": 0.0 },
//!   "train": { "total_epochs": 60, "mode": "per-frame", "freeze": true, "resets": true },
//!   "data_dir": "data",
//!   "run_dir": "runs/default"
//! }
//! ```
//!
//! `limits: null` selects scanner defaults with `samples_per_fov = max(H, W)`;
//! `kernel: null` selects the default Kaiser-Bessel kernel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::kinematics::KinematicLimits;
use crate::nufft::{GriddingKernel, NufftKind};
use crate::optimizer::LrSchedule;
use crate::pipeline::TrajectoryMode;
use crate::reconmodel::ReconConfig;
use crate::training::{build_schedule, TrainConfig};
use crate::trajectory::{fnv1a, TrajectoryInit, K_LIMIT};

pub const ENV_PREFIX: &str = "KTRAJ__";
pub const PRESETS: [&str; 2] = ["full-scale", "desk-small"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub n_shots: usize,
    pub samples_per_shot: usize,
    pub init: TrajectoryInit,
    /// Radius reached by the initial spokes.
    pub k_extent: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_shots: 16,
            samples_per_shot: 512,
            init: TrajectoryInit::Radial,
            k_extent: K_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NufftConfig {
    pub kind: NufftKind,
    pub kernel: Option<GriddingKernel>,
}

impl Default for NufftConfig {
    fn default() -> Self {
        Self {
            kind: NufftKind::Fast,
            kernel: None,
        }
    }
}

impl NufftConfig {
    pub fn kernel(&self) -> GriddingKernel {
        self.kernel.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub trajectory: TrajectoryConfig,
    pub limits: Option<KinematicLimits>,
    pub nufft: NufftConfig,
    pub recon: ReconConfig,
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            trajectory: TrajectoryConfig::default(),
            limits: None,
            nufft: NufftConfig::default(),
            recon: ReconConfig::default(),
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Named preset. `full-scale` carries the full-size training
    /// hyperparameters and sizes; `desk-small` is the 64x64, 8-frame,
    /// 60-epoch benchmark that runs on a single CPU.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full-scale" => Ok(Self {
                data: DataConfig {
                    height: 384,
                    width: 144,
                    n_frames: 8,
                    n_sequences: 4170,
                    ..Default::default()
                },
                ..Default::default()
            }),
            "desk-small" => {
                let mut c = Self::default();
                c.data = DataConfig {
                    n_sequences: 40,
                    fractions: [0.6, 0.2, 0.2],
                    ..Default::default()
                };
                c.trajectory.n_shots = 6;
                c.trajectory.samples_per_shot = 64;
                c.train = TrainConfig {
                    total_epochs: 60,
                    epochs_per_stage: 6,
                    final_stage_epochs: Some(12),
                    reset_period: 12,
                    batch_size: 4,
                    recon_lr: LrSchedule::multiplicative(1e-3, 0.995, 30),
                    ..Default::default()
                };
                c.run_dir = PathBuf::from("runs/desk-small");
                Ok(c)
            }
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_vec(self).expect("config serializes"))
    }

    /// Apply dotted-path overrides (`train.total_epochs=60`).
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            if key.starts_with("limits.") && value["limits"].is_null() {
                value["limits"] = serde_json::to_value(self.limits())?;
            }
            if key.starts_with("nufft.kernel.") && value["nufft"]["kernel"].is_null() {
                value["nufft"]["kernel"] = serde_json::to_value(self.nufft.kernel())?;
            }
            set_path(&mut value, key, raw)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `KTRAJ__SECTION__KEY` variables from `vars`.
    pub fn with_env(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join("."), v))
            })
            .collect();
        self.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Kinematic limits in force.
    pub fn limits(&self) -> KinematicLimits {
        self.limits
            .unwrap_or_else(|| KinematicLimits::scanner_defaults(self.data.height.max(self.data.width) as f64))
    }

    /// Number of trajectory frames the pipeline holds.
    pub fn trajectory_frames(&self) -> usize {
        match self.train.mode {
            TrajectoryMode::Shared => 1,
            TrajectoryMode::PerFrame => self.data.n_frames,
        }
    }

    /// Switch the trajectory mode; freezing is dropped for shared trajectories.
    pub fn with_mode(&self, mode: TrajectoryMode) -> Self {
        let mut c = self.clone();
        c.train.mode = mode;
        if mode == TrajectoryMode::Shared && c.train.freeze {
            c.train.freeze = false;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.recon.validate()?;
        self.recon.check_shape(self.data.height, self.data.width)?;
        self.train.validate()?;
        build_schedule(&self.train, self.trajectory_frames())?;
        self.limits().validate()?;
        self.nufft.kernel().validate()?;
        let t = &self.trajectory;
        if t.n_shots == 0 || t.samples_per_shot < 3 {
            return Err(Error::Config("trajectories need at least one shot of at least 3 samples".into()));
        }
        if !(t.k_extent > 0.0 && t.k_extent <= K_LIMIT) {
            return Err(Error::Config(format!("k_extent {} must lie in (0, {K_LIMIT}]", t.k_extent)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(Error::Config(format!("override {key:?}: {} is not a section", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_value(raw));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Build the config for a command: preset or defaults, optional file, then
/// environment and explicit overrides, then validation.
pub fn resolve(
    preset: Option<&str>,
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let base = match (preset, file) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let start = match preset {
                Some(name) => ExperimentConfig::preset(name)?,
                None => ExperimentConfig::default(),
            };
            let mut value = serde_json::to_value(start)?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, patch);
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (Some(name), None) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    let cfg = base
        .with_env(env)?
        .with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive object merge; non-object values in `patch` replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_path_creates_nested_sections() {
        let mut v = serde_json::json!({"limits": null});
        set_path(&mut v, "limits.g_max", "40").unwrap();
        assert_eq!(v["limits"]["g_max"], 40);
        set_path(&mut v, "run_dir", "out/x").unwrap();
        assert_eq!(v["run_dir"], "out/x");
        assert!(set_path(&mut v, "run_dir.x", "1").is_err());
        assert!(set_path(&mut v, "a..b", "1").is_err());
    }

    #[test]
    fn merge_is_recursive() {
        let mut a = serde_json::json!({"x": {"y": 1, "z": 2}, "w": 3});
        merge(&mut a, serde_json::json!({"x": {"y": 5}}));
        assert_eq!(a, serde_json::json!({"x": {"y": 5, "z": 2}, "w": 3}));
    }
}
