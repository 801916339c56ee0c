use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ContaminationSpec;
use crate::error::{Error, Result};
use crate::orchestrator::{AblationMode, OptimizerPolicy};

/// Environment variable naming the root that relative output directories
/// are resolved against.
pub const OUTPUT_ENV: &str = "HYBRID_SOD_OUTPUT";

/// Dataset location and grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root holding `images/`, `labels_real/`, `labels_coarse/` and `val/`.
    pub root: PathBuf,
    pub num_groups: usize,
    /// Real labels placed in group 1.
    pub num_real: usize,
    /// Compute coarse maps for images that have none on disk.
    pub generate_coarse: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { root: PathBuf::from("data"), num_groups: 10, num_real: 1000, generate_coarse: false }
    }
}

/// Network widths and input resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub rnet_size: usize,
    pub snet_size: usize,
    pub rnet_channels: [usize; 5],
    pub snet_channels: [usize; 5],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            rnet_size: 288,
            snet_size: 320,
            rnet_channels: [16, 32, 64, 128, 128],
            snet_channels: [16, 32, 64, 128, 128],
        }
    }
}

/// Contamination magnitudes; per-sample seeds are derived from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContaminationConfig {
    pub rotation_degrees: (f64, f64),
    pub crop_fraction: (f64, f64),
    pub occlusion_area_fraction: (f64, f64),
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        let d = ContaminationSpec::default();
        ContaminationConfig {
            rotation_degrees: d.rotation_degrees,
            crop_fraction: d.crop_fraction,
            occlusion_area_fraction: d.occlusion_area_fraction,
        }
    }
}

impl ContaminationConfig {
    pub fn spec(&self) -> ContaminationSpec {
        ContaminationSpec {
            rotation_degrees: self.rotation_degrees,
            crop_fraction: self.crop_fraction,
            occlusion_area_fraction: self.occlusion_area_fraction,
            ..ContaminationSpec::default()
        }
    }
}

/// Everything a run needs. Loaded from TOML; every key is optional and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ablation_mode: AblationMode,
    pub augment: bool,
    pub data: DataConfig,
    pub networks: NetworkConfig,
    pub optimizer: OptimizerPolicy,
    pub contamination: ContaminationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            ablation_mode: AblationMode::Full,
            augment: true,
            data: DataConfig::default(),
            networks: NetworkConfig::default(),
            optimizer: OptimizerPolicy::default(),
            contamination: ContaminationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.num_groups < 2 {
            return Err(Error::Config(format!("data.num_groups must be at least 2, got {}", self.data.num_groups)));
        }
        if self.data.num_real == 0 {
            return Err(Error::Config("data.num_real must be positive".into()));
        }
        let n = &self.networks;
        if n.rnet_size < 16 || n.snet_size < 16 {
            return Err(Error::Config("network input sizes must be at least 16".into()));
        }
        for (name, ch) in [("rnet_channels", n.rnet_channels), ("snet_channels", n.snet_channels)] {
            if ch.contains(&0) {
                return Err(Error::Config(format!("networks.{name} must be positive")));
            }
        }
        self.optimizer.validate()?;
        self.contamination.spec().validate()
    }

    /// The output directory, with relative paths placed under
    /// `$HYBRID_SOD_OUTPUT` when that variable is set.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) if self.output_dir.is_relative() && !root.is_empty() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}

/// Dotted paths whose values differ between two configurations, formatted
/// as `path: old -> new`.
pub fn config_diff(old: &RunConfig, new: &RunConfig) -> Vec<String> {
    let a = serde_json::to_value(old).expect("config serializes");
    let b = serde_json::to_value(new).expect("config serializes");
    let mut out = Vec::new();
    diff_values("", &a, &b, &mut out);
    out
}

fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_values(&p, u, v, out),
                    (u, v) => out.push(format!("{p}: {} -> {}", show(u), show(v))),
                }
            }
        }
        _ if a != b => out.push(format!("{path}: {a} -> {b}")),
        _ => {}
    }
}

fn show(v: Option<&serde_json::Value>) -> String {
    v.map_or_else(|| "(absent)".into(), ToString::to_string)
}
