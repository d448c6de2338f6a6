//! Run configuration: one JSON document mirroring every stage's knobs.

use std::path::{Path, PathBuf};

use koopman_core::dataset::PreprocessConfig;
use koopman_core::excitation::ExcitationConfig;
use koopman_core::numerics::DEFAULT_RCOND;
use koopman_core::simulator::{builtin_field, OdeConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Root seed; every random choice derives from it.
    pub seed: u64,
    pub system: SystemConfig,
    pub excitation: ExcitationConfig,
    pub generate: GenerateConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub identification: IdentificationConfig,
    #[serde(default)]
    pub simulation: OdeConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `linear2d`, `duffing` or `vanderpol`.
    pub name: String,
    /// Empty selects the system defaults.
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub trials: usize,
    /// Seconds per trial.
    pub duration: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub validation_per_trial: usize,
    /// Seconds per validation window.
    pub validation_duration: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { validation_per_trial: 3, validation_duration: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// One model is identified per degree.
    pub degrees: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationConfig {
    pub rcond: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self { rcond: DEFAULT_RCOND }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Truncates validation windows to this many seconds; `null` keeps them whole.
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Measured trial CSVs to use instead of generated data.
    #[serde(default)]
    pub data: Vec<PathBuf>,
    /// Output directory when `--out` is not given.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        match value.get("version") {
            None => return Err(CliError::Config("missing required field `version`".into())),
            Some(v) if v.as_u64() != Some(u64::from(CONFIG_VERSION)) => {
                return Err(CliError::Config(format!("unsupported config version {v} (expected {CONFIG_VERSION})")));
            }
            Some(_) => {}
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let field = builtin_field(&self.system.name, &self.system.params).map_err(|e| CliError::Config(e.to_string()))?;
        use koopman_core::simulator::VectorField;
        self.excitation.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let g = &self.generate;
        if g.trials == 0 && self.paths.data.is_empty() {
            return bad("generate.trials must be at least 1".into());
        }
        if !(g.duration.is_finite() && g.duration > 0.0) {
            return bad(format!("generate.duration must be > 0, got {}", g.duration));
        }
        if g.x0.len() != field.state_dim() {
            return bad(format!("generate.x0 has {} entries, system '{}' has {} states", g.x0.len(), self.system.name, field.state_dim()));
        }
        if !(g.noise_std.is_finite() && g.noise_std >= 0.0) {
            return bad(format!("generate.noise_std must be >= 0, got {}", g.noise_std));
        }
        let ts = self.dataset.preprocess.ts;
        if !(ts.is_finite() && ts > 0.0) {
            return bad(format!("dataset.preprocess.ts must be > 0, got {ts}"));
        }
        if let Some(w) = self.dataset.preprocess.filter_window {
            if !(w.is_finite() && w > 0.0) {
                return bad(format!("dataset.preprocess.filter_window must be > 0 or null, got {w}"));
            }
        }
        let s = &self.dataset.split;
        if !(s.validation_duration.is_finite() && s.validation_duration > 0.0) {
            return bad(format!("dataset.split.validation_duration must be > 0, got {}", s.validation_duration));
        }
        if self.basis.degrees.is_empty() {
            return bad("basis.degrees must list at least one degree".into());
        }
        if self.basis.degrees.contains(&0) {
            return bad("basis.degrees entries must be >= 1".into());
        }
        let mut sorted = self.basis.degrees.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.basis.degrees.len() {
            return bad("basis.degrees contains duplicates".into());
        }
        if !(self.identification.rcond.is_finite() && self.identification.rcond >= 0.0) {
            return bad(format!("identification.rcond must be >= 0, got {}", self.identification.rcond));
        }
        koopman_core::simulator::substeps(&self.simulation, ts).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(h) = self.evaluation.horizon {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("evaluation.horizon must be > 0, got {h}"));
            }
        }
        Ok(())
    }
}

/// Independent stream seed derived from the root seed (SplitMix64 finalizer).
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    let mut z = root
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_EXCITATION: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_SPLIT: u64 = 3;
