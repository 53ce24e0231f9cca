use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DymlError, Result};
use crate::losses::{BaselineKind, LossConfig, LossKind};
use crate::taxonomy::{Dataset, Split, SyntheticSpec};
use crate::trainer::{Method, TrainConfig};

/// Where the data comes from: a synthetic spec, or DYML1 files when both
/// paths are given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

impl DatasetConfig {
    /// Train and test splits, read from files or generated.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match (&self.train_path, &self.test_path) {
            (Some(train), Some(test)) => Ok((Dataset::load(train, Split::Train)?, Dataset::load(test, Split::Test)?)),
            (None, None) => crate::taxonomy::generate_synthetic(&self.synthetic),
            _ => Err(DymlError::InvalidConfig("give both train_path and test_path or neither".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: LossKind,
    /// Restricts a baseline to the labels of one scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self { kind: LossKind::CslCls, scale: None }
    }
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        Method { kind: self.kind, scale: self.scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Baseline used by the single- versus multi-scale study.
    pub baseline: BaselineKind,
    /// Methods of the benchmark study.
    pub methods: Vec<LossKind>,
    /// Methods tracked by the conflict study.
    pub conflict_methods: Vec<LossKind>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineKind::Cosface,
            methods: LossKind::BENCHMARK.to_vec(),
            conflict_methods: vec![LossKind::Baseline(BaselineKind::Cosface), LossKind::CslCls],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], out_dir: None }
    }
}

/// A complete experiment description, stored as TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: RunConfig,
    pub method: MethodConfig,
    pub dataset: DatasetConfig,
    pub loss: LossConfig,
    pub trainer: TrainConfig,
    pub study: StudyConfig,
}

pub const DEFAULT_OUT_DIR: &str = "dyml-out";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DymlError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DymlError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DymlError::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(DymlError::InvalidConfig("seeds must not be empty".into()));
        }
        if self.dataset.train_path.is_none() {
            self.dataset.synthetic.validate()?;
            let m = self.dataset.synthetic.num_scales();
            self.method.method().validate(m)?;
            if matches!(self.method.kind, LossKind::CslCls | LossKind::CslPair | LossKind::CslJoint) {
                self.loss.margins_for(m)?;
            }
        }
        self.loss.validate()?;
        self.trainer.validate()
    }

    /// The config without its output directory, as canonical TOML.
    pub fn canonical(&self) -> Result<String> {
        let mut c = self.clone();
        c.experiment.out_dir = None;
        c.to_toml()
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> Result<String> {
        Ok(Sha256::digest(self.canonical()?.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Canonical config as JSON, for report echoes.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut c = self.clone();
        c.experiment.out_dir = None;
        serde_json::to_value(&c).map_err(|e| DymlError::Format(e.to_string()))
    }

    /// Output directory: `--out`, then `DYML_OUT`, then the config, then
    /// `dyml-out`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os("DYML_OUT").filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| self.experiment.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}
