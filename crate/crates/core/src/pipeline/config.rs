use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::drain::DrainConfig;
use crate::judge::JudgeConfig;
use crate::model::{ModelConfig, PretrainConfig};
use crate::objectives::{FocalParams, LossKind};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub logs: PathBuf,
    pub labels: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            logs: PathBuf::from("HDFS.log"),
            labels: PathBuf::from("anomaly_label.csv"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length: 64, stride: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Stratified sample drawn from all windows; `None` keeps the whole pool.
    pub sample_size: Option<usize>,
    pub train_fraction: f64,
    /// Extra held-out windows drawn outside the sample; 0 disables.
    pub test_size: usize,
    pub test_anomaly_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sample_size: None,
            train_fraction: 0.9,
            test_size: 0,
            test_anomaly_rate: 0.03,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: JudgeConfig,
}

/// Ablation arm: input representation plus objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    /// Raw whitespace tokens of the unparsed messages, cross-entropy.
    A,
    /// Event IDs, cross-entropy.
    B,
    /// Event IDs, focal loss.
    C,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::A, Arm::B, Arm::C];

    pub fn name(self) -> &'static str {
        match self {
            Arm::A => "A",
            Arm::B => "B",
            Arm::C => "C",
        }
    }

    pub fn uses_text(self) -> bool {
        self == Arm::A
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub paths: Paths,
    /// Root seed; each stage derives its own from this and its name.
    pub seed: u64,
    pub drain: DrainConfig,
    pub window: WindowConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub judge: JudgeSettings,
    /// When set, overrides the input representation and the loss.
    pub arm: Option<Arm>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seed: 42,
            drain: DrainConfig::default(),
            window: WindowConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            judge: JudgeSettings::default(),
            arm: None,
        }
    }
}

/// First eight bytes (little endian) of `sha256(root || label)`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// Sets `path` (dot separated) inside a JSON document. The value is parsed
/// as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), PipelineError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| PipelineError::Config(format!("`{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(PipelineError::Config("empty override path".into()))
}

impl ExperimentConfig {
    /// Reads a JSON config and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default()).expect("config serializes"),
        };
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let config: Self = serde_json::from_value(doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.drain.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        self.judge.config.validate().map_err(|e| cfg(&e))?;
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(1);
        model.validate().map_err(|e| cfg(&e))?;
        if self.window.stride == 0 || self.window.stride > self.window.length || self.window.length == 0 {
            return Err(PipelineError::Config("window stride must lie in 1..=length".into()));
        }
        if !self.arm.is_some_and(Arm::uses_text) {
            model.check_window(self.window.length).map_err(|e| cfg(&e))?;
        }
        if !(0.0..1.0).contains(&self.dataset.test_anomaly_rate) {
            return Err(PipelineError::Config("dataset.test_anomaly_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Loss after applying the arm override.
    pub fn effective_loss(&self) -> LossKind {
        match self.arm {
            None => self.train.loss,
            Some(Arm::A | Arm::B) => LossKind::CrossEntropy,
            Some(Arm::C) => match self.train.loss {
                LossKind::Focal(p) => LossKind::Focal(p),
                LossKind::CrossEntropy => LossKind::Focal(FocalParams::default()),
            },
        }
    }

    pub fn uses_text(&self) -> bool {
        self.arm.is_some_and(Arm::uses_text)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let overrides = vec![
            ("drain.depth".to_string(), "5".to_string()),
            ("judge.model".to_string(), "gpt-3.5-turbo".to_string()),
            ("judge.fixtures".to_string(), "fx".to_string()),
            ("train.learning_rate".to_string(), "5e-5".to_string()),
            ("arm".to_string(), "\"B\"".to_string()),
        ];
        let c = ExperimentConfig::load(None, &overrides).unwrap();
        assert_eq!(c.drain.depth, 5);
        assert_eq!(c.judge.config.model, "gpt-3.5-turbo");
        assert_eq!(c.judge.config.fixtures, Some(PathBuf::from("fx")));
        assert_eq!(c.train.learning_rate, 5e-5);
        assert_eq!(c.arm, Some(Arm::B));
        assert_eq!(c.effective_loss(), LossKind::CrossEntropy);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let o = vec![("drain.depth".to_string(), "\"deep\"".to_string())];
        assert!(matches!(ExperimentConfig::load(None, &o), Err(PipelineError::Config(_))));
        let o = vec![("drain.depth".to_string(), "1".to_string())];
        assert!(matches!(ExperimentConfig::load(None, &o), Err(PipelineError::Config(_))));
    }

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "dataset"));
        assert_ne!(derive_seed(1, "train"), derive_seed(2, "train"));
    }

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
    }
}
