use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::losses::LossConfig;
use crate::network::{AdamWConfig, MlpArchitecture};

/// Hidden widths of the student MLP; input and output sizes come from the
/// data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            feature_dim: 32,
        }
    }
}

/// Train/test files in the binary dataset format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub classes_per_task: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Synthetic stream, used unless `dataset` is set.
    pub data: SyntheticSpec,
    pub dataset: Option<DatasetFiles>,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    /// The two student views: weak for student 1, strong for student 2.
    pub augment: AugmentConfig,
    /// Augmentation of the baseline's own loss (weak preset).
    pub er_augment: AugmentConfig,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub memory_batch_size: usize,
    /// Record per-batch cosine and drift diagnostics.
    pub diagnostics: bool,
    /// Evaluate every this many batches into `curve.csv`; 0 disables it.
    pub eval_every: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: SyntheticSpec::default(),
            dataset: None,
            model: ModelConfig::default(),
            // a little above the optimizer's own default: tasks here last
            // only 80 steps
            optimizer: AdamWConfig {
                lr: 1.5e-3,
                ..AdamWConfig::default()
            },
            fusion: FusionConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            er_augment: AugmentConfig::default(),
            buffer_capacity: 40,
            batch_size: 10,
            memory_batch_size: 10,
            diagnostics: true,
            eval_every: 0,
            output_dir: None,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
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

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            self.data.validate()?;
        }
        if let Some(ds) = &self.dataset {
            if ds.classes_per_task == 0 {
                return Err(Error::config("dataset.classes_per_task", "must be >= 1"));
            }
        }
        if self.model.feature_dim == 0 || self.model.hidden_dims.contains(&0) {
            return Err(Error::config("model", "all widths must be >= 1"));
        }
        let o = &self.optimizer;
        positive("optimizer.lr", o.lr)?;
        positive("optimizer.eps", o.eps)?;
        if !(0.0..1.0).contains(&o.beta1) {
            return Err(Error::config("optimizer.beta1", format!("must be in [0, 1), got {}", o.beta1)));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("optimizer.beta2", format!("must be in [0, 1), got {}", o.beta2)));
        }
        if !(o.weight_decay >= 0.0) || !o.weight_decay.is_finite() {
            return Err(Error::config(
                "optimizer.weight_decay",
                format!("must be >= 0, got {}", o.weight_decay),
            ));
        }
        self.fusion.validate()?;
        if self.fusion.num_students != 2 {
            return Err(Error::config(
                "fusion.num_students",
                format!("the trainer runs exactly 2 students, got {}", self.fusion.num_students),
            ));
        }
        self.loss.validate()?;
        self.augment.validate_as("augment")?;
        self.er_augment.validate_as("er_augment")?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn architecture(&self, input_dim: usize, num_classes: usize) -> MlpArchitecture {
        MlpArchitecture {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            feature_dim: self.model.feature_dim,
            num_classes_total: num_classes,
        }
    }
}
