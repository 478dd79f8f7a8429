//! Vector-space augmentations. The weak preset is light noise plus
//! coordinate dropout; the strong preset composes `N` ops per sample from a
//! small pool at magnitude `M / 30`, in the spirit of RandAugment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Batch;
use crate::error::{Error, Result};
use crate::Matrix;

const MAX_MAGNITUDE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Weak noise std as a fraction of the data std.
    pub weak_noise: f64,
    pub weak_dropout: f64,
    /// Ops composed per sample by the strong preset.
    pub strong_ops: usize,
    /// Strong magnitude on the 0..=30 scale.
    pub strong_magnitude: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_noise: 0.05,
            weak_dropout: 0.1,
            strong_ops: 3,
            strong_magnitude: 15.0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            weak_noise: 0.0,
            weak_dropout: 0.0,
            strong_ops: 0,
            strong_magnitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_as("augment")
    }

    /// Validation with errors reported under config section `section`.
    pub fn validate_as(&self, section: &str) -> Result<()> {
        if !(self.weak_noise >= 0.0) || !self.weak_noise.is_finite() {
            return Err(Error::config(format!("{section}.weak_noise"), "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.weak_dropout) {
            return Err(Error::config(format!("{section}.weak_dropout"), "must lie in [0, 1]"));
        }
        if !(0.0..=MAX_MAGNITUDE).contains(&self.strong_magnitude) {
            return Err(Error::config(format!("{section}.strong_magnitude"), "must lie in [0, 30]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Weak,
    Strong,
}

/// A single stochastic op; parameters are absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    /// Additive `N(0, std²)` per coordinate.
    Noise { std: f64 },
    /// Zero each coordinate with probability `p`.
    Dropout { p: f64 },
    /// Multiply the whole sample by `U[1 - spread, 1 + spread]`.
    Scale { spread: f64 },
    /// Negate each coordinate with probability `p`.
    SignFlip { p: f64 },
}

impl AugOp {
    fn apply<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) {
        match *self {
            AugOp::Noise { std } => {
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += std * z;
                }
            }
            AugOp::Dropout { p } => {
                for v in x.iter_mut() {
                    if rng.random_bool(p) {
                        *v = 0.0;
                    }
                }
            }
            AugOp::Scale { spread } => {
                let s = 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0);
                x.iter_mut().for_each(|v| *v *= s);
            }
            AugOp::SignFlip { p } => {
                for v in x.iter_mut() {
                    if rng.random_bool(p) {
                        *v = -*v;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Augmenter {
    preset: Preset,
    /// Weak: applied in order. Strong: the pool ops are drawn from.
    pipeline: Vec<AugOp>,
    ops_per_sample: usize,
    rng: ChaCha8Rng,
}

impl Augmenter {
    /// `data_std` sets the noise scale, usually the pooled training std.
    pub fn new(preset: Preset, cfg: &AugmentConfig, data_std: f64, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (pipeline, ops_per_sample) = match preset {
            Preset::Weak => (
                vec![
                    AugOp::Noise {
                        std: cfg.weak_noise * data_std,
                    },
                    AugOp::Dropout { p: cfg.weak_dropout },
                ],
                0,
            ),
            Preset::Strong => {
                let m = cfg.strong_magnitude / MAX_MAGNITUDE;
                (
                    vec![
                        AugOp::Noise { std: m * data_std },
                        AugOp::Dropout { p: 0.5 * m },
                        AugOp::Scale { spread: 0.5 * m },
                        AugOp::SignFlip { p: 0.2 * m },
                    ],
                    cfg.strong_ops,
                )
            }
        };
        Ok(Self {
            preset,
            pipeline,
            ops_per_sample,
            rng,
        })
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn pipeline(&self) -> &[AugOp] {
        &self.pipeline
    }

    pub fn augment(&mut self, batch: &Batch) -> Batch {
        let mut out: Matrix = batch.features.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            match self.preset {
                Preset::Weak => {
                    for op in &self.pipeline {
                        op.apply(row, &mut self.rng);
                    }
                }
                Preset::Strong => {
                    for _ in 0..self.ops_per_sample {
                        let op = self.pipeline[self.rng.random_range(0..self.pipeline.len())];
                        op.apply(row, &mut self.rng);
                    }
                }
            }
        }
        batch
            .with_features(out)
            .expect("augmentation keeps the batch shape")
    }
}
