use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{RawDataset, TaskStream};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::Matrix;

/// Gaussian clusters with means on a sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub classes_per_task: usize,
    /// Radius of the sphere the class means are drawn on.
    pub radius: f64,
    /// Within-class standard deviation.
    pub sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Fixed data seed; the run seed is used when absent.
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            dim: 32,
            classes_per_task: 4,
            radius: 5.0,
            sigma: 1.0,
            train_per_class: 200,
            test_per_class: 100,
            seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("data.{field}"), msg));
        if self.num_classes == 0 {
            return bad("num_classes", "must be >= 1".into());
        }
        if self.dim == 0 {
            return bad("dim", "must be >= 1".into());
        }
        if self.classes_per_task == 0 || !self.num_classes.is_multiple_of(self.classes_per_task) {
            return bad(
                "classes_per_task",
                format!(
                    "must divide num_classes = {}, got {}",
                    self.num_classes, self.classes_per_task
                ),
            );
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad("sigma", format!("must be > 0, got {}", self.sigma));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return bad("radius", format!("must be > 0, got {}", self.radius));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("train_per_class", "train and test counts must be >= 1".into());
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.num_classes / self.classes_per_task.max(1)
    }
}

fn gaussian_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws class means uniformly on the radius-`R` sphere, shuffles the class
/// order, then samples `N(mean, σ²I)` train and test points per class.
pub fn generate_synthetic(spec: &SyntheticSpec, run_seed: u64) -> Result<TaskStream> {
    spec.validate()?;
    let mut rng = substream(spec.seed.unwrap_or(run_seed), Stream::Data);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v = gaussian_vec(spec.dim, &mut rng);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| x * spec.radius / norm).collect();
            }
        })
        .collect();

    let mut class_order: Vec<usize> = (0..spec.num_classes).collect();
    rand::seq::SliceRandom::shuffle(class_order.as_mut_slice(), &mut rng);

    let mut sample = |per_class: usize| -> Result<RawDataset> {
        let n = per_class * spec.num_classes;
        let mut data = Vec::with_capacity(n * spec.dim);
        let mut labels = Vec::with_capacity(n);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let noise = gaussian_vec(spec.dim, &mut rng);
                data.extend(mean.iter().zip(&noise).map(|(m, z)| m + spec.sigma * z));
                labels.push(c);
            }
        }
        Ok(RawDataset {
            features: Matrix::from_vec(n, spec.dim, data)?,
            labels,
            num_classes: spec.num_classes,
        })
    };
    let train = sample(spec.train_per_class)?;
    let test = sample(spec.test_per_class)?;
    TaskStream::with_class_order(&train, &test, spec.classes_per_task, class_order)
}
