//! Accuracy matrix and the end-of-stream summaries: final average accuracy
//! (FAA), final relative forgetting (FRF) and average learning accuracy (ALA).
//! Tasks are 0-based here; `a[l][j]` is the accuracy on task `j` after
//! training task `l`, defined for `j <= l`.

use std::path::Path;

use serde::Serialize;

use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::network::{forward, masked_logits, MlpArchitecture, SeenClasses};
use crate::tensor::softmax_temp;
use crate::{Matrix, ParameterSet, StudentModel};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            entries: (0..num_tasks).map(|l| vec![None; l + 1]).collect(),
        }
    }

    /// Builds a matrix from its lower-triangular rows (`rows[l].len() == l + 1`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (l, row) in rows.iter().enumerate() {
            if row.len() != l + 1 {
                return Err(Error::dim("AccuracyMatrix::from_rows", l + 1, row.len()));
            }
            m.set_row(l, row)?;
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.entries.len()
    }

    pub fn set(&mut self, l: usize, j: usize, a: f64) -> Result<()> {
        if l >= self.entries.len() || j > l {
            return Err(Error::Parameter(format!(
                "accuracy entry ({l}, {j}) outside the lower triangle of a {0}x{0} matrix",
                self.entries.len()
            )));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Parameter(format!("accuracy {a} outside [0, 1]")));
        }
        self.entries[l][j] = Some(a);
        Ok(())
    }

    pub fn set_row(&mut self, l: usize, row: &[f64]) -> Result<()> {
        for (j, &a) in row.iter().enumerate() {
            self.set(l, j, a)?;
        }
        Ok(())
    }

    pub fn get(&self, l: usize, j: usize) -> Option<f64> {
        self.entries.get(l).and_then(|r| r.get(j)).copied().flatten()
    }

    fn require(&self, l: usize, j: usize, what: &str) -> Result<f64> {
        self.get(l, j)
            .ok_or_else(|| Error::Contract(format!("{what} needs a[{l}][{j}], which is missing")))
    }

    fn last(&self, what: &str) -> Result<usize> {
        self.entries
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Contract(format!("{what} of an empty accuracy matrix")))
    }

    /// Mean of the last row.
    pub fn faa(&self) -> Result<f64> {
        let t = self.last("faa")?;
        let mut s = 0.0;
        for j in 0..=t {
            s += self.require(t, j, "faa")?;
        }
        Ok(s / (t + 1) as f64)
    }

    /// Mean over tasks of `max_{l in j..T} (a[l][j] - a[T][j]) / a[l][j]`.
    /// Checkpoints with zero accuracy are skipped; a task that never scored
    /// contributes 0.
    pub fn frf(&self) -> Result<f64> {
        let t = self.last("frf")?;
        let mut s = 0.0;
        for j in 0..=t {
            let end = self.require(t, j, "frf")?;
            let mut worst: Option<f64> = None;
            for l in j..=t {
                let a = self.require(l, j, "frf")?;
                if a == 0.0 {
                    continue;
                }
                let f = (a - end) / a;
                worst = Some(worst.map_or(f, |w| w.max(f)));
            }
            s += worst.unwrap_or(0.0);
        }
        Ok(s / (t + 1) as f64)
    }

    /// Mean of the diagonal.
    pub fn ala(&self) -> Result<f64> {
        let t = self.last("ala")?;
        let mut s = 0.0;
        for j in 0..=t {
            s += self.require(j, j, "ala")?;
        }
        Ok(s / (t + 1) as f64)
    }

    pub fn summary(&self) -> Result<Summary> {
        Ok(Summary {
            faa: self.faa()?,
            frf: self.frf()?,
            ala: self.ala()?,
        })
    }

    /// CSV with header `l,j,a`, 0-based, one line per defined entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["l", "j", "a"])?;
        for (l, row) in self.entries.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                if let Some(a) = a {
                    w.write_record([l.to_string(), j.to_string(), a.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub faa: f64,
    pub frf: f64,
    pub ala: f64,
}

/// Class predictions from the mean of the students' softmax over `seen`
/// (temperature 1).
pub fn ensemble_predict(students: &[&StudentModel], x: &Matrix, seen: &SeenClasses) -> Result<Vec<usize>> {
    let Some((first, rest)) = students.split_first() else {
        return Err(Error::Parameter("ensemble needs at least one student".into()));
    };
    let probs = |s: &StudentModel| -> Result<Matrix> {
        let out = s.forward(x)?;
        softmax_temp(&masked_logits(&out.logits, seen)?, 1.0)
    };
    let mut sum = probs(first)?;
    for s in rest {
        sum.add_assign(&probs(s)?)?;
    }
    Ok(sum.scale(1.0 / students.len() as f64).row_argmax())
}

/// Row `l` of the accuracy matrix: accuracy on the test set of every task
/// `j <= l`, predicting over the classes seen through task `l`.
pub fn evaluate_tasks(students: &[&StudentModel], stream: &TaskStream, l: usize) -> Result<Vec<f64>> {
    if l >= stream.num_tasks() {
        return Err(Error::Parameter(format!(
            "task {l} out of range for {} tasks",
            stream.num_tasks()
        )));
    }
    let seen = SeenClasses::new(stream.num_classes, stream.seen_classes(l))?;
    stream.tasks[..=l]
        .iter()
        .map(|task| {
            let test = &task.test;
            if test.is_empty() {
                return Ok(0.0);
            }
            let pred = ensemble_predict(students, &test.features, &seen)?;
            let correct = pred.iter().zip(&test.labels).filter(|(p, y)| p == y).count();
            Ok(correct as f64 / test.len() as f64)
        })
        .collect()
}

/// Mean Euclidean distance between the feature vectors two parameter
/// snapshots assign to the same samples.
pub fn feature_drift(
    arch: &MlpArchitecture,
    prev: &ParameterSet,
    curr: &ParameterSet,
    samples: &Matrix,
) -> Result<f64> {
    if samples.rows() == 0 {
        return Err(Error::Parameter("feature drift needs at least one sample".into()));
    }
    prev.check_layout(curr, "feature_drift")?;
    let a = forward(arch, prev, samples)?.features;
    let b = forward(arch, curr, samples)?.features;
    let total: f64 = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .sum();
    Ok(total / samples.rows() as f64)
}
