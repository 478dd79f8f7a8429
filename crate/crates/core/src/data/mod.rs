//! Task streams for online class-incremental learning.
//!
//! A stream is a sequence of tasks with disjoint label sets. Each training
//! sample carries a stream-wide id, and every task can be iterated once.

mod augment;
mod binary;
mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;

pub use augment::{AugOp, AugmentConfig, Augmenter, Preset};
pub use binary::{load_binary_dataset, write_binary_dataset, RawDataset};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::Matrix;

/// Samples as rows, plus per-row label, task of origin and stream id.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub tasks: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            tasks: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `self ∪ other`, rows of `self` first.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let features = Matrix::vstack(&[&self.features, &other.features])?;
        let join = |a: &[usize], b: &[usize]| a.iter().chain(b).copied().collect::<Vec<_>>();
        Ok(Batch {
            features,
            labels: join(&self.labels, &other.labels),
            tasks: join(&self.tasks, &other.tasks),
            ids: join(&self.ids, &other.ids),
        })
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            tasks: idx.iter().map(|&i| self.tasks[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Same labels and bookkeeping, new feature rows.
    pub fn with_features(&self, features: Matrix) -> Result<Batch> {
        if features.shape() != self.features.shape() {
            return Err(Error::dim(
                "Batch::with_features",
                format!("{:?}", self.features.shape()),
                format!("{:?}", features.shape()),
            ));
        }
        Ok(Batch {
            features,
            labels: self.labels.clone(),
            tasks: self.tasks.clone(),
            ids: self.ids.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub classes: Vec<usize>,
    pub train: Batch,
    pub test: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub num_classes: usize,
    pub dim: usize,
    pub classes_per_task: usize,
    /// Shuffled class order; task `t` owns `class_order[t·k .. (t+1)·k]`.
    pub class_order: Vec<usize>,
    pub tasks: Vec<TaskData>,
    /// Pooled per-coordinate standard deviation of all training features.
    pub feature_std: f64,
    streamed: Vec<bool>,
}

impl TaskStream {
    /// Splits labelled train/test sets into tasks after shuffling the class
    /// order with `rng`.
    pub fn from_datasets<R: Rng + ?Sized>(
        train: &RawDataset,
        test: &RawDataset,
        classes_per_task: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if train.num_classes != test.num_classes || train.dim() != test.dim() {
            return Err(Error::Data(format!(
                "train ({} classes, dim {}) and test ({} classes, dim {}) disagree",
                train.num_classes,
                train.dim(),
                test.num_classes,
                test.dim()
            )));
        }
        let c = train.num_classes;
        if classes_per_task == 0 || !c.is_multiple_of(classes_per_task) {
            return Err(Error::Parameter(format!(
                "{c} classes cannot be split into tasks of {classes_per_task}"
            )));
        }
        let mut class_order: Vec<usize> = (0..c).collect();
        class_order.shuffle(rng);
        Self::with_class_order(train, test, classes_per_task, class_order)
    }

    pub(crate) fn with_class_order(
        train: &RawDataset,
        test: &RawDataset,
        classes_per_task: usize,
        class_order: Vec<usize>,
    ) -> Result<Self> {
        let c = train.num_classes;
        let num_tasks = c / classes_per_task;
        let mut task_of_class = vec![0; c];
        for (pos, &cls) in class_order.iter().enumerate() {
            task_of_class[cls] = pos / classes_per_task;
        }
        let split = |ds: &RawDataset, id_offset: usize| -> Vec<Batch> {
            let mut idx: Vec<Vec<usize>> = vec![Vec::new(); num_tasks];
            for (i, &y) in ds.labels.iter().enumerate() {
                idx[task_of_class[y]].push(i);
            }
            idx.into_iter()
                .enumerate()
                .map(|(t, rows)| Batch {
                    features: ds.features.select_rows(&rows),
                    labels: rows.iter().map(|&i| ds.labels[i]).collect(),
                    tasks: vec![t; rows.len()],
                    ids: rows.iter().map(|&i| i + id_offset).collect(),
                })
                .collect()
        };
        let train_tasks = split(train, 0);
        let test_tasks = split(test, train.len());
        let tasks = train_tasks
            .into_iter()
            .zip(test_tasks)
            .enumerate()
            .map(|(t, (train, test))| TaskData {
                classes: class_order[t * classes_per_task..(t + 1) * classes_per_task].to_vec(),
                train,
                test,
            })
            .collect();
        let feature_std = pooled_std(&train.features);
        Ok(Self {
            num_classes: c,
            dim: train.dim(),
            classes_per_task,
            class_order,
            tasks,
            feature_std,
            streamed: vec![false; num_tasks],
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Classes of tasks `0..=t`.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        self.class_order[..(t + 1) * self.classes_per_task].to_vec()
    }

    /// One pass over task `t` in shuffled batches; the last batch may be
    /// short. A second pass over the same task is refused.
    pub fn stream_batches<R: Rng + ?Sized>(
        &mut self,
        t: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<std::vec::IntoIter<Batch>> {
        if t >= self.tasks.len() {
            return Err(Error::Parameter(format!(
                "task {t} out of range for {} tasks",
                self.tasks.len()
            )));
        }
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if self.streamed[t] {
            return Err(Error::Contract(format!(
                "task {t} was already streamed; each sample may be seen only once"
            )));
        }
        self.streamed[t] = true;
        let train = &self.tasks[t].train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        let batches: Vec<Batch> = order.chunks(batch_size).map(|c| train.select(c)).collect();
        Ok(batches.into_iter())
    }
}

fn pooled_std(m: &Matrix) -> f64 {
    if m.rows() < 2 {
        return 1.0;
    }
    let n = m.rows() as f64;
    let means = m.column_sums().scale(1.0 / n);
    let mut ss = 0.0;
    for row in m.row_iter() {
        for (v, mu) in row.iter().zip(means.as_slice()) {
            ss += (v - mu) * (v - mu);
        }
    }
    (ss / ((n - 1.0) * m.cols() as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_stream() -> TaskStream {
        let spec = SyntheticSpec {
            num_classes: 10,
            dim: 4,
            classes_per_task: 2,
            train_per_class: 10,
            test_per_class: 5,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, 3).unwrap()
    }

    #[test]
    fn batch_counts() {
        let mut s = small_stream();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // 20 samples per task
        let sizes: Vec<usize> = s.stream_batches(0, 10, &mut rng).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![10, 10]);
        let sizes: Vec<usize> = s.stream_batches(1, 6, &mut rng).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![6, 6, 6, 2]);
    }

    #[test]
    fn every_sample_once_and_no_second_epoch() {
        let mut s = small_stream();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ids: Vec<usize> = s
            .stream_batches(2, 7, &mut rng)
            .unwrap()
            .flat_map(|b| b.ids)
            .collect();
        ids.sort_unstable();
        let mut expected = s.tasks[2].train.ids.clone();
        expected.sort_unstable();
        assert_eq!(ids, expected);
        assert!(matches!(
            s.stream_batches(2, 7, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(s.stream_batches(9, 7, &mut rng).is_err());
    }

    #[test]
    fn concat_and_select() {
        let s = small_stream();
        let a = s.tasks[0].train.select(&[0, 1]);
        let b = s.tasks[1].train.select(&[3]);
        let c = a.concat(&b).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.labels[2], b.labels[0]);
        assert_eq!(c.features.row(2), b.features.row(0));
        assert_eq!(a.concat(&Batch::empty(4)).unwrap(), a);
    }

    #[test]
    fn mismatched_datasets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = RawDataset {
            features: Matrix::zeros(2, 3),
            labels: vec![0, 1],
            num_classes: 2,
        };
        let b = RawDataset {
            features: Matrix::zeros(2, 4),
            labels: vec![0, 1],
            num_classes: 2,
        };
        assert!(TaskStream::from_datasets(&a, &b, 1, &mut rng).is_err());
        assert!(TaskStream::from_datasets(&a, &a, 3, &mut rng).is_err());
    }
}
