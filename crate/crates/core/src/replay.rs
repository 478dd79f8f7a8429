//! Fixed-capacity replay memory with reservoir insertion and uniform
//! retrieval.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::Real;

/// One stored example. Samples are kept raw; augmentation happens at
/// retrieval time in the training step.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySlot {
    pub features: Vec<Real>,
    pub label: usize,
    pub task: usize,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    dim: usize,
    slots: Vec<MemorySlot>,
    observed: usize,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            slots: Vec::with_capacity(capacity),
            observed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stream samples offered so far (`n`).
    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[MemorySlot] {
        &self.slots
    }

    /// Classic reservoir step for every sample of `batch`: the `k`-th
    /// stream sample (0-based) fills slot `k` while there is room, otherwise
    /// replaces slot `j ~ U[0, k]` when `j < capacity`.
    pub fn reservoir_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<()> {
        if batch.features.cols() != self.dim && !batch.is_empty() {
            return Err(Error::dim("reservoir_update", self.dim, batch.features.cols()));
        }
        for i in 0..batch.len() {
            let k = self.observed;
            self.observed += 1;
            let slot = MemorySlot {
                features: batch.features.row(i).to_vec(),
                label: batch.labels[i],
                task: batch.tasks[i],
                id: batch.ids[i],
            };
            if k < self.capacity {
                self.slots.push(slot);
            } else {
                let j = rng.random_range(0..=k);
                if j < self.capacity {
                    self.slots[j] = slot;
                }
            }
        }
        Ok(())
    }

    /// Slot indices of a uniform sample without replacement; everything when
    /// fewer than `batch_size` slots are occupied.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        let n = self.slots.len();
        if n <= batch_size {
            return (0..n).collect();
        }
        index::sample(rng, n, batch_size).into_vec()
    }

    pub fn random_retrieve<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(batch_size, rng);
        self.gather(&idx)
    }

    /// Every occupied slot as one batch.
    pub fn snapshot(&self) -> Batch {
        self.gather(&(0..self.slots.len()).collect::<Vec<_>>())
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        let mut tasks = Vec::with_capacity(idx.len());
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.slots[i];
            data.extend_from_slice(&s.features);
            labels.push(s.label);
            tasks.push(s.task);
            ids.push(s.id);
        }
        Batch {
            features: crate::Matrix::from_vec(idx.len(), self.dim, data)
                .expect("slots share the buffer dimension"),
            labels,
            tasks,
            ids,
        }
    }

    /// CSV dump: `slot,label,task,id`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("slot,label,task,id\n");
        for (i, s) in self.slots.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", s.label, s.task, s.id));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn stream(n: usize) -> Batch {
        Batch {
            features: crate::Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            labels: vec![0; n],
            tasks: vec![0; n],
            ids: (0..n).collect(),
        }
    }

    #[test]
    fn fill_phase() {
        let mut buf = MemoryBuffer::new(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        buf.reservoir_update(&stream(7), &mut rng).unwrap();
        assert_eq!(buf.len(), 7);
        assert_eq!(buf.observed(), 7);
    }

    #[test]
    fn oversized_buffer_keeps_everything() {
        let mut buf = MemoryBuffer::new(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in 0..4 {
            let mut b = stream(10);
            b.ids = (chunk * 10..chunk * 10 + 10).collect();
            buf.reservoir_update(&b, &mut rng).unwrap();
        }
        let mut ids: Vec<usize> = buf.slots().iter().map(|s| s.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..40).collect::<Vec<_>>());
        assert_eq!(buf.observed(), 40);
    }

    #[test]
    fn capacity_never_exceeded() {
        let mut buf = MemoryBuffer::new(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for step in 1..=20 {
            buf.reservoir_update(&stream(3), &mut rng).unwrap();
            assert_eq!(buf.len(), (3 * step).min(5));
            assert_eq!(buf.observed(), 3 * step);
        }
    }

    #[test]
    fn single_slot_holds_each_item_uniformly() {
        let n = 20;
        let trials = 100_000;
        let mut counts = vec![0usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items = stream(n);
        for _ in 0..trials {
            let mut buf = MemoryBuffer::new(1, 1);
            buf.reservoir_update(&items, &mut rng).unwrap();
            counts[buf.slots()[0].id] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * sigma + 1.0);
        }
        let expected = trials as f64 * p;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let pval = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi-square p = {pval}");
    }

    #[test]
    fn retrieval_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = MemoryBuffer::new(10, 1);
        assert!(empty.random_retrieve(10, &mut rng).is_empty());

        let mut buf = MemoryBuffer::new(10, 1);
        buf.reservoir_update(&stream(5), &mut rng).unwrap();
        assert_eq!(buf.random_retrieve(10, &mut rng).len(), 5);
    }

    #[test]
    fn retrieval_is_uniform_without_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = MemoryBuffer::new(100, 1);
        buf.reservoir_update(&stream(100), &mut rng).unwrap();
        let draws = 100_000;
        let mut counts = vec![0usize; 100];
        for _ in 0..draws {
            let idx = buf.sample_indices(10, &mut rng);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 10);
            for i in idx {
                counts[i] += 1;
            }
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let worst = counts
            .iter()
            .map(|&c| (c as f64 - draws as f64 * p).abs() / sigma)
            .fold(0.0, f64::max);
        // 100 slots: a 4σ band keeps the family-wise false alarm rate tiny
        assert!(worst < 4.0, "worst deviation {worst}σ");
        let mean_freq = counts.iter().sum::<usize>() as f64 / (100.0 * draws as f64);
        assert!((mean_freq - 0.1).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut buf = MemoryBuffer::new(8, 1);
            for _ in 0..10 {
                buf.reservoir_update(&stream(10), &mut rng).unwrap();
            }
            buf
        };
        assert_eq!(run(), run());
    }
}
