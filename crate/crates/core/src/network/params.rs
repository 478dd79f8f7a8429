use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Every learnable array of one model, in a fixed order.
///
/// Entries before `classifier_start` belong to the feature extractor, the
/// rest to the classifier. Fusion, EMA and cosine diagnostics all operate
/// on this flat view.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    entries: Vec<(String, Matrix<T>)>,
    classifier_start: usize,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(entries: Vec<(String, Matrix<T>)>, classifier_start: usize) -> Result<Self> {
        if classifier_start > entries.len() {
            return Err(Error::Parameter(format!(
                "classifier_start {classifier_start} beyond {} entries",
                entries.len()
            )));
        }
        Ok(Self {
            entries,
            classifier_start,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn tensor(&self, idx: usize) -> &Matrix<T> {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Matrix<T> {
        &mut self.entries[idx].1
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn classifier_start(&self) -> usize {
        self.classifier_start
    }

    /// Feature-extractor entries (Θ).
    pub fn extractor(&self) -> &[(String, Matrix<T>)] {
        &self.entries[..self.classifier_start]
    }

    /// Classifier entries (W).
    pub fn classifier(&self) -> &[(String, Matrix<T>)] {
        &self.entries[self.classifier_start..]
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
            classifier_start: self.classifier_start,
        }
    }

    /// Same names, order, shapes and extractor/classifier split.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.classifier_start == other.classifier_start
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }

    pub fn check_layout(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::dim(op, self.layout_string(), other.layout_string()))
        }
    }

    fn layout_string(&self) -> String {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(n, m)| format!("{n}{:?}", m.shape()))
            .collect();
        format!("[{}]", parts.join(", "))
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout template.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim("unflatten", self.num_scalars(), flat.len()));
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (n, m) in &self.entries {
            let len = m.len();
            entries.push((
                n.clone(),
                Matrix::from_vec(m.rows(), m.cols(), flat[offset..offset + len].to_vec())?,
            ));
            offset += len;
        }
        Ok(Self {
            entries,
            classifier_start: self.classifier_start,
        })
    }

    /// Elementwise `f(a, b)` over two sets with the same layout.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_layout(other, "ParameterSet::zip_map")?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for ((n, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            entries.push((n.clone(), a.zip_map(b, &f)?));
        }
        Ok(Self {
            entries,
            classifier_start: self.classifier_start,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), m.map(&f)))
                .collect(),
            classifier_start: self.classifier_start,
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.axpy(T::one(), other)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_layout(other, "ParameterSet::axpy")?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(s, b)?;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_layout(other, "ParameterSet::dot")?;
        let mut acc = T::zero();
        for ((_, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            acc = acc + a.dot(b)?;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> T {
        self.entries
            .iter()
            .flat_map(|(_, m)| m.as_slice())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Euclidean distance between the flattened vectors.
    pub fn distance(&self, other: &Self) -> Result<T> {
        self.check_layout(other, "ParameterSet::distance")?;
        let mut acc = T::zero();
        for ((_, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                acc = acc + (x - y) * (x - y);
            }
        }
        Ok(acc.sqrt())
    }

    /// 64-bit FNV-1a digest of every value's bit pattern (as `f64`).
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for (_, m) in &self.entries {
            for &v in m.as_slice() {
                for byte in v.as_f64().to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(PRIME);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(vals: &[f64]) -> ParameterSet<f64> {
        ParameterSet::new(
            vec![
                ("a".into(), Matrix::from_vec(2, 2, vals[..4].to_vec()).unwrap()),
                ("b".into(), Matrix::from_vec(1, 2, vals[4..6].to_vec()).unwrap()),
                ("w".into(), Matrix::from_vec(2, 1, vals[6..8].to_vec()).unwrap()),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn split_and_layout() {
        let p = sample(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(p.extractor().len(), 2);
        assert_eq!(p.classifier()[0].0, "w");
        assert_eq!(p.num_scalars(), 8);
        assert!(p.same_layout(&p.zeros_like()));
        let other = ParameterSet::new(vec![("a".into(), Matrix::<f64>::zeros(2, 2))], 1).unwrap();
        assert!(matches!(
            p.check_layout(&other, "test"),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let p = sample(&[0.0; 8]);
        assert!(p.unflatten(&[0.0; 7]).is_err());
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let p = sample(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let mut q = p.clone();
        assert_eq!(p.checksum(), q.checksum());
        let v = q.tensor(2).get(1, 0);
        q.tensor_mut(2).set(1, 0, f64::from_bits(v.to_bits() + 1));
        assert_ne!(p.checksum(), q.checksum());
    }

    proptest! {
        #[test]
        fn flatten_round_trips(vals in proptest::collection::vec(-1e6f64..1e6, 8)) {
            let p = sample(&vals);
            let back = p.unflatten(&p.flatten()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
