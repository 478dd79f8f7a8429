//! The student network: a ReLU MLP feature extractor followed by a bias-free
//! linear classifier, with a hand-derived backward pass.

mod adamw;
mod params;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{AdamWConfig, AdamWState};
pub use params::ParameterSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const CLASSIFIER: &str = "classifier.weight";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes_total: usize,
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.feature_dim, self.num_classes_total];
        if dims.contains(&0) || self.hidden_dims.contains(&0) {
            return Err(Error::Parameter(format!(
                "all architecture dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Widths of the extractor from input to feature layer.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.feature_dim);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// The observed class set `C_t` over a fixed-size label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenClasses {
    mask: Vec<bool>,
}

impl SeenClasses {
    pub fn new(num_classes_total: usize, seen: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; num_classes_total];
        for c in seen {
            if c >= num_classes_total {
                return Err(Error::Parameter(format!(
                    "class {c} outside label space of {num_classes_total}"
                )));
            }
            mask[c] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Parameter("seen class set is empty".into()));
        }
        Ok(Self { mask })
    }

    pub fn all(num_classes_total: usize) -> Result<Self> {
        Self::new(num_classes_total, 0..num_classes_total)
    }

    #[inline]
    pub fn contains(&self, class: usize) -> bool {
        self.mask.get(class).copied().unwrap_or(false)
    }

    pub fn num_total(&self) -> usize {
        self.mask.len()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

/// Replaces logits of unseen classes with `-inf` so every softmax, CE and KL
/// built on top marginalizes over the seen classes only.
pub fn masked_logits<T: Scalar>(logits: &Matrix<T>, seen: &SeenClasses) -> Result<Matrix<T>> {
    if logits.cols() != seen.num_total() {
        return Err(Error::dim("masked_logits", seen.num_total(), logits.cols()));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            if !seen.contains(c) {
                *v = T::neg_infinity();
            }
        }
    }
    Ok(out)
}

fn layer_names(i: usize) -> (String, String) {
    (format!("layer{i}.weight"), format!("layer{i}.bias"))
}

/// Draws a fresh parameter set.
///
/// Extractor weights are uniform in ±√(6/fan_in), biases are zero and the
/// classifier is uniform in ±1/√feature_dim.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    arch: &MlpArchitecture,
    rng: &mut R,
) -> Result<ParameterSet<T>> {
    arch.validate()?;
    let widths = arch.widths();
    let mut entries = Vec::with_capacity(2 * arch.num_layers() + 1);
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let w: Vec<T> = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        let (wn, bn) = layer_names(i);
        entries.push((wn, Matrix::from_vec(fan_in, fan_out, w)?));
        entries.push((bn, Matrix::zeros(1, fan_out)));
    }
    let bound = 1.0 / (arch.feature_dim as f64).sqrt();
    let w: Vec<T> = (0..arch.feature_dim * arch.num_classes_total)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    let start = entries.len();
    entries.push((
        CLASSIFIER.to_string(),
        Matrix::from_vec(arch.feature_dim, arch.num_classes_total, w)?,
    ));
    ParameterSet::new(entries, start)
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Matrix<T>,
    preacts: Vec<Matrix<T>>,
    activations: Vec<Matrix<T>>,
    params_checksum: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub features: Matrix<T>,
    pub logits: Matrix<T>,
    pub cache: ForwardCache<T>,
}

fn check_params<T: Scalar>(arch: &MlpArchitecture, params: &ParameterSet<T>) -> Result<()> {
    let widths = arch.widths();
    let expected = 2 * arch.num_layers() + 1;
    if params.len() != expected {
        return Err(Error::dim("forward", format!("{expected} tensors"), params.len()));
    }
    for (i, pair) in widths.windows(2).enumerate() {
        let w = params.tensor(2 * i);
        let b = params.tensor(2 * i + 1);
        if w.shape() != (pair[0], pair[1]) || b.shape() != (1, pair[1]) {
            return Err(Error::dim(
                "forward",
                format!("layer{i} ({}, {})", pair[0], pair[1]),
                format!("{:?} / {:?}", w.shape(), b.shape()),
            ));
        }
    }
    let cls = params.tensor(expected - 1);
    if cls.shape() != (arch.feature_dim, arch.num_classes_total) {
        return Err(Error::dim(
            "forward",
            format!("classifier ({}, {})", arch.feature_dim, arch.num_classes_total),
            format!("{:?}", cls.shape()),
        ));
    }
    Ok(())
}

/// Features and raw (unmasked) logits for a batch with one sample per row.
pub fn forward<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParameterSet<T>,
    batch: &Matrix<T>,
) -> Result<ForwardOutput<T>> {
    check_params(arch, params)?;
    if batch.cols() != arch.input_dim {
        return Err(Error::dim("forward", arch.input_dim, batch.cols()));
    }
    let layers = arch.num_layers();
    let mut preacts = Vec::with_capacity(layers);
    let mut activations: Vec<Matrix<T>> = Vec::with_capacity(layers);
    for i in 0..layers {
        let input = activations.last().unwrap_or(batch);
        let mut z = input.matmul(params.tensor(2 * i))?;
        z.add_row_broadcast(params.tensor(2 * i + 1))?;
        let a = z.map(|v| if v > T::zero() { v } else { T::zero() });
        preacts.push(z);
        activations.push(a);
    }
    let features = activations.last().expect("at least one layer").clone();
    let logits = features.matmul(params.tensor(2 * layers))?;
    Ok(ForwardOutput {
        features,
        logits,
        cache: ForwardCache {
            input: batch.clone(),
            preacts,
            activations,
            params_checksum: params.checksum(),
        },
    })
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the logits of the cached forward pass.
pub fn backward<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParameterSet<T>,
    cache: &ForwardCache<T>,
    logit_grad: &Matrix<T>,
) -> Result<ParameterSet<T>> {
    if cache.params_checksum != params.checksum() {
        return Err(Error::Contract(
            "backward called with parameters that differ from the forward pass".into(),
        ));
    }
    let layers = arch.num_layers();
    let features = &cache.activations[layers - 1];
    if logit_grad.shape() != (features.rows(), arch.num_classes_total) {
        return Err(Error::dim(
            "backward",
            format!("({}, {})", features.rows(), arch.num_classes_total),
            format!("{:?}", logit_grad.shape()),
        ));
    }

    let mut grads = params.zeros_like();
    *grads.tensor_mut(2 * layers) = features.t_matmul(logit_grad)?;
    let mut upstream = logit_grad.matmul_t(params.tensor(2 * layers))?;
    for i in (0..layers).rev() {
        // ReLU'(0) = 0
        let dz = upstream.zip_map(&cache.preacts[i], |g, z| {
            if z > T::zero() {
                g
            } else {
                T::zero()
            }
        })?;
        let input = if i == 0 {
            &cache.input
        } else {
            &cache.activations[i - 1]
        };
        *grads.tensor_mut(2 * i) = input.t_matmul(&dz)?;
        *grads.tensor_mut(2 * i + 1) = dz.column_sums();
        if i > 0 {
            upstream = dz.matmul_t(params.tensor(2 * i))?;
        }
    }
    Ok(grads)
}

/// One student: parameters plus its own optimizer.
#[derive(Debug, Clone)]
pub struct StudentModel<T> {
    pub arch: MlpArchitecture,
    pub params: ParameterSet<T>,
    pub optimizer: AdamWState<T>,
}

impl<T: Scalar> StudentModel<T> {
    pub fn from_params(arch: MlpArchitecture, params: ParameterSet<T>, optim: AdamWConfig) -> Self {
        let optimizer = AdamWState::new(optim, &params);
        Self {
            arch,
            params,
            optimizer,
        }
    }

    pub fn forward(&self, batch: &Matrix<T>) -> Result<ForwardOutput<T>> {
        forward(&self.arch, &self.params, batch)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, logit_grad: &Matrix<T>) -> Result<ParameterSet<T>> {
        backward(&self.arch, &self.params, cache, logit_grad)
    }

    pub fn apply_gradients(&mut self, grads: &ParameterSet<T>) -> Result<()> {
        self.optimizer.step(&mut self.params, grads)
    }
}

/// Builds a student whose parameters are a deterministic function of `seed`.
pub fn init_student<T: Scalar>(
    arch: &MlpArchitecture,
    seed: u64,
    optim: AdamWConfig,
) -> Result<StudentModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(arch, &mut rng)?;
    Ok(StudentModel::from_params(arch.clone(), params, optim))
}
