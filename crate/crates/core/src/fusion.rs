//! Parameter-space fusion: the global workspace model (GWM) is a weighted
//! combination of the students, smoothed by an exponential moving average,
//! and periodically blended back into each student.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::network::ParameterSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    #[default]
    Fixed,
    Dirichlet,
}

/// When fused parameters are pushed back into the students.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FuseInterval {
    /// After every `k` batches of the current task.
    Batches(usize),
    /// At the end of every task.
    #[default]
    Task,
}

impl Serialize for FuseInterval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FuseInterval::Task => s.serialize_str("task"),
            FuseInterval::Batches(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FuseInterval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Batches(u64),
            Named(String),
        }
        match Repr::deserialize(d)? {
            Repr::Batches(k) => Ok(FuseInterval::Batches(k as usize)),
            Repr::Named(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for FuseInterval {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("task") {
            return Ok(FuseInterval::Task);
        }
        s.parse::<usize>()
            .map(FuseInterval::Batches)
            .map_err(|_| format!("fuse interval must be `task` or a batch count, got `{s}`"))
    }
}

impl std::fmt::Display for FuseInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FuseInterval::Task => f.write_str("task"),
            FuseInterval::Batches(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub num_students: usize,
    pub weight_mode: WeightMode,
    pub fixed_weights: Vec<f64>,
    pub dirichlet_concentration: Vec<f64>,
    pub ema_alpha: f64,
    pub fuse_ratio: f64,
    pub fuse_interval: FuseInterval,
    /// Zero both students' Adam moments after each fuse-back.
    pub reset_optimizer_on_fuse: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            num_students: 2,
            weight_mode: WeightMode::Fixed,
            fixed_weights: vec![0.5, 0.5],
            dirichlet_concentration: vec![1.0, 1.0],
            ema_alpha: 0.01,
            fuse_ratio: 0.5,
            fuse_interval: FuseInterval::Task,
            reset_optimizer_on_fuse: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.num_students;
        if m < 2 {
            return Err(Error::config("fusion.num_students", format!("must be >= 2, got {m}")));
        }
        if self.fixed_weights.len() != m {
            return Err(Error::config(
                "fusion.fixed_weights",
                format!("needs {m} entries, got {}", self.fixed_weights.len()),
            ));
        }
        let sum: f64 = self.fixed_weights.iter().sum();
        if self.fixed_weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "fusion.fixed_weights",
                format!("must be non-negative and sum to 1, got {:?}", self.fixed_weights),
            ));
        }
        if self.dirichlet_concentration.len() != m
            || self
                .dirichlet_concentration
                .iter()
                .any(|&x| !(x > 0.0) || !x.is_finite())
        {
            return Err(Error::config(
                "fusion.dirichlet_concentration",
                format!("needs {m} positive entries, got {:?}", self.dirichlet_concentration),
            ));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::config(
                "fusion.ema_alpha",
                format!("must be in (0, 1], got {}", self.ema_alpha),
            ));
        }
        if !(0.0..=1.0).contains(&self.fuse_ratio) {
            return Err(Error::config(
                "fusion.fuse_ratio",
                format!("must be in [0, 1], got {}", self.fuse_ratio),
            ));
        }
        if self.fuse_interval == FuseInterval::Batches(0) {
            return Err(Error::config("fusion.fuse_interval", "batch interval must be >= 1"));
        }
        Ok(())
    }
}

/// Combination weights for one batch, always on the probability simplex.
pub fn sample_weights<R: Rng + ?Sized>(cfg: &FusionConfig, rng: &mut R) -> Vec<f64> {
    match cfg.weight_mode {
        WeightMode::Fixed => cfg.fixed_weights.clone(),
        WeightMode::Dirichlet => {
            let draws: Vec<f64> = cfg
                .dirichlet_concentration
                .iter()
                .map(|&xi| {
                    Gamma::new(xi, 1.0)
                        .expect("validated concentration")
                        .sample(rng)
                })
                .collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 {
                draws.iter().map(|g| g / total).collect()
            } else {
                // every Gamma draw underflowed (tiny ξ); fall back to uniform
                vec![1.0 / draws.len() as f64; draws.len()]
            }
        }
    }
}

/// `Σ_m r_m · θ_m` over every tensor, classifier included.
pub fn combine<T: Scalar>(students: &[&ParameterSet<T>], r: &[f64]) -> Result<ParameterSet<T>> {
    let Some(first) = students.first() else {
        return Err(Error::Parameter("combine needs at least one student".into()));
    };
    if r.len() != students.len() {
        return Err(Error::dim("combine", students.len(), r.len()));
    }
    for s in &students[1..] {
        first.check_layout(s, "combine")?;
    }
    let mut out = first.map(|v| v * T::lit(r[0]));
    for (s, &w) in students[1..].iter().zip(&r[1..]) {
        out.axpy(T::lit(w), s)?;
    }
    Ok(out)
}

/// `(1−γ)·θ_student + γ·θ_gwm`.
pub fn fuse_back<T: Scalar>(
    student: &ParameterSet<T>,
    gwm: &ParameterSet<T>,
    gamma: f64,
) -> Result<ParameterSet<T>> {
    let g = T::lit(gamma);
    let keep = T::one() - g;
    student.zip_map(gwm, |s, w| keep * s + g * w)
}

/// Whether the fuse-back fires after batch `batch_index` (0-based within
/// the current task).
pub fn should_fuse(batch_index: usize, task_done: bool, interval: FuseInterval) -> bool {
    match interval {
        FuseInterval::Batches(k) => k > 0 && (batch_index + 1).is_multiple_of(k),
        FuseInterval::Task => task_done,
    }
}

/// Cosine similarity of the fully flattened parameter vectors.
pub fn parameter_cosine<T: Scalar>(a: &ParameterSet<T>, b: &ParameterSet<T>) -> Result<f64> {
    let dot = a.dot(b)?.as_f64();
    // squared norms through the same dot kernel, so cos(a, a) is exactly 1
    let (na, nb) = (a.dot(a)?.as_f64(), b.dot(b)?.as_f64());
    if na == 0.0 && nb == 0.0 {
        return Err(Error::UndefinedInput(
            "cosine of two zero parameter vectors".into(),
        ));
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// The global workspace model. It never receives gradients; only
/// [`ema_update`](Self::ema_update) and [`set`](Self::set) change it.
#[derive(Debug, Clone)]
pub struct GlobalWorkspace<T> {
    params: Option<ParameterSet<T>>,
}

impl<T: Scalar> Default for GlobalWorkspace<T> {
    fn default() -> Self {
        Self { params: None }
    }
}

impl<T: Scalar> GlobalWorkspace<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        self.params.is_some()
    }

    pub fn params(&self) -> Option<&ParameterSet<T>> {
        self.params.as_ref()
    }

    pub fn set(&mut self, params: ParameterSet<T>) {
        self.params = Some(params);
    }

    /// `θ ← (1−α)·θ_prev + α·θ_combined`; the first call copies
    /// `combined` verbatim.
    pub fn ema_update(&mut self, combined: &ParameterSet<T>, alpha: f64) -> Result<()> {
        match &mut self.params {
            None => {
                self.params = Some(combined.clone());
                Ok(())
            }
            Some(prev) => {
                prev.check_layout(combined, "ema_update")?;
                let a = T::lit(alpha);
                let keep = T::one() - a;
                for idx in 0..prev.len() {
                    let dst = prev.tensor_mut(idx).as_mut_slice();
                    let src = combined.tensor(idx).as_slice();
                    for (p, &c) in dst.iter_mut().zip(src) {
                        *p = keep * *p + a * c;
                    }
                }
                Ok(())
            }
        }
    }
}
