//! The online training loop: two students, a replay buffer and the global
//! workspace model, one pass over every task.
//!
//! Per batch, in order: retrieve a memory batch, merge it with the stream
//! batch, build the augmented views, forward both students and the
//! workspace, compute both objectives from the pre-step parameters, take one
//! AdamW step per student, update the workspace (combine then EMA), fuse it
//! back into the students when the interval fires, and finally insert the
//! stream batch (never the memory batch) into the buffer.

mod config;
mod output;

use rand_chacha::ChaCha8Rng;

pub use config::{DatasetFiles, ModelConfig, RunConfig};
pub use output::{RunArtifacts, FRF_NOTE};

use crate::data::{generate_synthetic, load_binary_dataset, Augmenter, Batch, Preset, TaskStream};
use crate::error::{Error, Result};
use crate::fusion::{combine, fuse_back, parameter_cosine, sample_weights, should_fuse};
use crate::losses::{student_objective, LossBreakdown, ObjectiveInputs, ViewLogits};
use crate::metrics::{evaluate_tasks, feature_drift, AccuracyMatrix};
use crate::network::{init_params, forward, MlpArchitecture, SeenClasses};
use crate::replay::MemoryBuffer;
use crate::rng::{substream, Stream};
use crate::{GlobalWorkspace, Matrix, ParameterSet, StudentModel};

/// Builds the task stream a config describes.
pub fn build_stream(cfg: &RunConfig) -> Result<TaskStream> {
    match &cfg.dataset {
        None => generate_synthetic(&cfg.data, cfg.seed),
        Some(files) => {
            let train = load_binary_dataset(&files.train)?;
            let test = load_binary_dataset(&files.test)?;
            let mut rng = substream(cfg.seed, Stream::Data);
            TaskStream::from_datasets(&train, &test, files.classes_per_task, &mut rng)
        }
    }
}

/// Everything that happened in one training step.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub losses: [LossBreakdown; 2],
    pub fused: bool,
    /// Student-student cosine after the step.
    pub cos_students: Option<f64>,
    /// Student-workspace cosines after the step.
    pub cos_gwm: Option<[f64; 2]>,
    /// Mean feature drift of the students on buffered samples of earlier
    /// tasks caused by this batch's optimizer step; absent while there are
    /// no such samples.
    pub drift: Option<f64>,
    /// Same, measured after the fuse-back when one fired.
    pub drift_with_fuse: Option<f64>,
    pub stream_ids: Vec<usize>,
    pub memory_ids: Vec<usize>,
    /// Workspace checksums taken around the backward passes.
    pub gwm_checksum_before_backward: Option<u64>,
    pub gwm_checksum_after_backward: Option<u64>,
}

/// Logits of one forward pass split into the row blocks the objective uses.
struct StudentPass {
    cache: crate::network::ForwardCache<f64>,
    baseline: Matrix,
    clean: Option<Matrix>,
    augmented: Option<Matrix>,
}

fn view_of(p: &StudentPass) -> Option<ViewLogits<'_, f64>> {
    Some(ViewLogits {
        clean: p.clean.as_ref()?,
        augmented: p.augmented.as_ref()?,
    })
}

/// Mutable state of a run.
pub struct RunState {
    cfg: RunConfig,
    arch: MlpArchitecture,
    pub students: [StudentModel; 2],
    pub gwm: GlobalWorkspace,
    pub buffer: MemoryBuffer,
    views: [Augmenter; 2],
    er_views: [Augmenter; 2],
    retrieval: ChaCha8Rng,
    reservoir: ChaCha8Rng,
    dirichlet: ChaCha8Rng,
    seen: Option<SeenClasses>,
    task: usize,
}

impl RunState {
    /// Two identically initialized students, an empty buffer and a workspace
    /// seeded with the students' combination.
    pub fn new(cfg: &RunConfig, stream: &TaskStream) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.architecture(stream.dim, stream.num_classes);
        arch.validate()?;
        let init: ParameterSet = init_params(&arch, &mut substream(cfg.seed, Stream::Init))?;
        let student = StudentModel::from_params(arch.clone(), init, cfg.optimizer);
        let students = [student.clone(), student];
        let sd = stream.feature_std;
        let aug = |preset, c: &crate::data::AugmentConfig, s| Augmenter::new(preset, c, sd, substream(cfg.seed, s));
        let views = [
            aug(Preset::Weak, &cfg.augment, Stream::Aug1)?,
            aug(Preset::Strong, &cfg.augment, Stream::Aug2)?,
        ];
        let er_views = [
            aug(Preset::Weak, &cfg.er_augment, Stream::ErAug1)?,
            aug(Preset::Weak, &cfg.er_augment, Stream::ErAug2)?,
        ];
        let mut state = Self {
            cfg: cfg.clone(),
            arch,
            students,
            gwm: GlobalWorkspace::new(),
            buffer: MemoryBuffer::new(cfg.buffer_capacity, stream.dim),
            views,
            er_views,
            retrieval: substream(cfg.seed, Stream::Retrieval),
            reservoir: substream(cfg.seed, Stream::Reservoir),
            dirichlet: substream(cfg.seed, Stream::Dirichlet),
            seen: None,
            task: 0,
        };
        if state.uses_gwm() {
            let start = combine(
                &[&state.students[0].params, &state.students[1].params],
                &state.cfg.fusion.fixed_weights,
            )?;
            state.gwm.ema_update(&start, state.cfg.fusion.ema_alpha)?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    fn uses_gwm(&self) -> bool {
        self.cfg.loss.enable_fuse || self.cfg.loss.enable_gwmkd
    }

    /// Switches the seen-class set to everything through task `t`.
    pub fn begin_task(&mut self, t: usize, stream: &TaskStream) -> Result<()> {
        self.seen = Some(SeenClasses::new(stream.num_classes, stream.seen_classes(t))?);
        self.task = t;
        Ok(())
    }

    fn forward_student(&self, m: usize, er_view: &Matrix, views: Option<(&Matrix, &Matrix)>) -> Result<StudentPass> {
        let n = er_view.rows();
        match views {
            None => {
                let out = self.students[m].forward(er_view)?;
                Ok(StudentPass {
                    cache: out.cache,
                    baseline: out.logits,
                    clean: None,
                    augmented: None,
                })
            }
            Some((clean, augmented)) => {
                let input = Matrix::vstack(&[er_view, clean, augmented])?;
                let out = self.students[m].forward(&input)?;
                Ok(StudentPass {
                    baseline: out.logits.slice_rows(0, n)?,
                    clean: Some(out.logits.slice_rows(n, 2 * n)?),
                    augmented: Some(out.logits.slice_rows(2 * n, 3 * n)?),
                    cache: out.cache,
                })
            }
        }
    }

    /// One step on stream batch `batch`, the `batch_index`-th (0-based) of
    /// the current task; `task_done` marks the task's last batch.
    pub fn train_batch(&mut self, batch: &Batch, batch_index: usize, task_done: bool) -> Result<BatchReport> {
        let seen = self
            .seen
            .clone()
            .ok_or_else(|| Error::Contract("train_batch called before begin_task".into()))?;
        let loss_cfg = self.cfg.loss.clone();
        let active = loss_cfg.method_active();

        let memory = self
            .buffer
            .random_retrieve(self.cfg.memory_batch_size, &mut self.retrieval);
        let merged = batch.concat(&memory)?;
        let n = merged.len();

        let er_views = [
            self.er_views[0].augment(&merged).features,
            self.er_views[1].augment(&merged).features,
        ];
        let views = if active {
            Some([
                self.views[0].augment(&merged).features,
                self.views[1].augment(&merged).features,
            ])
        } else {
            None
        };

        let passes = [
            self.forward_student(0, &er_views[0], views.as_ref().map(|v| (&merged.features, &v[0])))?,
            self.forward_student(1, &er_views[1], views.as_ref().map(|v| (&merged.features, &v[1])))?,
        ];

        // workspace logits on B, h_1(B) and h_2(B); previous-batch state
        let gwm_logits = match (&views, loss_cfg.enable_gwmkd) {
            (Some(v), true) => {
                let params = self
                    .gwm
                    .params()
                    .ok_or_else(|| Error::Contract("workspace used before initialization".into()))?;
                let input = Matrix::vstack(&[&merged.features, &v[0], &v[1]])?;
                let logits = forward(&self.arch, params, &input)?.logits;
                Some([
                    logits.slice_rows(0, n)?,
                    logits.slice_rows(n, 2 * n)?,
                    logits.slice_rows(2 * n, 3 * n)?,
                ])
            }
            _ => None,
        };

        let mut losses = [LossBreakdown::default(); 2];
        let mut logit_grads: Vec<Matrix> = Vec::with_capacity(2);
        for m in 0..2 {
            let gwm = gwm_logits.as_ref().map(|g| ViewLogits {
                clean: &g[0],
                augmented: &g[1 + m],
            });
            let inputs = ObjectiveInputs {
                baseline_view: &passes[m].baseline,
                own: view_of(&passes[m]),
                peer: if loss_cfg.enable_kd { view_of(&passes[1 - m]) } else { None },
                gwm,
                labels: &merged.labels,
                seen: &seen,
            };
            let (breakdown, grads) = student_objective(&loss_cfg, inputs)?;
            losses[m] = breakdown;
            logit_grads.push(match grads.own {
                None => grads.baseline_view,
                Some((d_clean, d_aug)) => Matrix::vstack(&[&grads.baseline_view, &d_clean, &d_aug])?,
            });
        }

        let checksum = |s: &Self| s.gwm.params().map(|p| p.checksum());
        let gwm_checksum_before_backward = checksum(self);
        let param_grads = [
            self.students[0].backward(&passes[0].cache, &logit_grads[0])?,
            self.students[1].backward(&passes[1].cache, &logit_grads[1])?,
        ];
        let gwm_checksum_after_backward = checksum(self);

        // buffered samples of earlier tasks, for the drift diagnostics
        let old_samples = if self.cfg.diagnostics {
            let old: Vec<usize> = self
                .buffer
                .slots()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.task < self.task)
                .map(|(i, _)| i)
                .collect();
            (!old.is_empty()).then(|| self.buffer.snapshot().select(&old).features)
        } else {
            None
        };
        let before: Option<[ParameterSet; 2]> = old_samples
            .as_ref()
            .map(|_| [self.students[0].params.clone(), self.students[1].params.clone()]);
        let drift_from = |s: &Self, before: &[ParameterSet; 2], x: &Matrix| -> Result<f64> {
            let d0 = feature_drift(&s.arch, &before[0], &s.students[0].params, x)?;
            let d1 = feature_drift(&s.arch, &before[1], &s.students[1].params, x)?;
            Ok(0.5 * (d0 + d1))
        };

        for (student, g) in self.students.iter_mut().zip(&param_grads) {
            student.apply_gradients(g)?;
        }
        let drift = match (&before, &old_samples) {
            (Some(b), Some(x)) => Some(drift_from(self, b, x)?),
            _ => None,
        };

        if self.uses_gwm() {
            let r = sample_weights(&self.cfg.fusion, &mut self.dirichlet);
            let combined = combine(&[&self.students[0].params, &self.students[1].params], &r)?;
            self.gwm.ema_update(&combined, self.cfg.fusion.ema_alpha)?;
        }

        let fused = loss_cfg.enable_fuse && should_fuse(batch_index, task_done, self.cfg.fusion.fuse_interval);
        if fused {
            let gwm = self.gwm.params().expect("workspace maintained when fusing").clone();
            for student in self.students.iter_mut() {
                student.params = fuse_back(&student.params, &gwm, self.cfg.fusion.fuse_ratio)?;
                if self.cfg.fusion.reset_optimizer_on_fuse {
                    student.optimizer.reset();
                }
            }
        }

        let drift_with_fuse = match (&before, &old_samples) {
            (Some(b), Some(x)) if fused => Some(drift_from(self, b, x)?),
            _ => drift,
        };

        let (mut cos_students, mut cos_gwm) = (None, None);
        if self.cfg.diagnostics {
            let (s1, s2) = (&self.students[0].params, &self.students[1].params);
            cos_students = Some(parameter_cosine(s1, s2)?);
            if let Some(g) = self.gwm.params() {
                cos_gwm = Some([parameter_cosine(s1, g)?, parameter_cosine(s2, g)?]);
            }
        }

        self.buffer.reservoir_update(batch, &mut self.reservoir)?;

        Ok(BatchReport {
            losses,
            fused,
            cos_students,
            cos_gwm,
            drift,
            drift_with_fuse,
            stream_ids: batch.ids.clone(),
            memory_ids: memory.ids,
            gwm_checksum_before_backward,
            gwm_checksum_after_backward,
        })
    }

    /// Accuracy row after the current task.
    pub fn evaluate(&self, stream: &TaskStream) -> Result<Vec<f64>> {
        evaluate_tasks(&[&self.students[0], &self.students[1]], stream, self.task)
    }
}

/// Per-batch record kept by [`train_run`].
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub batch: usize,
    pub task: usize,
    pub report: BatchReport,
}

/// Trains on every task once, evaluating after each, and writes the run
/// directory when the config names one.
pub fn train_run(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut stream = build_stream(cfg)?;
    let mut state = RunState::new(cfg, &stream)?;
    let mut order = substream(cfg.seed, Stream::Order);
    let num_tasks = stream.num_tasks();
    let mut acc = AccuracyMatrix::new(num_tasks);
    let mut records = Vec::new();
    let mut curve = Vec::new();
    let mut global = 0usize;

    for t in 0..num_tasks {
        state.begin_task(t, &stream)?;
        let batches: Vec<Batch> = stream.stream_batches(t, cfg.batch_size, &mut order)?.collect();
        let last = batches.len().saturating_sub(1);
        for (i, b) in batches.iter().enumerate() {
            let report = state.train_batch(b, i, i == last).map_err(|e| Error::Aborted {
                task: t,
                batch: i,
                source: Box::new(e),
            })?;
            records.push(BatchRecord {
                batch: global,
                task: t,
                report,
            });
            global += 1;
            if cfg.eval_every > 0 && global.is_multiple_of(cfg.eval_every) {
                let row = state.evaluate(&stream)?;
                curve.push((global, t, row.iter().sum::<f64>() / row.len() as f64));
            }
        }
        acc.set_row(t, &state.evaluate(&stream)?)?;
    }

    let artifacts = RunArtifacts::collect(cfg, acc, records, curve, [state.students[0].clone(), state.students[1].clone()], state.buffer)?;
    if let Some(dir) = &cfg.output_dir {
        artifacts.write(dir)?;
    }
    Ok(artifacts)
}

#[cfg(test)]
mod tests;
