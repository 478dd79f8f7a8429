use std::path::Path;

use serde::Serialize;

use super::{BatchRecord, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{AccuracyMatrix, Summary};
use crate::replay::MemoryBuffer;
use crate::StudentModel;

/// How FRF treats checkpoints with zero accuracy; recorded in `meta.json`.
pub const FRF_NOTE: &str = "frf: per task j, max over l in j..T of (a[l][j] - a[T][j]) / a[l][j]; \
checkpoints with a[l][j] = 0 are skipped and a task with no nonzero checkpoint contributes 0";

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub accuracy: AccuracyMatrix,
    pub summary: Summary,
    pub records: Vec<BatchRecord>,
    /// `(batch, task, mean accuracy over seen tasks)` when periodic
    /// evaluation is on.
    pub curve: Vec<(usize, usize, f64)>,
    pub students: [StudentModel; 2],
    pub buffer: MemoryBuffer,
    /// Mean over batches of the recorded feature drift.
    pub mean_drift: Option<f64>,
    /// Smallest student-student cosine recorded over the run.
    pub min_cosine: Option<f64>,
}

#[derive(Serialize)]
struct Meta<'a> {
    seed: u64,
    num_tasks: usize,
    num_batches: usize,
    fuse_events: usize,
    frf: &'a str,
    drift: &'a str,
    cosine: &'a str,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunArtifacts {
    pub(crate) fn collect(
        cfg: &RunConfig,
        accuracy: AccuracyMatrix,
        records: Vec<BatchRecord>,
        curve: Vec<(usize, usize, f64)>,
        students: [StudentModel; 2],
        buffer: MemoryBuffer,
    ) -> Result<Self> {
        let summary = accuracy.summary()?;
        let drifts: Vec<f64> = records.iter().filter_map(|r| r.report.drift).collect();
        let mean_drift = (!drifts.is_empty()).then(|| drifts.iter().sum::<f64>() / drifts.len() as f64);
        let min_cosine = records
            .iter()
            .filter_map(|r| r.report.cos_students)
            .reduce(f64::min);
        Ok(Self {
            config: cfg.clone(),
            accuracy,
            summary,
            records,
            curve,
            students,
            buffer,
            mean_drift,
            min_cosine,
        })
    }

    pub fn fuse_events(&self) -> usize {
        self.records.iter().filter(|r| r.report.fused).count()
    }

    /// Writes the run directory, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write_text = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write_text("config.json", self.config.to_json()? + "\n")?;
        self.accuracy.write_csv(&dir.join("accuracy_matrix.csv"))?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["seed", "faa", "frf", "ala"])?;
        w.write_record([
            self.config.seed.to_string(),
            self.summary.faa.to_string(),
            self.summary.frf.to_string(),
            self.summary.ala.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(dir.join("summary.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("losses.csv"))?;
        w.write_record(["batch", "task", "student", "baseline", "ce", "kd", "gwmkd", "total"])?;
        for r in &self.records {
            for (m, l) in r.report.losses.iter().enumerate() {
                w.write_record([
                    r.batch.to_string(),
                    r.task.to_string(),
                    (m + 1).to_string(),
                    l.baseline.to_string(),
                    l.ce.to_string(),
                    l.kd.to_string(),
                    l.gwmkd.to_string(),
                    l.total.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("losses.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("cosine.csv"))?;
        w.write_record(["batch", "task", "cos_s1_s2", "cos_s1_gwm", "cos_s2_gwm", "fused"])?;
        for r in &self.records {
            let g = r.report.cos_gwm;
            w.write_record([
                r.batch.to_string(),
                r.task.to_string(),
                opt(r.report.cos_students),
                opt(g.map(|g| g[0])),
                opt(g.map(|g| g[1])),
                u8::from(r.report.fused).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("cosine.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("drift.csv"))?;
        w.write_record(["batch", "task", "drift", "drift_with_fuse"])?;
        for r in &self.records {
            if let Some(d) = r.report.drift {
                w.write_record([
                    r.batch.to_string(),
                    r.task.to_string(),
                    d.to_string(),
                    opt(r.report.drift_with_fuse),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("drift.csv"), e))?;

        if !self.curve.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
            w.write_record(["batch", "task", "accuracy"])?;
            for (b, t, a) in &self.curve {
                w.write_record([b.to_string(), t.to_string(), a.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(dir.join("curve.csv"), e))?;
        }

        self.buffer.write_csv(&dir.join("buffer_final.csv"))?;

        let meta = Meta {
            seed: self.config.seed,
            num_tasks: self.accuracy.num_tasks(),
            num_batches: self.records.len(),
            fuse_events: self.fuse_events(),
            frf: FRF_NOTE,
            drift: "mean over buffered samples of earlier tasks of the per-sample feature distance \
                    before and after each optimizer step, averaged over the two students; \
                    drift_with_fuse also includes the fuse-back of that batch",
            cosine: "flattened-parameter cosine after each batch step, fuse-back included",
        };
        write_text("meta.json", serde_json::to_string_pretty(&meta)? + "\n")
    }
}
