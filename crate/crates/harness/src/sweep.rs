//! Parameter sweeps: every (value, seed) cell is an independent run.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use gwm_core::fusion::FuseInterval;
use gwm_core::metrics::Summary;
use gwm_core::trainer::{train_run, RunConfig};
use rayon::prelude::*;

use crate::cli::{usage, CliError};

/// Environment variable overriding the worker pool width.
pub const WORKERS_ENV: &str = "OCILGWM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// GWM distillation weight.
    Lambda,
    /// Fuse-back ratio.
    Gamma,
    /// Fuse interval: `task` or a batch count.
    Delta,
    /// EMA coefficient.
    Alpha,
    /// Replay buffer capacity.
    #[value(name = "memory_size")]
    MemorySize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
            SweepParam::Delta => "delta",
            SweepParam::Alpha => "alpha",
            SweepParam::MemorySize => "memory_size",
        }
    }

    /// Writes `value` into the matching config field.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<(), CliError> {
        let bad = |e: &dyn std::fmt::Display| usage(format!("bad {} value `{value}`: {e}", self.name()));
        let float = || value.trim().parse::<f64>().map_err(|e| bad(&e));
        match self {
            SweepParam::Lambda => cfg.loss.lambda = float()?,
            SweepParam::Gamma => cfg.fusion.fuse_ratio = float()?,
            SweepParam::Alpha => cfg.fusion.ema_alpha = float()?,
            SweepParam::Delta => {
                cfg.fusion.fuse_interval = value.trim().parse::<FuseInterval>().map_err(|e| bad(&e))?
            }
            SweepParam::MemorySize => {
                cfg.buffer_capacity = value.trim().parse::<usize>().map_err(|e| bad(&e))?
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub param: SweepParam,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

/// One fully resolved grid cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub value: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl SweepSpec {
    /// Checks every cell's config up front so a bad value fails before any
    /// training starts.
    pub fn new(base: RunConfig, param: SweepParam, values: Vec<String>, seeds: Vec<u64>) -> Result<Self, CliError> {
        if values.is_empty() || seeds.is_empty() {
            return Err(usage("a sweep needs at least one value and one seed"));
        }
        let spec = Self {
            base,
            param,
            values,
            seeds,
        };
        spec.cells(None)?;
        Ok(spec)
    }

    /// The value × seed cross product, values outermost.
    pub fn cells(&self, out: Option<&Path>) -> Result<Vec<Cell>, CliError> {
        let mut cells = Vec::with_capacity(self.values.len() * self.seeds.len());
        for value in &self.values {
            for &seed in &self.seeds {
                let mut config = self.base.clone();
                self.param.apply(&mut config, value)?;
                config.seed = seed;
                config.output_dir = out.map(|o| cell_dir(o, self.param, value, seed));
                config.validate().map_err(usage)?;
                cells.push(Cell {
                    value: value.clone(),
                    seed,
                    config,
                });
            }
        }
        Ok(cells)
    }
}

fn cell_dir(out: &Path, param: SweepParam, value: &str, seed: u64) -> PathBuf {
    out.join(format!("{}={}", param.name(), value.trim())).join(format!("seed={seed}"))
}

/// Pool width: `OCILGWM_WORKERS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub value: String,
    pub seed: u64,
    pub summary: Summary,
}

/// Trains every cell on a pool of `workers` threads. Rows come back in
/// cell order whatever the scheduling.
pub fn run_sweep(spec: &SweepSpec, out: Option<&Path>, workers: usize) -> Result<Vec<RunRow>, CliError> {
    let cells = spec.cells(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Run(e.into()))?;
    let results: Vec<Result<RunRow, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let run = train_run(&cell.config).map_err(|e| {
                    CliError::Run(anyhow::anyhow!("{}={} seed {}: {e}", spec.param.name(), cell.value, cell.seed))
                })?;
                Ok(RunRow {
                    value: cell.value.clone(),
                    seed: cell.seed,
                    summary: run.summary,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Mean and sample standard deviation of (FAA, FRF, ALA) for one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub value: String,
    pub runs: usize,
    pub mean: [f64; 3],
    /// Absent with a single run.
    pub std: Option<[f64; 3]>,
}

fn metrics(s: &Summary) -> [f64; 3] {
    [s.faa, s.frf, s.ala]
}

pub fn aggregate(spec: &SweepSpec, rows: &[RunRow]) -> Vec<Aggregate> {
    spec.values
        .iter()
        .map(|value| {
            let group: Vec<[f64; 3]> = rows.iter().filter(|r| &r.value == value).map(|r| metrics(&r.summary)).collect();
            let n = group.len();
            let mut mean = [0.0; 3];
            for g in &group {
                for k in 0..3 {
                    mean[k] += g[k];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let std = (n > 1).then(|| {
                let mut s = [0.0; 3];
                for g in &group {
                    for k in 0..3 {
                        s[k] += (g[k] - mean[k]).powi(2);
                    }
                }
                s.map(|v| (v / (n - 1) as f64).sqrt())
            });
            Aggregate {
                value: value.clone(),
                runs: n,
                mean,
                std,
            }
        })
        .collect()
}

/// Header of `sweep.csv`. Run rows have `kind = run` and empty std columns;
/// aggregate rows have `kind = mean`, an empty seed and the sample std.
pub const SWEEP_COLUMNS: [&str; 10] = [
    "kind", "param", "value", "seed", "faa", "frf", "ala", "faa_std", "frf_std", "ala_std",
];

pub fn write_sweep_csv(path: &Path, spec: &SweepSpec, rows: &[RunRow]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    let name = spec.param.name();
    for r in rows {
        let [faa, frf, ala] = metrics(&r.summary);
        w.write_record([
            "run".to_string(),
            name.to_string(),
            r.value.clone(),
            r.seed.to_string(),
            faa.to_string(),
            frf.to_string(),
            ala.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    for a in aggregate(spec, rows) {
        let std = |k: usize| a.std.map(|s| s[k].to_string()).unwrap_or_default();
        w.write_record([
            "mean".to_string(),
            name.to_string(),
            a.value.clone(),
            String::new(),
            a.mean[0].to_string(),
            a.mean[1].to_string(),
            a.mean[2].to_string(),
            std(0),
            std(1),
            std(2),
        ])?;
    }
    w.flush()?;
    Ok(())
}
