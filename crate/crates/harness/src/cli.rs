use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use gwm_core::trainer::{train_run, RunConfig};

use crate::plot::{self, PlotKind};
use crate::sweep::{self, SweepParam, SweepSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

pub(crate) fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ocilgwm", version, about = "Online class-incremental learning with a global workspace model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run and print its summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Modules to switch off: any of kd, fuse, gwmkd, or `none`.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
    },
    /// Run a grid of parameter values and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Directory for sweep.csv and per-cell run directories.
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Render a run directory or sweep.csv as an SVG line chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKindArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotKindArg {
    Accuracy,
    Sweep,
    Drift,
    Cosine,
}

impl From<PlotKindArg> for PlotKind {
    fn from(k: PlotKindArg) -> Self {
        match k {
            PlotKindArg::Accuracy => PlotKind::Accuracy,
            PlotKindArg::Sweep => PlotKind::Sweep,
            PlotKindArg::Drift => PlotKind::Drift,
            PlotKindArg::Cosine => PlotKind::Cosine,
        }
    }
}

/// Loads and validates a config; every failure is a usage error.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Switches off the listed modules. `none` leaves the config untouched.
pub fn apply_ablation(cfg: &mut RunConfig, modules: &[String]) -> Result<(), CliError> {
    for m in modules {
        match m.trim() {
            "none" | "" => {}
            "kd" => cfg.loss.enable_kd = false,
            "fuse" => cfg.loss.enable_fuse = false,
            "gwmkd" => cfg.loss.enable_gwmkd = false,
            other => {
                return Err(usage(format!(
                    "unknown module `{other}` in --ablate; expected kd, fuse, gwmkd or none"
                )))
            }
        }
    }
    Ok(())
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, ablate: &[String]) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    apply_ablation(&mut cfg, ablate)?;
    let run = train_run(&cfg).map_err(|e| match e {
        gwm_core::Error::Config { .. } => usage(e),
        other => CliError::Run(other.into()),
    })?;
    let s = run.summary;
    println!("FAA={:.4} FRF={:.4} ALA={:.4}", s.faa, s.frf, s.ala);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            ablate,
        } => cmd_run(&config, seed, out, &ablate),
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
        } => {
            let base = load_config(&config)?;
            let spec = SweepSpec::new(base, param, values, seeds)?;
            let rows = sweep::run_sweep(&spec, Some(&out), sweep::worker_count())?;
            let path = out.join("sweep.csv");
            sweep::write_sweep_csv(&path, &spec, &rows).map_err(CliError::Run)?;
            for agg in sweep::aggregate(&spec, &rows) {
                println!(
                    "{}={} FAA={:.4}±{:.4} FRF={:.4}±{:.4} ALA={:.4}±{:.4}",
                    spec.param.name(),
                    agg.value,
                    agg.mean[0],
                    agg.std.map_or(0.0, |s| s[0]),
                    agg.mean[1],
                    agg.std.map_or(0.0, |s| s[1]),
                    agg.mean[2],
                    agg.std.map_or(0.0, |s| s[2]),
                );
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Plot { input, kind, out } => {
            let svg = plot::render(&input, kind.into())?;
            std::fs::write(&out, svg)
                .map_err(|e| CliError::Run(anyhow::anyhow!("writing {}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
