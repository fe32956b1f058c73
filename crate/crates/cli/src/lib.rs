//! `difflab`: configuration-driven experiment runner over `difflab-core`.
//!
//! Every command reads a JSON experiment config, writes CSV tables into an
//! output directory and finishes with `manifest.json` (config echo, tool
//! versions, seed, SHA-256 of every file written).

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod sample;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
use output::OutputDir;
use plot::{PlotKind, PlotOptions};
use sample::{EpsChoice, Method, SampleOptions};

#[derive(Debug, Parser)]
#[command(name = "difflab", version, about = "Linear diffusion laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: config `output`, else `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Euler–Maruyama ensemble moments against the exact Gaussian marginal.
    SimulateForward {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// U(t), Σ(t) by every available method, and V(t).
    Covariance {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form backward trajectory vs the integrated probability-flow ODE.
    ReversePath {
        #[command(flatten)]
        common: Common,
    },
    /// Sample paths from one of the sampler families.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Uniform grid with this many steps (default: the config grid).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, value_enum, default_value = "from-xT")]
        eps_mode: EpsChoice,
        #[arg(long)]
        t_min: Option<f64>,
    },
    /// Q, stationary covariance, probability currents and the Fokker–Planck residual.
    DiagnoseEquilibrium {
        #[command(flatten)]
        common: Common,
        /// Also render currents.svg (d = 2).
        #[arg(long)]
        plot: bool,
    },
    /// First-order rotating-basis prediction vs the time-ordered product.
    RotatingBasis {
        #[command(flatten)]
        common: Common,
    },
    /// Render a CSV table as SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output file (default: the CSV path with extension .svg).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Vec<String>,
        #[arg(long)]
        u: Option<String>,
        #[arg(long)]
        v: Option<String>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Run the experiment named in the config (or given here).
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        experiment: Option<ExperimentKind>,
    },
}

fn prepare(common: &Common) -> CliResult<(ExperimentConfig, OutputDir)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let root = common.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = OutputDir::create(&root)?;
    Ok((config, out))
}

fn run_kind(common: &Common, kind: ExperimentKind, tweak: impl FnOnce(&mut ExperimentConfig)) -> CliResult<OutputDir> {
    let (mut config, mut out) = prepare(common)?;
    config.experiment = Some(kind);
    tweak(&mut config);
    experiments::run_experiment(&config, kind, &mut out)?;
    let root = out.root().to_path_buf();
    out.finish(&config, kind.as_str())?;
    OutputDir::create(&root)
}

fn write_plot(csv: &Path, kind: PlotKind, options: &PlotOptions, target: &Path) -> CliResult<()> {
    let bytes = std::fs::read(csv).map_err(|e| CliError::io(csv, e))?;
    let rendered = plot::render(&bytes, kind, options)?;
    if rendered.empty {
        log::warn!("{} has no data rows; wrote empty axes", csv.display());
    }
    std::fs::write(target, rendered.svg).map_err(|e| CliError::io(target, e))?;
    log::info!("wrote {}", target.display());
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SimulateForward { common, paths } => {
            run_kind(&common, ExperimentKind::ForwardMoments, |c| {
                if let Some(n) = paths {
                    c.params.insert("paths".into(), n.into());
                }
            })?;
        }
        Command::Covariance { common } => {
            run_kind(&common, ExperimentKind::CovarianceMethods, |_| {})?;
        }
        Command::ReversePath { common } => {
            run_kind(&common, ExperimentKind::BackwardExact, |_| {})?;
        }
        Command::RotatingBasis { common } => {
            run_kind(&common, ExperimentKind::RotatingBasis, |_| {})?;
        }
        Command::DiagnoseEquilibrium { common, plot } => {
            let out = run_kind(&common, ExperimentKind::Equilibrium, |_| {})?;
            if plot {
                let options = PlotOptions { title: Some("probability current".into()), ..Default::default() };
                write_plot(&out.path("currents.csv"), PlotKind::VectorField, &options, &out.path("currents.svg"))?;
            }
        }
        Command::Sample { common, method, lambda, steps, paths, eps_mode, t_min } => {
            let (config, mut out) = prepare(&common)?;
            let options = SampleOptions { method, lambda, steps, paths, eps_mode, t_min };
            sample::sample(&config, &options, &mut out)?;
            out.finish(&config, "sample")?;
        }
        Command::Run { common, experiment } => {
            let (config, mut out) = prepare(&common)?;
            let Some(kind) = experiment.or(config.experiment) else {
                return Err(CliError::Config("no experiment: set `experiment` in the config or pass --experiment".into()));
            };
            let config = ExperimentConfig { experiment: Some(kind), ..config };
            experiments::run_experiment(&config, kind, &mut out)?;
            out.finish(&config, kind.as_str())?;
        }
        Command::Plot { csv, kind, out, x, y, u, v, title } => {
            let target = out.unwrap_or_else(|| csv.with_extension("svg"));
            write_plot(&csv, kind, &PlotOptions { x, y, u, v, title }, &target)?;
        }
    }
    Ok(())
}

/// Applies `DIFFLAB_THREADS` to the global worker pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DIFFLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("DIFFLAB_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("DIFFLAB_THREADS: {e}")))
}
