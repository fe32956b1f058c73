//! The `sample` subcommand: ensembles from any of the sampler families.

use std::sync::Arc;

use difflab_core::process::TimeGrid;
use difflab_core::samplers::{
    ddim_chain, ei_chain, forward_em, paddim_chain, path_rng, probability_flow_trajectory, reverse_sde_sample,
    Direction, EpsMode, Recording, ReverseConfig, SamplerMethod, TrajectoryBatch, DEFAULT_T_MIN_FRACTION,
};
use difflab_core::score::ScoreModel;
use difflab_core::tables::ProcessTables;
use difflab_core::Vector;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::experiments::{sub_seed, vector};
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Em,
    Sde,
    PfOde,
    Ei,
    Ddim,
    Paddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EpsChoice {
    /// ε drawn once per path from N(0, I).
    FixedVector,
    #[value(name = "from-xT", alias = "from-xt")]
    FromXT,
    StateDependent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub method: Method,
    pub lambda: f64,
    pub steps: Option<usize>,
    pub paths: usize,
    pub eps_mode: EpsChoice,
    pub t_min: Option<f64>,
}

/// Data distribution: `points` with `weights`, or a single `x0`. Other
/// keys in `params` belong to experiments and are ignored here.
#[derive(Debug, Deserialize)]
struct DataParams {
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

pub fn sample(config: &ExperimentConfig, options: &SampleOptions, out: &mut OutputDir) -> CliResult<()> {
    let data: DataParams = config.params()?;
    let spec = config.spec()?;
    let d = spec.dimension();
    let horizon = spec.horizon();
    let points = match (&data.points, &data.x0) {
        (Some(list), _) => list.iter().map(|v| vector("points", v, d)).collect::<CliResult<Vec<_>>>()?,
        (None, Some(x0)) => vec![vector("x0", x0, d)?],
        (None, None) => return Err(CliError::Config("sample needs params.x0 or params.points".into())),
    };
    let weights = data.weights.clone().unwrap_or_else(|| vec![1.0; points.len()]);
    let picker = WeightedIndex::new(&weights).map_err(|e| CliError::Config(format!("params.weights: {e}")))?;
    if options.paths == 0 {
        return Err(CliError::Config("--paths must be ≥ 1".into()));
    }
    let grid = match options.steps {
        Some(n) => TimeGrid::uniform(horizon, n).stage("grid")?,
        None => config.grid()?,
    };
    let t_min = options.t_min.unwrap_or(DEFAULT_T_MIN_FRACTION * horizon);
    let seed = config.seed;

    if options.method == Method::Em {
        let draws: Vec<Vector> = (0..options.paths)
            .map(|k| points[picker.sample(&mut path_rng(sub_seed(seed, 1), k as u64))].clone())
            .collect();
        let batch = forward_em(&spec, &draws, &grid, seed, &Recording::All).stage("samplers")?;
        return out.write_with("samples.csv", "samplers", |w| batch.write_csv(w));
    }

    let tables = Arc::new(ProcessTables::build(&spec, &grid).stage("tables")?.with_off_grid(true));
    let model = if points.len() == 1 {
        ScoreModel::single_point(tables.clone(), points[0].clone())
    } else {
        ScoreModel::mixture(tables.clone(), points.clone(), weights)
    }
    .stage("score")?;
    let end = tables.slice(grid.steps());
    // Terminal draws x_T = U(T) x₀ + V(T) z, then a per-path ε for fixed mode.
    let starts: Vec<(Vector, Vector)> = (0..options.paths)
        .map(|k| {
            let mut rng = path_rng(sub_seed(seed, 1), k as u64);
            let c = picker.sample(&mut rng);
            let z = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let eps = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            (&end.u * &points[c] + &end.v * z, eps)
        })
        .collect();

    let batch = match options.method {
        Method::Em => unreachable!(),
        Method::Sde => {
            let cfg = ReverseConfig { lambda: options.lambda, t_min: Some(t_min) };
            let xs: Vec<Vector> = starts.into_iter().map(|(x, _)| x).collect();
            reverse_sde_sample(&model, &cfg, &xs, &grid, sub_seed(seed, 2), &Recording::All).stage("samplers")?
        }
        Method::PfOde => {
            let steps = grid.steps();
            let paths: Vec<Vec<(f64, Vector)>> = starts
                .par_iter()
                .map(|(x, _)| probability_flow_trajectory(&model, x, horizon, t_min, steps, Some(t_min)))
                .collect::<difflab_core::Result<_>>()
                .stage("samplers")?;
            let times = paths[0].iter().map(|(t, _)| *t).collect();
            let paths = paths.into_iter().map(|p| p.into_iter().map(|(_, x)| x).collect()).collect();
            TrajectoryBatch::from_paths(times, paths, Direction::Reverse, seed, SamplerMethod::PfOde).stage("samplers")?
        }
        Method::Ei | Method::Ddim | Method::Paddim => {
            let times: Vec<f64> = grid.reverse_indices(t_min).into_iter().map(|i| grid.time(i)).collect();
            let method = match options.method {
                Method::Ei => SamplerMethod::Ei,
                Method::Ddim => SamplerMethod::Ddim,
                _ => SamplerMethod::Paddim,
            };
            let schedule = spec.scalar_schedule();
            let axes = spec.axis_set();
            match (method, schedule, axes) {
                (SamplerMethod::Ddim, None, _) => {
                    return Err(CliError::Config("--method ddim needs a process with a scalar schedule".into()))
                }
                (SamplerMethod::Paddim, _, None) => return Err(CliError::Config("--method paddim needs kind = paddim".into())),
                _ => {}
            }
            let paths: Vec<Vec<Vector>> = starts
                .par_iter()
                .map(|(x, eps)| {
                    let mode = match options.eps_mode {
                        EpsChoice::FixedVector => EpsMode::Fixed(eps.clone()),
                        EpsChoice::FromXT => EpsMode::FromXT,
                        EpsChoice::StateDependent => EpsMode::StateDependent,
                    };
                    match method {
                        SamplerMethod::Ddim => ddim_chain(schedule.unwrap(), x, &times, &mode, Some(&model)),
                        SamplerMethod::Paddim => paddim_chain(axes.unwrap(), x, &times, &mode, Some(&model)),
                        _ => ei_chain(&tables, x, &times, &mode, Some(&model)),
                    }
                })
                .collect::<difflab_core::Result<_>>()
                .stage("samplers")?;
            TrajectoryBatch::from_paths(times, paths, Direction::Reverse, seed, method).stage("samplers")?
        }
    };
    out.write_with("samples.csv", "samplers", |w| batch.write_csv(w))
}
