//! One function per experiment tag. Each reads its typed `params`, runs the
//! core computation and writes CSV tables into the output directory.

use std::sync::Arc;

use difflab_core::covariance::{
    fokker_planck_residual, sigma_by_ode, sigma_by_quadrature, sigma_ddim_closed_form, v_factor, v_identity_residual,
};
use difflab_core::equilibrium::{
    circulating_current, circulating_divergence, probability_current, rotating_basis_perturbation,
    rotating_frame_commutator, solve_q, stationary_sigma, SpectralBasis,
};
use difflab_core::evolution::{build_evolution, default_substeps};
use difflab_core::process::{AxisScheduleSet, MatrixFnConfig, ProcessKind, ProcessSpec, Schedule, TimeGrid};
use difflab_core::samplers::{
    ddim_step, ddim_chain, ei_chain, ei_step, exact_backward_path, forward_em, paddim_chain, paddim_step, path_rng,
    probability_flow_integrate, reverse_sde_sample, EpsMode, Recording, ReverseConfig,
};
use difflab_core::score::ScoreModel;
use difflab_core::tables::ProcessTables;
use difflab_core::{Mat, Vector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult, Stage};
use crate::output::{indexed, matrix_headers, OutputDir, Table};

pub fn run_experiment(config: &ExperimentConfig, kind: ExperimentKind, out: &mut OutputDir) -> CliResult<()> {
    log::info!("experiment {} (seed {})", kind.as_str(), config.seed);
    match kind {
        ExperimentKind::ForwardMoments => forward_moments(config, out),
        ExperimentKind::CovarianceMethods => covariance_methods(config, out),
        ExperimentKind::BackwardExact => backward_exact(config, out),
        ExperimentKind::EiChain => ei_exactness(config, out),
        ExperimentKind::DdimChain => ddim_reductions(config, out),
        ExperimentKind::PaddimChain => paddim_exactness(config, out),
        ExperimentKind::LambdaMarginals => lambda_marginals(config, out),
        ExperimentKind::Equilibrium => equilibrium(config, out),
        ExperimentKind::RotatingBasis => rotating_basis(config, out),
        ExperimentKind::ScoreCheck => score_check(config, out),
    }
}

pub(crate) fn vector(name: &str, values: &[f64], d: usize) -> CliResult<Vector> {
    if values.len() != d {
        return Err(CliError::Config(format!("params.{name}: expected {d} entries, got {}", values.len())));
    }
    Ok(Vector::from_column_slice(values))
}

fn max_abs(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax()
}

fn solve(m: &Mat, b: &Vector, stage: &'static str, t: f64) -> CliResult<Vector> {
    m.clone().lu().solve(b).ok_or(CliError::Core {
        stage,
        source: difflab_core::Error::Numerical { time: t, reason: "singular factor".into() },
    })
}

/// Decorrelated seed for an independent sub-stream of an experiment.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn uniform_vector<R: Rng>(rng: &mut R, d: usize, half_width: f64) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| rng.random_range(-half_width..half_width)))
}

fn normal_vector<R: Rng>(rng: &mut R, d: usize) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}

fn random_rotation<R: Rng>(rng: &mut R, d: usize) -> Mat {
    let m = Mat::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    m.qr().q()
}

fn build_tables(spec: &ProcessSpec, grid: &TimeGrid) -> CliResult<Arc<ProcessTables>> {
    let tables = ProcessTables::build(spec, grid).stage("tables")?;
    let defect = tables.evolution().inverse_defect();
    if defect > 1e-8 {
        return Err(CliError::Invariant { stage: "evolution", detail: format!("‖U U⁻¹ − I‖ = {defect:e}") });
    }
    Ok(Arc::new(tables))
}

fn matrix_row(m: &Mat) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |a| (0..m.ncols()).map(move |b| m[(a, b)]))
}

// ---------------------------------------------------------------- forward

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardParams {
    x0: Vec<f64>,
    #[serde(default = "default_paths")]
    paths: usize,
    #[serde(default = "default_forward_times")]
    times: Vec<f64>,
    #[serde(default)]
    keep_paths: usize,
}

fn default_paths() -> usize {
    100_000
}

fn default_forward_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn forward_moments(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: ForwardParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let x0 = vector("x0", &p.x0, d)?;
    if p.paths < 2 {
        return Err(CliError::Config("params.paths must be ≥ 2".into()));
    }
    let mut indices: Vec<usize> = Vec::new();
    for &t in &p.times {
        if !(0.0..=grid.horizon()).contains(&t) {
            return Err(CliError::Config(format!("params.times: {t} outside [0, {}]", grid.horizon())));
        }
        let i = grid.nearest_index(t);
        if grid.index_of(t).is_none() {
            log::warn!("t = {t} is not a grid time; using nearest grid time {}", grid.time(i));
        }
        if !indices.contains(&i) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    let tables = build_tables(&spec, &grid)?;
    let draws = vec![x0.clone(); p.paths];
    let batch = forward_em(&spec, &draws, &grid, config.seed, &Recording::Indices(indices.clone())).stage("samplers")?;

    let mut headers = vec!["t".to_string()];
    for name in ["mean", "variance", "mean_closed_form", "variance_closed_form", "mean_se", "variance_se"] {
        headers.extend(indexed(name, d, true));
    }
    let mut table = Table::new(headers);
    for (k, &i) in indices.iter().enumerate() {
        let m = batch.moments(k);
        let slice = tables.slice(i);
        let mean_cf = &slice.u * &x0;
        let mut row = vec![m.t];
        row.extend(m.mean.iter());
        row.extend((0..d).map(|j| m.covariance[(j, j)]));
        row.extend(mean_cf.iter());
        row.extend((0..d).map(|j| slice.sigma[(j, j)]));
        row.extend(m.mean_se.iter());
        row.extend((0..d).map(|j| m.covariance_se[(j, j)]));
        table.push(row);
    }
    out.write_table("forward_moments.csv", &table)?;

    if p.keep_paths > 0 {
        let kept = &draws[..p.keep_paths.min(p.paths)];
        let paths = forward_em(&spec, kept, &grid, config.seed, &Recording::All).stage("samplers")?;
        out.write_with("trajectories.csv", "samplers", |w| paths.write_csv(w))?;
    }
    Ok(())
}

// ------------------------------------------------------------- covariance

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovarianceParams {
    #[serde(default = "one")]
    v_seed_index: usize,
}

fn one() -> usize {
    1
}

fn covariance_methods(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: CovarianceParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let table = build_evolution(&spec, &grid, default_substeps(&grid)).stage("evolution")?;
    let defect = table.inverse_defect();
    if defect > 1e-8 {
        return Err(CliError::Invariant { stage: "evolution", detail: format!("‖U U⁻¹ − I‖ = {defect:e}") });
    }
    let quad = sigma_by_quadrature(&table).stage("covariance")?;
    let ode = sigma_by_ode(&spec, &grid).stage("covariance")?;
    let closed = if spec.kind().is_ddim() { Some(sigma_ddim_closed_form(&table).stage("covariance")?) } else { None };
    let reference = closed.as_ref().unwrap_or(&quad);
    let factor = v_factor(&table, reference, p.v_seed_index).stage("covariance")?;
    let identity = v_identity_residual(&table, &factor).stage("covariance")?;

    let mut headers = vec!["t", "quad_vs_ode"];
    if closed.is_some() {
        headers.extend(["quad_vs_closed", "ode_vs_closed"]);
    }
    headers.extend(["factor_defect", "v_identity_residual"]);
    let mut rows = Table::new(headers);
    for i in 0..grid.len() {
        let mut row = vec![grid.time(i), (quad.sigma(i) - ode.sigma(i)).norm()];
        if let Some(c) = &closed {
            row.push((quad.sigma(i) - c.sigma(i)).norm());
            row.push((ode.sigma(i) - c.sigma(i)).norm());
        }
        let v = factor.v(i).expect("factor computed");
        row.push((v * v.transpose() - factor.sigma(i)).norm());
        row.push(identity[i]);
        rows.push(row);
    }
    out.write_table("covariance_methods.csv", &rows)?;
    out.write_with("evolution.csv", "evolution", |w| table.write_csv(w))?;
    out.write_with("covariance.csv", "covariance", |w| factor.write_csv(w))?;
    Ok(())
}

// --------------------------------------------------------- backward exact

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackwardParams {
    x0: Vec<f64>,
    x_t: Vec<f64>,
    #[serde(default = "default_pf_steps")]
    steps: usize,
    #[serde(default)]
    times: Option<Vec<f64>>,
}

fn default_pf_steps() -> usize {
    10_000
}

fn backward_exact(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: BackwardParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let horizon = spec.horizon();
    let x0 = vector("x0", &p.x0, d)?;
    let x_t = vector("x_t", &p.x_t, d)?;
    let times = p.times.unwrap_or_else(|| (1..=8).map(|k| horizon * k as f64 / 9.0).collect());
    let tables = build_tables(&spec, &grid)?;
    let tables = Arc::new(Arc::unwrap_or_clone(tables).with_off_grid(true));
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).stage("score")?;
    // The closed-form path at T is U(T) x₀ + x_T.
    let start = &tables.at(horizon).stage("tables")?.u * &x0 + &x_t;

    let mut headers = vec!["t".to_string()];
    headers.extend(indexed("closed_form", d, true));
    headers.extend(indexed("integrated", d, true));
    headers.push("max_abs_diff".into());
    let mut table = Table::new(headers);
    for &t in &times {
        if !(t > 0.0 && t < horizon) {
            return Err(CliError::Config(format!("params.times: {t} is not an interior time of (0, {horizon})")));
        }
        let exact = exact_backward_path(&tables, &x0, &x_t, t).stage("samplers")?;
        let flow = probability_flow_integrate(&model, &start, horizon, t, p.steps, None).stage("samplers")?;
        let mut row = vec![t];
        row.extend(exact.iter());
        row.extend(flow.iter());
        row.push(max_abs(&exact, &flow));
        table.push(row);
    }
    out.write_table("backward_exact.csv", &table)
}

// --------------------------------------------------------------- EI chain

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EiParams {
    #[serde(default = "default_trials_ei")]
    trials: usize,
    #[serde(default = "default_chain_steps_ei")]
    chain_steps: usize,
    #[serde(default = "default_scale")]
    scale: f64,
}

fn default_trials_ei() -> usize {
    20
}

fn default_chain_steps_ei() -> usize {
    50
}

fn default_scale() -> f64 {
    2.0
}

fn ei_exactness(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: EiParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let n = grid.steps();
    if p.chain_steps == 0 || n <= p.chain_steps {
        return Err(CliError::Config(format!("params.chain_steps must be in [1, {})", n)));
    }
    let tables = build_tables(&spec, &grid)?;
    let horizon = grid.horizon();
    let end = tables.slice(n);
    let max_stride = (n - 1) / p.chain_steps;
    let mut rng = path_rng(config.seed, 0);

    let mut table = Table::new(["trial", "t", "single_step_error", "chain_error"]);
    for trial in 0..p.trials {
        let x0 = uniform_vector(&mut rng, d, p.scale);
        let x_t = uniform_vector(&mut rng, d, p.scale);
        // Chain times are grid points n, n − q, …, n − 50q.
        let stride = rng.random_range(1..=max_stride);
        let target = n - p.chain_steps * stride;
        let t = grid.time(target);
        let eps = solve(&end.v, &x_t, "samplers", horizon)?;
        let start = &end.u * &x0 + &x_t;
        let exact = exact_backward_path(&tables, &x0, &x_t, t).stage("samplers")?;
        let single = ei_step(&tables, &start, horizon, t, &eps).stage("samplers")?;
        let times: Vec<f64> = (0..=p.chain_steps).map(|k| grid.time(n - k * stride)).collect();
        let chain = ei_chain(&tables, &start, &times, &EpsMode::Fixed(eps), None).stage("samplers")?;
        let last = chain.last().expect("chain is non-empty");
        table.push(vec![trial as f64, t, max_abs(&single, &exact), max_abs(last, &exact)]);
    }
    out.write_table("ei_chain.csv", &table)
}

// ------------------------------------------------------------- DDIM chain

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainParams {
    x0: Vec<f64>,
    x_t: Vec<f64>,
    #[serde(default = "default_chain_steps")]
    chain_steps: usize,
    #[serde(default)]
    t_end: f64,
    #[serde(default = "default_trials_reduction")]
    trials: usize,
}

fn default_chain_steps() -> usize {
    100
}

fn default_trials_reduction() -> usize {
    1000
}

fn chain_times(horizon: f64, t_end: f64, steps: usize) -> CliResult<Vec<f64>> {
    if steps == 0 || !(0.0..horizon).contains(&t_end) {
        return Err(CliError::Config(format!("need chain_steps ≥ 1 and t_end in [0, {horizon})")));
    }
    Ok((0..=steps)
        .map(|k| if k == steps { t_end } else { horizon - (horizon - t_end) * k as f64 / steps as f64 })
        .collect())
}

fn chain_table(d: usize, rows: impl Iterator<Item = (f64, Vector, Vector)>) -> Table {
    let mut headers = vec!["t".to_string()];
    headers.extend(indexed("x", d, true));
    headers.extend(indexed("closed_form", d, true));
    headers.push("max_abs_diff".into());
    let mut table = Table::new(headers);
    for (t, x, exact) in rows {
        let mut row = vec![t];
        row.extend(x.iter());
        row.extend(exact.iter());
        row.push(max_abs(&x, &exact));
        table.push(row);
    }
    table
}

fn ddim_reductions(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: ChainParams = config.params()?;
    let spec = config.spec()?;
    let Some(schedule) = spec.scalar_schedule().filter(|_| spec.kind() == ProcessKind::DdimPlainVanilla) else {
        return Err(CliError::Config("ddim-chain needs kind = ddim-plain-vanilla".into()));
    };
    let d = spec.dimension();
    let horizon = spec.horizon();
    let x0 = vector("x0", &p.x0, d)?;
    let x_t = vector("x_t", &p.x_t, d)?;
    let root = |t: f64| (0.5 * schedule.log_alpha(t)).exp();
    let noise = |t: f64| (-schedule.log_alpha(t).exp_m1()).max(0.0).sqrt();

    let eps = &x_t / noise(horizon);
    let start = &x0 * root(horizon) + &x_t;
    let times = chain_times(horizon, p.t_end, p.chain_steps)?;
    let chain = ddim_chain(schedule, &start, &times, &EpsMode::Fixed(eps.clone()), None).stage("samplers")?;
    let rows = times.iter().zip(chain).map(|(&t, x)| (t, x, &x0 * root(t) + &eps * noise(t)));
    out.write_table("ddim_chain.csv", &chain_table(d, rows))?;

    // Step-level reductions on random states, times and axes.
    let grid = config.grid()?;
    let tables = build_tables(&spec, &grid)?;
    let mut rng = path_rng(config.seed, 0);
    let mut table = Table::new(["trial", "t_s", "t_prev", "ddim_vs_ei", "paddim_vs_ddim", "rotated_equivariance"]);
    for trial in 0..p.trials {
        let mut pair = [rng.random_range(0.0..horizon), rng.random_range(0.0..horizon)];
        pair.sort_by(f64::total_cmp);
        let (t_prev, t_s) = (pair[0], pair[1].max(1e-6 * horizon));
        let x = normal_vector(&mut rng, d);
        let e = normal_vector(&mut rng, d);
        let alpha = |t: f64| schedule.alpha(t);
        let ddim = ddim_step(alpha(t_s), alpha(t_prev), &x, &e).stage("samplers")?;
        let ei = ei_step(&tables, &x, t_s, t_prev, &e).stage("samplers")?;

        let basis = random_rotation(&mut rng, d);
        let axes: Vec<Vector> = basis.column_iter().map(|c| c.into_owned()).collect();
        let same = AxisScheduleSet::uniform(axes.clone(), schedule.clone()).stage("process")?;
        let pa = paddim_step(&same, t_s, t_prev, &x, &e).stage("samplers")?;

        let forms: Vec<Schedule> = (0..d)
            .map(|_| Schedule::exponential(rng.random_range(0.5..2.0), horizon))
            .collect::<difflab_core::Result<_>>()
            .stage("process")?;
        let spread = AxisScheduleSet::new(axes.clone(), forms.clone(), None).stage("process")?;
        let rot = random_rotation(&mut rng, d);
        let turned = AxisScheduleSet::new(axes.iter().map(|a| &rot * a).collect(), forms, None).stage("process")?;
        let direct = &rot * paddim_step(&spread, t_s, t_prev, &x, &e).stage("samplers")?;
        let rotated = paddim_step(&turned, t_s, t_prev, &(&rot * &x), &(&rot * &e)).stage("samplers")?;

        table.push(vec![
            trial as f64,
            t_s,
            t_prev,
            max_abs(&ddim, &ei),
            max_abs(&pa, &ddim),
            max_abs(&direct, &rotated),
        ]);
    }
    out.write_table("reductions.csv", &table)
}

// ----------------------------------------------------------- paDDIM chain

/// Per-axis U(t) and V(t) of a principal-axis process; the complement of
/// the active axes follows the default schedule, or stays fixed without one.
fn axis_factors(axes: &AxisScheduleSet, t: f64) -> (Mat, Mat) {
    let d = axes.dimension();
    let mut u = Mat::zeros(d, d);
    let mut v = Mat::zeros(d, d);
    let mut rest = Mat::identity(d, d);
    for (axis, s) in axes.axes().iter().zip(axes.schedules()) {
        let projector = axis * axis.transpose();
        let log_alpha = s.log_alpha(t);
        u += &projector * (0.5 * log_alpha).exp();
        v += &projector * (-log_alpha.exp_m1()).max(0.0).sqrt();
        rest -= projector;
    }
    match axes.default_schedule() {
        Some(s) => {
            let log_alpha = s.log_alpha(t);
            u += &rest * (0.5 * log_alpha).exp();
            v += &rest * (-log_alpha.exp_m1()).max(0.0).sqrt();
        }
        None => u += rest,
    }
    (u, v)
}

fn paddim_exactness(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: ChainParams = config.params()?;
    let spec = config.spec()?;
    let Some(axes) = spec.axis_set() else {
        return Err(CliError::Config("paddim-chain needs kind = paddim".into()));
    };
    let d = spec.dimension();
    let horizon = spec.horizon();
    let x0 = vector("x0", &p.x0, d)?;
    let x_t = vector("x_t", &p.x_t, d)?;
    let (u_end, v_end) = axis_factors(axes, horizon);
    // ε is defined only on the moving subspace; a fixed complement keeps ε = 0 there.
    let eps = v_end.clone().pseudo_inverse(1e-12).map_err(|e| CliError::Config(e.to_string()))? * &x_t;
    let start = &u_end * &x0 + &v_end * &eps;
    let times = chain_times(horizon, p.t_end, p.chain_steps)?;
    let chain = paddim_chain(axes, &start, &times, &EpsMode::Fixed(eps.clone()), None).stage("samplers")?;
    let rows = times.iter().zip(chain).map(|(&t, x)| {
        let (u, v) = axis_factors(axes, t);
        (t, x, &u * &x0 + &v * &eps)
    });
    out.write_table("paddim_chain.csv", &chain_table(d, rows))
}

// ------------------------------------------------------- λ marginals

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LambdaParams {
    x0: Vec<f64>,
    #[serde(default = "default_lambdas")]
    lambdas: Vec<f64>,
    #[serde(default = "default_paths")]
    paths: usize,
    #[serde(default = "default_time")]
    time: f64,
    #[serde(default)]
    t_min: Option<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}

fn default_time() -> f64 {
    1.0
}

fn lambda_marginals(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: LambdaParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let x0 = vector("x0", &p.x0, d)?;
    let Some(index) = grid.index_of(p.time) else {
        return Err(CliError::Config(format!("params.time = {} is not a grid time", p.time)));
    };
    let tables = build_tables(&spec, &grid)?;
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).stage("score")?;
    let end = tables.slice(grid.steps());
    let target = tables.slice(index);
    let exact_mean = &target.u * &x0;

    let mut headers = vec!["lambda".to_string(), "t".to_string()];
    headers.extend(indexed("mean", d, false));
    headers.extend(indexed("mean_se", d, false));
    headers.extend(matrix_headers("cov", d));
    headers.extend(matrix_headers("cov_se", d));
    headers.extend(indexed("mean_exact", d, false));
    headers.extend(matrix_headers("cov_exact", d));
    let mut table = Table::new(headers);
    for (l, &lambda) in p.lambdas.iter().enumerate() {
        // Independent terminal draws and noise for every λ.
        let start_seed = sub_seed(config.seed, 2 * l as u64 + 1);
        let starts: Vec<Vector> = (0..p.paths)
            .map(|k| {
                let mut rng = path_rng(start_seed, k as u64);
                &end.u * &x0 + &end.v * normal_vector(&mut rng, d)
            })
            .collect();
        let cfg = ReverseConfig { lambda, t_min: p.t_min };
        let batch = reverse_sde_sample(
            &model,
            &cfg,
            &starts,
            &grid,
            sub_seed(config.seed, 2 * l as u64 + 2),
            &Recording::Indices(vec![index]),
        )
        .stage("samplers")?;
        let k = batch.slot_of(grid.time(index)).ok_or(CliError::Invariant {
            stage: "samplers",
            detail: format!("t = {} not recorded (below t_min?)", p.time),
        })?;
        let m = batch.moments(k);
        let mut row = vec![lambda, m.t];
        row.extend(m.mean.iter());
        row.extend(m.mean_se.iter());
        row.extend(matrix_row(&m.covariance));
        row.extend(matrix_row(&m.covariance_se));
        row.extend(exact_mean.iter());
        row.extend(matrix_row(&target.sigma));
        table.push(row);
    }
    out.write_table("lambda_marginals.csv", &table)
}

// ------------------------------------------------------------ equilibrium

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EquilibriumParams {
    #[serde(default)]
    time: Option<f64>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default = "default_box", rename = "box")]
    probe_box: [f64; 2],
    #[serde(default = "default_probe_count")]
    probes_per_axis: usize,
    #[serde(default = "default_stencil")]
    stencil: f64,
    #[serde(default = "default_q_samples")]
    q_samples: usize,
    #[serde(default = "default_fp_stencils")]
    fp_stencils: Vec<f64>,
    #[serde(default)]
    fp_time: Option<f64>,
    #[serde(default = "default_fp_box")]
    fp_box: [f64; 2],
    #[serde(default = "default_fp_count")]
    fp_probes_per_axis: usize,
}

fn default_box() -> [f64; 2] {
    [-2.0, 2.0]
}

fn default_probe_count() -> usize {
    9
}

fn default_stencil() -> f64 {
    1e-4
}

fn default_q_samples() -> usize {
    64
}

fn default_fp_stencils() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3]
}

fn default_fp_box() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_fp_count() -> usize {
    3
}

/// Tensor grid of `n` points per axis over [lo, hi]^d.
fn probe_grid(d: usize, [lo, hi]: [f64; 2], n: usize) -> CliResult<Vec<Vector>> {
    let total = n.checked_pow(d as u32).filter(|&t| t <= 100_000 && n >= 1);
    let Some(total) = total else {
        return Err(CliError::Config(format!("{n}^{d} probes is out of range (1 to 100000)")));
    };
    let coord = |k: usize| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
    Ok((0..total)
        .map(|mut idx| {
            let mut x = Vector::zeros(d);
            for j in (0..d).rev() {
                x[j] = coord(idx % n);
                idx /= n;
            }
            x
        })
        .collect())
}

fn equilibrium(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: EquilibriumParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let horizon = spec.horizon();
    let x0 = match &p.x0 {
        Some(v) => vector("x0", v, d)?,
        None => Vector::zeros(d),
    };

    // Q along the grid.
    let stride = (grid.steps() / p.q_samples.max(1)).max(1);
    let mut q_table = Table::new([vec!["t".to_string(), "q_norm".into(), "residual".into()], matrix_headers("q", d)].concat());
    for i in (0..grid.len()).step_by(stride) {
        let t = grid.time(i);
        let sol = solve_q(&spec.drift(t).stage("process")?, &spec.diffusion(t).stage("process")?).stage("equilibrium")?;
        let mut row = vec![t, sol.q.norm(), sol.residual];
        row.extend(matrix_row(&sol.q));
        q_table.push(row);
    }
    out.write_table("q.csv", &q_table)?;

    // Currents at one time.
    let requested = p.time.unwrap_or(0.5 * horizon);
    let index = grid.nearest_index(requested);
    let t = grid.time(index);
    if index == 0 {
        return Err(CliError::Config("params.time must be positive: p(x, 0) is a point mass".into()));
    }
    let f = spec.drift(t).stage("process")?;
    let dm = spec.diffusion(t).stage("process")?;
    let q = solve_q(&f, &dm).stage("equilibrium")?.q;
    let stationary = match stationary_sigma(&f, &dm) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("no stationary covariance at t = {t}: {e}");
            None
        }
    };
    if let Some(s) = &stationary {
        let mut table = Table::new([vec!["t".to_string(), "lyapunov_residual".into()], matrix_headers("sigma", d)].concat());
        let mut row = vec![t, (&f * s + s * f.transpose() + &dm).norm()];
        row.extend(matrix_row(s));
        table.push(row);
        out.write_table("stationary.csv", &table)?;
    }

    let tables = build_tables(&spec, &grid)?;
    let mut headers = indexed("x", d, false);
    headers.push("density".into());
    headers.extend(indexed("J", d, false));
    headers.extend(indexed("J_closed", d, false));
    if stationary.is_some() {
        headers.extend(indexed("Jc", d, false));
        headers.push("div_Jc".into());
    }
    let mut currents = Table::new(headers);
    for x in probe_grid(d, p.probe_box, p.probes_per_axis)? {
        let c = probability_current(&tables, &x0, &x, t).stage("equilibrium")?;
        let mut row: Vec<f64> = x.iter().copied().collect();
        row.push(c.density);
        row.extend(c.total.iter());
        row.extend(c.closed_form.iter());
        if let Some(s) = &stationary {
            row.extend(circulating_current(&q, s, &x).stage("equilibrium")?.iter());
            row.push(circulating_divergence(&q, s, &x, p.stencil).stage("equilibrium")?);
        }
        currents.push(row);
    }
    out.write_table("currents.csv", &currents)?;

    // Fokker–Planck residual against the stencil width.
    let fp_time = p.fp_time.unwrap_or(0.5 * horizon);
    let probes = probe_grid(d, p.fp_box, p.fp_probes_per_axis)?;
    let mut fp = Table::new(["h", "max_residual", "evaluated", "skipped"]);
    for &h in &p.fp_stencils {
        let r = fokker_planck_residual(&spec, &x0, None, fp_time, &probes, h).stage("covariance")?;
        fp.push(vec![h, r.max_residual, r.evaluated as f64, r.skipped as f64]);
    }
    out.write_table("fokker_planck.csv", &fp)
}

// --------------------------------------------------------- rotating basis

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotatingParams {
    #[serde(default = "default_omegas")]
    omegas: Vec<f64>,
    #[serde(default = "default_basis_samples")]
    samples: usize,
}

fn default_omegas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_basis_samples() -> usize {
    64
}

fn rotating_basis(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: RotatingParams = config.params()?;
    let Some(MatrixFnConfig::RotatingDiagonal { eigenvalues, .. }) = &config.process.diffusion else {
        return Err(CliError::Config("rotating-basis needs kind = ddim-general with a rotating-diagonal diffusion".into()));
    };
    let grid = config.grid()?;
    let stride = (grid.steps() / p.samples.max(1)).max(1);
    let mut indices: Vec<usize> = (0..grid.len()).step_by(stride).collect();
    if indices.last() != Some(&grid.steps()) {
        indices.push(grid.steps());
    }
    let times: Vec<f64> = indices.iter().map(|&i| grid.time(i)).collect();

    let d = eigenvalues.len();
    let mut detail = Table::new(
        [vec!["omega".to_string(), "t".into(), "error".into()], matrix_headers("predicted", d), matrix_headers("exact", d)]
            .concat(),
    );
    let mut summary = Table::new(["omega", "max_error", "max_exact", "within_validity"]);
    for &omega in &p.omegas {
        let mut process = config.process.clone();
        process.diffusion = Some(MatrixFnConfig::RotatingDiagonal { eigenvalues: eigenvalues.clone(), omega });
        let spec = ProcessSpec::from_config(process).stage("process")?;
        let table = build_evolution(&spec, &grid, default_substeps(&grid)).stage("evolution")?;
        let basis = SpectralBasis::new(eigenvalues.clone(), omega).stage("equilibrium")?;
        let predicted = rotating_basis_perturbation(&basis, &times).stage("equilibrium")?;
        let exact = rotating_frame_commutator(&table, &basis).stage("equilibrium")?;
        if !predicted.within_validity {
            log::warn!("ω = {omega}: |ω| T > 0.25, outside the range where the expansion is asserted");
        }
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for (k, &i) in indices.iter().enumerate() {
            let err = (&predicted.antisymmetric[k] - &exact[i]).amax();
            worst = worst.max(err);
            scale = scale.max(exact[i].amax());
            let mut row = vec![omega, times[k], err];
            row.extend(matrix_row(&predicted.antisymmetric[k]));
            row.extend(matrix_row(&exact[i]));
            detail.push(row);
        }
        summary.push(vec![omega, worst, scale, if predicted.within_validity { 1.0 } else { 0.0 }]);
    }
    out.write_table("rotating_basis.csv", &detail)?;
    out.write_table("rotating_basis_summary.csv", &summary)
}

// ------------------------------------------------------------ score check

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreParams {
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default = "default_probes")]
    probes: usize,
    #[serde(default = "default_fd_step")]
    h: f64,
    #[serde(default = "default_scale")]
    scale: f64,
    #[serde(default = "default_min_time_fraction")]
    min_time_fraction: f64,
}

fn default_probes() -> usize {
    100
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_min_time_fraction() -> f64 {
    0.05
}

fn fd_gradient(model: &ScoreModel, x: &Vector, t: f64, h: f64) -> CliResult<Vector> {
    let mut g = Vector::zeros(x.len());
    for j in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        g[j] = (model.log_density(&plus, t).stage("score")? - model.log_density(&minus, t).stage("score")?) / (2.0 * h);
    }
    Ok(g)
}

fn score_check(config: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let p: ScoreParams = config.params()?;
    let spec = config.spec()?;
    let grid = config.grid()?;
    let d = spec.dimension();
    let tables = build_tables(&spec, &grid)?;
    let points = match &p.points {
        Some(list) => list.iter().map(|v| vector("points", v, d)).collect::<CliResult<Vec<_>>>()?,
        None => vec![Vector::from_element(d, -1.0), Vector::from_element(d, 1.0)],
    };
    let weights = p.weights.clone().unwrap_or_else(|| vec![1.0; points.len()]);
    let x0 = match &p.x0 {
        Some(v) => vector("x0", v, d)?,
        None => points[0].clone(),
    };
    let single = ScoreModel::single_point(tables.clone(), x0.clone()).stage("score")?;
    let mixture = ScoreModel::mixture(tables.clone(), points, weights).stage("score")?;
    let lone = ScoreModel::mixture(tables.clone(), vec![x0.clone()], vec![1.0]).stage("score")?;

    let n = grid.steps();
    let first = ((p.min_time_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = path_rng(config.seed, 0);
    let mut table = Table::new(["variant", "probe", "t", "max_abs_error"]);
    for (variant, model) in [(0.0, &single), (1.0, &mixture)] {
        for probe in 0..p.probes {
            let t = grid.time(rng.random_range(first..=n));
            let x = uniform_vector(&mut rng, d, p.scale);
            let analytic = model.score(&x, t).stage("score")?;
            let numeric = fd_gradient(model, &x, t, p.h)?;
            table.push(vec![variant, probe as f64, t, max_abs(&analytic, &numeric)]);
        }
    }
    for probe in 0..p.probes {
        let t = grid.time(rng.random_range(1..=n));
        let x = uniform_vector(&mut rng, d, p.scale);
        let a = single.score(&x, t).stage("score")?;
        let b = lone.score(&x, t).stage("score")?;
        table.push(vec![2.0, probe as f64, t, max_abs(&a, &b)]);
    }
    out.write_table("score_check.csv", &table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_grid_is_row_major() {
        let g = probe_grid(2, [0.0, 1.0], 2).unwrap();
        let flat: Vec<f64> = g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        assert_eq!(flat, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert!(probe_grid(6, [0.0, 1.0], 10).is_err());
    }

    #[test]
    fn chain_times_hit_both_ends() {
        let t = chain_times(5.0, 0.0, 4).unwrap();
        assert_eq!(t, vec![5.0, 3.75, 2.5, 1.25, 0.0]);
        assert!(chain_times(5.0, 5.0, 4).is_err());
    }
}
