mod common;

use std::sync::Arc;

use common::{plain_vanilla, rotation_decay, Lcg};
use difflab_core::process::{constant_spec, plane_rotation, AxisScheduleSet, Schedule, ScheduleForm, TimeGrid};
use difflab_core::samplers::{
    ddim_chain, ddim_step, ei_chain, ei_step, exact_backward_path, forward_em, paddim_step,
    probability_flow_integrate, probability_flow_trajectory, reverse_sde_sample, Direction, EpsMode, Recording,
    ReverseConfig, SamplerMethod,
};
use difflab_core::score::ScoreModel;
use difflab_core::tables::ProcessTables;
use difflab_core::{Error, Mat, Vector};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn pv_tables(n: usize) -> Arc<ProcessTables> {
    Arc::new(ProcessTables::build(&plain_vanilla(5.0, 1), &TimeGrid::uniform(5.0, n).unwrap()).unwrap())
}

fn within_3se(value: f64, target: f64, se: f64) -> bool {
    (value - target).abs() <= 3.0 * se
}

#[test]
fn noiseless_em_follows_the_mean() {
    let f = Mat::identity(2, 2) * -0.5;
    let spec = constant_spec(2.0, &f, &Mat::zeros(2, 2)).unwrap();
    let grid = TimeGrid::uniform(2.0, 2000).unwrap();
    let batch = forward_em(&spec, &[v(&[1.0, 0.0])], &grid, 0, &Recording::All).unwrap();
    assert_eq!(batch.direction(), Direction::Forward);
    assert_eq!(batch.position(0, 0), &[1.0, 0.0]);
    for k in (0..=2000).step_by(250) {
        let t = grid.time(k);
        let p = batch.position(0, k);
        assert!((p[0] - (-0.5 * t).exp()).abs() < grid.time(1));
        assert_eq!(p[1], 0.0);
    }
}

#[test]
fn em_moments_match_plain_vanilla_closed_forms() {
    let spec = plain_vanilla(5.0, 1);
    let grid = TimeGrid::uniform(5.0, 4096).unwrap();
    let k1 = grid.nearest_index(1.0);
    let batch = forward_em(&spec, &vec![v(&[2.0]); 100_000], &grid, 42, &Recording::Indices(vec![k1])).unwrap();
    let m = batch.moments(0);
    let t = batch.times()[0];
    let alpha = (-t).exp();
    assert!(within_3se(m.mean[0], 2.0 * alpha.sqrt(), m.mean_se[0]), "{:?}", m);
    assert!(within_3se(m.covariance[(0, 0)], 1.0 - alpha, m.covariance_se[(0, 0)]), "{:?}", m);
}

#[test]
fn em_is_reproducible_across_thread_counts() {
    let spec = rotation_decay(1.0, 0.3);
    let grid = TimeGrid::uniform(1.0, 64).unwrap();
    let x0 = vec![v(&[0.5, 0.5]); 257];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| forward_em(&spec, &x0, &grid, 9, &Recording::All).unwrap())
    };
    assert_eq!(run(1), run(3));
    let other = forward_em(&spec, &x0, &grid, 10, &Recording::All).unwrap();
    assert_ne!(run(1), other);
}

#[test]
fn exact_backward_path_examples() {
    let tables = pv_tables(500);
    let (x0, xt) = (v(&[2.0]), v(&[0.3]));
    let got = exact_backward_path(&tables, &x0, &xt, 1.0).unwrap()[0];
    let expected = (-0.5f64).exp() * 2.0 + ((1.0 - (-1f64).exp()) / (1.0 - (-5f64).exp())).sqrt() * 0.3;
    assert!((got - expected).abs() < 1e-12);
    assert!((got - 1.4524).abs() < 5e-5);
    assert_eq!(exact_backward_path(&tables, &x0, &xt, 0.0).unwrap(), x0);
    let end = exact_backward_path(&tables, &x0, &xt, 5.0).unwrap();
    assert!((end[0] - 0.3).abs() <= (-2.5f64).exp() * 2.0 + 1e-15);
}

#[test]
fn exact_backward_path_is_jointly_linear() {
    let tables = Arc::new(ProcessTables::build(&rotation_decay(1.0, 0.3), &TimeGrid::uniform(1.0, 256).unwrap()).unwrap());
    let mut rng = Lcg::new(1);
    for _ in 0..20 {
        let t = tables.grid().time((rng.uniform() * 256.0) as usize);
        let (a0, at, b0, bt) = (rng.vector(2, 2.0), rng.vector(2, 2.0), rng.vector(2, 2.0), rng.vector(2, 2.0));
        let (p, q) = (rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
        let lhs = exact_backward_path(&tables, &(&a0 * p + &b0 * q), &(&at * p + &bt * q), t).unwrap();
        let rhs = exact_backward_path(&tables, &a0, &at, t).unwrap() * p
            + exact_backward_path(&tables, &b0, &bt, t).unwrap() * q;
        assert!((lhs - rhs).amax() < 1e-12);
    }
}

#[test]
fn probability_flow_reproduces_closed_form() {
    let tables = pv_tables(500);
    let (x0, xt) = (v(&[2.0]), v(&[0.3]));
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let start = exact_backward_path(&tables, &x0, &xt, 5.0).unwrap();
    let end = probability_flow_integrate(&model, &start, 5.0, 1.0, 10_000, None).unwrap();
    let exact = exact_backward_path(&tables, &x0, &xt, 1.0).unwrap();
    assert!((end - exact).amax() < 1e-6);
}

#[test]
fn probability_flow_stays_on_the_mean() {
    let tables = Arc::new(ProcessTables::build(&rotation_decay(1.0, 0.3), &TimeGrid::uniform(1.0, 64).unwrap()).unwrap());
    let x0 = v(&[1.0, -1.0]);
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let start = tables.at(1.0).unwrap().u * &x0;
    let path = probability_flow_trajectory(&model, &start, 1.0, 0.25, 24, None).unwrap();
    for (t, x) in path {
        let mean = tables.at_any(t).unwrap().u * &x0;
        assert!((x - mean).amax() < 1e-8);
    }
}

#[test]
fn mixture_flow_lands_near_a_data_point() {
    let tables = pv_tables(500);
    let points = vec![v(&[1.0]), v(&[-1.5])];
    let model = ScoreModel::mixture(tables, points.clone(), vec![1.0, 1.0]).unwrap();
    // At t_min the flow sits at √α x₀ + V(t_min) ε, so the residual distance
    // is V(t_min)|ε| ≈ 0.022|ε|: bound it by three component widths.
    let t_min = 5e-4f64;
    let width = (-(-t_min).exp_m1()).sqrt();
    for (start, basin) in [(-1.2, 1), (-0.3, 1), (0.1, 0), (0.8, 0), (2.0, 0)] {
        let coarse = probability_flow_integrate(&model, &v(&[start]), 5.0, 0.0, 20_000, None).unwrap();
        let fine = probability_flow_integrate(&model, &v(&[start]), 5.0, 0.0, 40_000, None).unwrap();
        assert!((&coarse - &fine).amax() < 1e-5);
        let dist: Vec<f64> = points.iter().map(|p| (p - &fine).amax()).collect();
        assert!(dist[basin] < dist[1 - basin], "start {start}: ended at {fine}");
        assert!(dist[basin] <= 3.0 * width, "start {start}: ended at {fine}");
    }
}

#[test]
fn probability_flow_refuses_to_start_below_the_floor() {
    let model = ScoreModel::single_point(pv_tables(10), v(&[0.0])).unwrap();
    assert!(matches!(
        probability_flow_integrate(&model, &v(&[0.0]), 1e-6, 0.0, 10, None),
        Err(Error::Domain(_))
    ));
}

#[test]
fn lambda_zero_sde_is_the_probability_flow() {
    let tables = pv_tables(4096);
    let model = ScoreModel::single_point(tables.clone(), v(&[2.0])).unwrap();
    let grid = tables.grid().clone();
    let starts: Vec<Vector> = [-1.0, 0.3, 1.7].iter().map(|x| v(&[*x])).collect();
    let cfg = ReverseConfig { lambda: 0.0, t_min: Some(1.0) };
    let batch = reverse_sde_sample(&model, &cfg, &starts, &grid, 5, &Recording::All).unwrap();
    assert_eq!(batch.method(), SamplerMethod::Sde);
    assert_eq!(batch.direction(), Direction::Reverse);
    let last = batch.times().len() - 1;
    let t_end = batch.times()[last];
    assert!(t_end >= 1.0 && t_end - 1.0 < grid.time(1));
    for (p, s) in starts.iter().enumerate() {
        let pf = probability_flow_integrate(&model, s, 5.0, t_end, 4096, None).unwrap();
        assert!((batch.position(p, last)[0] - pf[0]).abs() < 5e-3);
    }
}

#[test]
fn reverse_ensembles_preserve_the_marginal() {
    let tables = pv_tables(2000);
    let x0 = v(&[2.0]);
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let end = tables.at(5.0).unwrap();
    let mut rng = Lcg::new(77);
    let n = 20_000;
    let starts: Vec<Vector> = (0..n)
        .map(|_| {
            // Box–Muller draws from the exact marginal at T.
            let (a, b) = (rng.uniform().max(1e-300), rng.uniform());
            let z = (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos();
            &end.u * &x0 + &end.v * v(&[z])
        })
        .collect();
    let grid = tables.grid().clone();
    let k1 = grid.index_of(1.0).unwrap();
    let target = tables.at(1.0).unwrap();
    for lambda in [1.0, 2.0] {
        let cfg = ReverseConfig { lambda, t_min: None };
        let batch = reverse_sde_sample(&model, &cfg, &starts, &grid, 3, &Recording::Indices(vec![k1])).unwrap();
        let m = batch.moments(0);
        assert!(within_3se(m.mean[0], (&target.u * &x0)[0], m.mean_se[0]), "λ={lambda}: {m:?}");
        assert!(within_3se(m.covariance[(0, 0)], target.sigma[(0, 0)], m.covariance_se[(0, 0)]), "λ={lambda}: {m:?}");
    }
    assert!(reverse_sde_sample(&model, &ReverseConfig { lambda: -1.0, t_min: None }, &starts, &grid, 3, &Recording::All).is_err());
}

#[test]
fn ei_is_exact_for_constant_epsilon() {
    let tables = Arc::new(ProcessTables::build(&rotation_decay(1.0, 0.3), &TimeGrid::uniform(1.0, 200).unwrap()).unwrap());
    let grid = tables.grid().clone();
    let end = tables.at(1.0).unwrap();
    let mut rng = Lcg::new(4);
    for _ in 0..20 {
        let (x0, xt) = (rng.vector(2, 2.0), rng.vector(2, 2.0));
        let t = grid.time(1 + (rng.uniform() * 198.0) as usize);
        let eps = end.v.clone().lu().solve(&xt).unwrap();
        let start = exact_backward_path(&tables, &x0, &xt, 1.0).unwrap();
        let one = ei_step(&tables, &start, 1.0, t, &eps).unwrap();
        assert!((one - exact_backward_path(&tables, &x0, &xt, t).unwrap()).amax() < 1e-10);
        assert_eq!(ei_step(&tables, &start, 1.0, 1.0, &eps).unwrap(), start);

        let times: Vec<f64> = (0..=50).rev().map(|k| grid.time(k * 4)).collect();
        let chain = ei_chain(&tables, &start, &times, &EpsMode::Fixed(eps.clone()), None).unwrap();
        for (x, &s) in chain.iter().zip(&times) {
            assert!((x - exact_backward_path(&tables, &x0, &xt, s).unwrap()).amax() < 1e-9);
        }
    }
}

#[test]
fn state_dependent_ei_chain_returns_to_the_data_point() {
    let tables = Arc::new(ProcessTables::build(&rotation_decay(1.0, 0.3), &TimeGrid::uniform(1.0, 200).unwrap()).unwrap());
    let x0 = v(&[0.7, -1.1]);
    let model = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let start = exact_backward_path(&tables, &x0, &v(&[0.4, 0.9]), 1.0).unwrap();
    let times: Vec<f64> = (0..=200).rev().map(|k| tables.grid().time(k)).collect();
    let chain = ei_chain(&tables, &start, &times, &EpsMode::StateDependent, Some(&model)).unwrap();
    assert!((chain.last().unwrap() - &x0).amax() < 1e-4);
    assert!(ei_chain(&tables, &start, &times, &EpsMode::StateDependent, None).is_err());
}

#[test]
fn ddim_matches_ei_under_scalar_substitution() {
    let tables = pv_tables(1000);
    let s = Schedule::exponential(1.0, 5.0).unwrap();
    let mut rng = Lcg::new(6);
    for _ in 0..1000 {
        let a = tables.grid().time(1 + (rng.uniform() * 999.0) as usize);
        let b = tables.grid().time(1 + (rng.uniform() * 999.0) as usize);
        let (ts, tp) = if a >= b { (a, b) } else { (b, a) };
        let (x, e) = (rng.vector(1, 3.0), rng.vector(1, 3.0));
        let ddim = ddim_step(s.alpha(ts), s.alpha(tp), &x, &e).unwrap();
        let ei = ei_step(&tables, &x, ts, tp, &e).unwrap();
        assert!((ddim - ei).amax() <= 1e-12 * (1.0 + x.amax() + e.amax()));
    }
    assert_eq!(ddim_step(0.3, 0.3, &v(&[1.0]), &v(&[5.0])).unwrap(), v(&[1.0]));
    assert!(ddim_step(0.0, 0.5, &v(&[1.0]), &v(&[1.0])).is_err());
}

#[test]
fn ddim_chain_returns_the_implied_data_point() {
    let s = Schedule::exponential(1.0, 5.0).unwrap();
    let eps = 0.3 / (1.0 - (-5f64).exp()).sqrt();
    let times: Vec<f64> = (0..=100).rev().map(|k| k as f64 * 0.05).collect();
    let chain = ddim_chain(&s, &v(&[0.3]), &times, &EpsMode::Fixed(v(&[eps])), None).unwrap();
    assert!(chain.last().unwrap()[0].abs() < 1e-6);
    let direct = ddim_step((-5f64).exp(), (-1f64).exp(), &v(&[0.3]), &v(&[eps])).unwrap();
    assert!((direct[0] - chain[80][0]).abs() < 1e-12);
}

fn sched(beta: f64) -> Schedule {
    Schedule::new(ScheduleForm::exponential(beta), 5.0).unwrap()
}

#[test]
fn paddim_reductions() {
    let mut rng = Lcg::new(8);
    let r = plane_rotation(2, std::f64::consts::FRAC_PI_6);
    let rotated: Vec<Vector> = (0..2).map(|j| r.column(j).into_owned()).collect();
    let coord = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])];
    let uniform = AxisScheduleSet::uniform(rotated.clone(), sched(1.0)).unwrap();
    let split_coord = AxisScheduleSet::new(coord.clone(), vec![sched(0.7), sched(1.9)], None).unwrap();
    let split_rot = AxisScheduleSet::new(rotated, vec![sched(0.7), sched(1.9)], None).unwrap();
    for _ in 0..1000 {
        let ts = rng.range(0.01, 5.0);
        let tp = rng.range(0.0, ts);
        let (x, e) = (rng.vector(2, 3.0), rng.vector(2, 3.0));
        let tol = 1e-12 * (1.0 + x.amax() + e.amax());

        let p = paddim_step(&uniform, ts, tp, &x, &e).unwrap();
        let d = ddim_step(sched(1.0).alpha(ts), sched(1.0).alpha(tp), &x, &e).unwrap();
        assert!((p - d).amax() <= tol);

        let p = paddim_step(&split_coord, ts, tp, &x, &e).unwrap();
        for (j, beta) in [0.7, 1.9].into_iter().enumerate() {
            let s = sched(beta);
            let one = ddim_step(s.alpha(ts), s.alpha(tp), &v(&[x[j]]), &v(&[e[j]])).unwrap();
            assert!((p[j] - one[0]).abs() <= tol);
        }

        let direct = paddim_step(&split_rot, ts, tp, &x, &e).unwrap();
        let conj = paddim_step(&split_coord, ts, tp, &(r.transpose() * &x), &(r.transpose() * &e)).unwrap();
        assert!((direct - &r * conj).amax() <= tol);
    }
}

#[test]
fn paddim_complement_uses_the_default_schedule() {
    let axes = AxisScheduleSet::new(vec![v(&[1.0, 0.0, 0.0])], vec![sched(0.5)], Some(sched(2.0))).unwrap();
    let x = v(&[1.0, 2.0, -1.0]);
    let e = v(&[0.5, 0.1, 0.3]);
    let p = paddim_step(&axes, 2.0, 1.0, &x, &e).unwrap();
    let tail = ddim_step(sched(2.0).alpha(2.0), sched(2.0).alpha(1.0), &v(&[2.0, -1.0]), &v(&[0.1, 0.3])).unwrap();
    assert!((p[1] - tail[0]).abs() < 1e-14 && (p[2] - tail[1]).abs() < 1e-14);
    let skew = vec![v(&[1.0, 0.0, 0.0]), v(&[0.1, 1.0, 0.0])];
    assert!(matches!(AxisScheduleSet::new(skew, vec![sched(1.0), sched(1.0)], Some(sched(1.0))), Err(Error::Contract(_))));
}
