mod common;

use std::sync::Arc;

use common::{plain_vanilla, rotation_decay, Lcg};
use difflab_core::process::TimeGrid;
use difflab_core::score::{
    epsilon_from_score, score_from_epsilon, score_matching_cost, ScoreModel, ScoreVariant,
};
use difflab_core::tables::ProcessTables;
use difflab_core::{Error, Result, Vector};

fn pv_tables() -> Arc<ProcessTables> {
    let spec = plain_vanilla(5.0, 1);
    Arc::new(ProcessTables::build(&spec, &TimeGrid::uniform(5.0, 500).unwrap()).unwrap())
}

fn rd_tables() -> Arc<ProcessTables> {
    let spec = rotation_decay(1.0, 0.3);
    Arc::new(ProcessTables::build(&spec, &TimeGrid::uniform(1.0, 1024).unwrap()).unwrap())
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// log Σᵢ wᵢ N(x; U x₀⁽ⁱ⁾, Σ), written out directly with an explicit inverse.
fn oracle_log_density(tables: &ProcessTables, points: &[Vector], weights: &[f64], x: &Vector, t: f64) -> f64 {
    let slice = tables.at(t).unwrap();
    let d = x.len() as f64;
    let inv = slice.sigma.clone().try_inverse().unwrap();
    let det = slice.sigma.determinant();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (p, w) in points.iter().zip(weights) {
        let r = x - &slice.u * p;
        let q = (r.transpose() * &inv * &r)[(0, 0)];
        acc += w / total * (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d) * det).sqrt();
    }
    acc.ln()
}

fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        }),
    )
}

#[test]
fn single_point_examples() {
    let tables = pv_tables();
    let m = ScoreModel::single_point(tables.clone(), v(&[0.0])).unwrap();
    assert_eq!(m.variant(), ScoreVariant::SinglePoint);
    assert!((m.score(&v(&[1.0]), 2f64.ln()).unwrap()[0] + 2.0).abs() < 1e-12);
    let x0 = v(&[1.5]);
    let m = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let mean = tables.at(1.0).unwrap().u * &x0;
    assert_eq!(m.score(&mean, 1.0).unwrap()[0], 0.0);
    assert!(matches!(m.score(&x0, 0.0), Err(Error::SingularCovariance(_))));
}

#[test]
fn exact_score_matches_finite_differences() {
    let tables = rd_tables();
    let x0 = v(&[0.8, -0.4]);
    let m = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let mut rng = Lcg::new(3);
    for _ in 0..100 {
        let t = tables.grid().time(1 + (rng.uniform() * 1023.0) as usize);
        let x = rng.vector(2, 2.0);
        let fd = fd_gradient(|y| oracle_log_density(&tables, &[x0.clone()], &[1.0], y, t), &x, 1e-5);
        let s = m.score(&x, t).unwrap();
        assert!((s - fd).amax() < 1e-6 * (1.0 + 1.0 / t));
    }
}

#[test]
fn score_is_linear_in_x() {
    let tables = rd_tables();
    let m = ScoreModel::single_point(tables.clone(), v(&[0.2, 0.1])).unwrap();
    let t = tables.grid().time(700);
    let inv = tables.at(t).unwrap().sigma.try_inverse().unwrap();
    let mut rng = Lcg::new(5);
    for _ in 0..20 {
        let (x, y) = (rng.vector(2, 3.0), rng.vector(2, 3.0));
        let lhs = m.score(&x, t).unwrap() - m.score(&y, t).unwrap();
        let rhs = -(&inv * (&x - &y));
        assert!((lhs - rhs).amax() < 1e-10);
    }
}

#[test]
fn mixture_matches_finite_differences() {
    let tables = rd_tables();
    let points = vec![v(&[1.0, 0.0]), v(&[-0.5, 0.8]), v(&[0.1, -1.2])];
    let weights = vec![0.5, 0.3, 0.2];
    let m = ScoreModel::mixture(tables.clone(), points.clone(), weights.clone()).unwrap();
    let mut rng = Lcg::new(9);
    for _ in 0..100 {
        let t = tables.grid().time(100 + (rng.uniform() * 924.0) as usize);
        let x = rng.vector(2, 2.0);
        let fd = fd_gradient(|y| oracle_log_density(&tables, &points, &weights, y, t), &x, 1e-5);
        assert!((m.score(&x, t).unwrap() - fd).amax() < 1e-6);
        let ld = m.log_density(&x, t).unwrap();
        assert!((ld - oracle_log_density(&tables, &points, &weights, &x, t)).abs() < 1e-10);
    }
}

#[test]
fn one_component_mixture_is_the_single_point_score() {
    let tables = rd_tables();
    let x0 = v(&[0.3, -0.9]);
    let single = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let mix = ScoreModel::mixture(tables.clone(), vec![x0], vec![2.5]).unwrap();
    let mut rng = Lcg::new(13);
    for _ in 0..100 {
        let t = tables.grid().time(1 + (rng.uniform() * 1023.0) as usize);
        let x = rng.vector(2, 3.0);
        assert!((single.score(&x, t).unwrap() - mix.score(&x, t).unwrap()).amax() <= 1e-12);
    }
}

#[test]
fn merging_components_converge_to_single_point() {
    let tables = rd_tables();
    let c = v(&[0.4, 0.2]);
    let off = v(&[1e-8, -0.5e-8]);
    let mix = ScoreModel::mixture(tables.clone(), vec![&c + &off, &c - &off], vec![1.0, 3.0]).unwrap();
    let merged = &c + &off * 0.25 - &off * 0.75;
    let single = ScoreModel::single_point(tables.clone(), merged).unwrap();
    let mut rng = Lcg::new(17);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = tables.grid().time(10 + (rng.uniform() * 1000.0) as usize);
        let x = rng.vector(2, 3.0);
        worst = worst.max((mix.score(&x, t).unwrap() - single.score(&x, t).unwrap()).amax());
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn symmetric_pair_and_underflow() {
    let tables = pv_tables();
    let m = ScoreModel::mixture(tables.clone(), vec![v(&[1.0]), v(&[-1.0])], vec![1.0, 1.0]).unwrap();
    assert_eq!(m.score(&v(&[0.0]), 0.7).unwrap()[0], 0.0);
    let far = m.score(&v(&[-1e5]), 0.01).unwrap();
    let near = ScoreModel::single_point(tables, v(&[-1.0])).unwrap().score(&v(&[-1e5]), 0.01).unwrap();
    assert!(far[0].is_finite());
    assert_eq!(far, near);
}

#[test]
fn epsilon_round_trip_and_examples() {
    let tables = rd_tables();
    let x0 = v(&[0.5, 0.5]);
    let m = ScoreModel::single_point(tables.clone(), x0.clone()).unwrap();
    let mut rng = Lcg::new(21);
    for _ in 0..50 {
        let t = tables.grid().time(1 + (rng.uniform() * 1023.0) as usize);
        let slice = tables.at(t).unwrap();
        let eta = rng.vector(2, 2.0);
        let x = &slice.u * &x0 + &slice.v * &eta;
        let s = m.score(&x, t).unwrap();
        let eps = epsilon_from_score(&s, &tables, t).unwrap();
        assert!((&eps - &eta).amax() < 1e-9);
        let back = score_from_epsilon(&eps, &tables, t).unwrap();
        assert!((back - &s).amax() <= 1e-10 * (1.0 + s.amax()));
    }
    assert_eq!(epsilon_from_score(&Vector::zeros(2), &tables, 0.5).unwrap(), Vector::zeros(2));
    assert!(epsilon_from_score(&v(&[1.0, 0.0]), &tables, 0.0).is_err());

    let pv = pv_tables();
    let eps = epsilon_from_score(&v(&[-2.0]), &pv, 2f64.ln()).unwrap();
    assert!((eps[0] - 0.5f64.sqrt() * 2.0).abs() < 1e-12);
}

#[test]
fn cost_of_the_exact_score_vanishes() {
    let tables = rd_tables();
    let m = ScoreModel::single_point(tables.clone(), v(&[1.0, -1.0])).unwrap();
    let times: Vec<f64> = (1..=8).map(|k| tables.grid().time(k * 128)).collect();
    let report = score_matching_cost(&m, &m, &times, 200, 4).unwrap();
    assert_eq!(report.per_time.len(), 8);
    assert!(report.per_time.iter().all(|c| *c <= 1e-20));
}

#[test]
fn cost_of_the_zero_candidate_is_inverse_variance() {
    let tables = pv_tables();
    let m = ScoreModel::single_point(tables, v(&[0.0])).unwrap();
    let zero = |x: &Vector, _t: f64| -> Result<Vector> { Ok(Vector::zeros(x.len())) };
    let r = score_matching_cost(&m, &zero, &[2f64.ln()], 100_000, 8).unwrap();
    assert!((r.total - 2.0).abs() <= 3.0 * r.standard_errors[0], "{} ± {}", r.total, r.standard_errors[0]);
    let again = score_matching_cost(&m, &zero, &[2f64.ln()], 100_000, 8).unwrap();
    assert_eq!(r, again);
}

#[test]
fn mixture_ansatz_cost_shrinks_as_points_merge() {
    let tables = pv_tables();
    let t = [0.5];
    let mut last = f64::INFINITY;
    for sep in [2.0, 1.0, 0.5, 0.25] {
        let m = ScoreModel::mixture(tables.clone(), vec![v(&[sep]), v(&[-sep])], vec![1.0, 1.0]).unwrap();
        let one = ScoreModel::single_point(tables.clone(), v(&[sep])).unwrap();
        let c = score_matching_cost(&m, &one, &t, 20_000, 1).unwrap().total;
        assert!(c > 0.0 && c < last, "{c} after {last}");
        last = c;
    }
}

#[test]
fn mixture_rejects_bad_weights() {
    let tables = pv_tables();
    assert!(ScoreModel::mixture(tables.clone(), vec![v(&[0.0])], vec![0.0]).is_err());
    assert!(ScoreModel::mixture(tables.clone(), vec![], vec![]).is_err());
    assert!(ScoreModel::mixture(tables, vec![v(&[0.0, 1.0])], vec![1.0]).is_err());
}
