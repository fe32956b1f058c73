mod common;

use std::sync::Arc;

use common::{ddim_diagonal, ddim_rotating, plain_vanilla, rotation_decay, Lcg};
use difflab_core::covariance::{sigma_by_ode, sigma_ddim_closed_form};
use difflab_core::equilibrium::{
    circulating_current, circulating_divergence, probability_current, rigid_basis_evolution,
    rotating_basis_perturbation, solve_q, stationary_sigma, SpectralBasis,
};
use difflab_core::evolution::{build_evolution, default_substeps};
use difflab_core::linalg::gram_defect;
use difflab_core::process::{constant_spec, TimeGrid};
use difflab_core::tables::ProcessTables;
use difflab_core::{Error, Mat, Vector};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn q_vanishes_for_ddim_processes() {
    for spec in [ddim_diagonal(3.0), ddim_rotating(3.0, [1.0, 2.5], 0.6), plain_vanilla(3.0, 3)] {
        for k in 0..=30 {
            let t = 0.1 * k as f64;
            let s = solve_q(&spec.drift(t).unwrap(), &spec.diffusion(t).unwrap()).unwrap();
            assert!(s.q.norm() <= 1e-10 && s.residual <= 1e-10);
        }
    }
    let f = Mat::from_diagonal(&v(&[-1.0, -3.0]));
    let d = Mat::from_diagonal(&v(&[0.5, 2.0]));
    assert_eq!(solve_q(&f, &d).unwrap().q.norm(), 0.0);
}

#[test]
fn q_for_a_non_normal_drift() {
    let f = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
    let s = solve_q(&f, &Mat::identity(2, 2)).unwrap();
    assert!(s.residual <= 1e-10);
    assert_eq!(&s.q + s.q.transpose(), Mat::zeros(2, 2));
    assert!(s.q.norm() > 0.1);
    let rhs = (&f - f.transpose()) * 0.5;
    assert!((&f * &s.q + &s.q * f.transpose() - rhs).norm() <= 1e-10);
}

#[test]
fn singular_sylvester_operator_names_the_pair() {
    let f = Mat::from_diagonal(&v(&[1.0, -1.0, -2.0]));
    match solve_q(&f, &Mat::identity(3, 3)) {
        Err(Error::SingularSylvester { first, second, sum }) => {
            assert!(sum < 1e-12);
            assert!(first.starts_with("1") && second.starts_with("-1") || first.starts_with("-1") && second.starts_with("1"), "{first} {second}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn stationary_covariance() {
    let d = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
    assert!((stationary_sigma(&(&d * -0.5), &d).unwrap() - Mat::identity(2, 2)).norm() < 1e-12);
    let s = stationary_sigma(&(Mat::identity(3, 3) * -0.5), &Mat::identity(3, 3)).unwrap();
    assert!((s - Mat::identity(3, 3)).norm() < 1e-12);
    assert!(stationary_sigma(&Mat::from_diagonal(&v(&[0.1, -1.0])), &Mat::identity(2, 2)).is_err());

    let f = Mat::from_row_slice(2, 2, &[-0.5, 0.4, -0.4, -1.0]);
    let g = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 0.6]);
    let spec = constant_spec(50.0, &f, &g).unwrap();
    let grid = TimeGrid::uniform(50.0, 5000).unwrap();
    let ode = sigma_by_ode(&spec, &grid).unwrap();
    let stat = stationary_sigma(&f, &(&g * g.transpose())).unwrap();
    assert!((ode.sigma(5000) - stat).norm() < 1e-6);
}

#[test]
fn current_decomposition_and_closed_form() {
    let tables = ProcessTables::build(&rotation_decay(1.0, 0.3), &TimeGrid::uniform(1.0, 512).unwrap()).unwrap();
    let x0 = v(&[1.0, -0.5]);
    let mut rng = Lcg::new(2);
    for _ in 0..25 {
        let x = rng.vector(2, 2.0);
        let j = probability_current(&tables, &x0, &x, 0.5).unwrap();
        assert!(!j.underflow);
        assert!((&j.total - &j.closed_form).amax() <= 1e-10);
        assert!((&j.drift + &j.diffusive - &j.total).amax() <= 1e-15);
    }
    let far = probability_current(&tables, &x0, &v(&[80.0, 80.0]), 0.5).unwrap();
    assert!(far.underflow && far.total.norm() == 0.0);
}

#[test]
fn plain_vanilla_current_decays_toward_the_horizon() {
    let tables = ProcessTables::build(&plain_vanilla(10.0, 2), &TimeGrid::uniform(10.0, 100).unwrap()).unwrap();
    let x0 = v(&[2.0, -1.0]);
    let x = v(&[0.5, 0.5]);
    let norms: Vec<f64> =
        (2..=10).map(|k| probability_current(&tables, &x0, &x, k as f64).unwrap().total.norm()).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(norms.last().unwrap() < &1e-3);
    // At the mean the bracket reduces to f K x₀, which vanishes with U(T).
    for t in [1.0, 5.0, 10.0] {
        let mean = tables.at(t).unwrap().u * &x0;
        let j = probability_current(&tables, &x0, &mean, t).unwrap();
        let expected = tables.spec().drift(t).unwrap() * &mean * j.density;
        assert!((j.total - expected).amax() <= 1e-15);
    }
}

#[test]
fn circulating_current_is_divergence_free() {
    let f = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
    let d = Mat::identity(2, 2);
    let q = solve_q(&f, &d).unwrap().q;
    let sigma = stationary_sigma(&f, &d).unwrap();
    assert_eq!(circulating_current(&q, &sigma, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
    assert_eq!(circulating_current(&Mat::zeros(2, 2), &sigma, &v(&[0.3, 1.0])).unwrap().norm(), 0.0);
    for a in 0..5 {
        for b in 0..5 {
            let x = v(&[-2.0 + a as f64, -2.0 + b as f64]);
            assert!(circulating_divergence(&q, &sigma, &x, 1e-4).unwrap().abs() <= 1e-6);
        }
    }
}

#[test]
fn rigid_basis() {
    let basis = SpectralBasis::new(vec![1.0, 2.0], 0.0).unwrap();
    let u = rigid_basis_evolution(&basis, &[0.0, 2.0]).unwrap();
    assert_eq!(u[0], vec![1.0, 1.0]);
    assert!((u[1][0] - (-1f64).exp()).abs() < 1e-15);
    assert!(rigid_basis_evolution(&SpectralBasis::new(vec![1.0, 2.0], 0.1).unwrap(), &[0.0]).is_err());

    for spec in [ddim_diagonal(2.0), plain_vanilla(2.0, 2)] {
        let grid = TimeGrid::uniform(2.0, 200).unwrap();
        let table = build_evolution(&spec, &grid, default_substeps(&grid)).unwrap();
        let c = sigma_ddim_closed_form(&table).unwrap();
        for i in 0..grid.len() {
            let fs = spec.drift(grid.time(i)).unwrap() * c.sigma(i);
            assert!((&fs - fs.transpose()).norm() <= 1e-8);
        }
    }
}

#[test]
fn spectral_basis_is_orthonormal_with_antisymmetric_connection() {
    let basis = SpectralBasis::new(vec![1.0, 2.0, 0.5], 0.37).unwrap();
    for k in 0..10 {
        let t = 0.3 * k as f64;
        assert!(gram_defect(&basis.vectors(t)) <= 1e-10);
        let e = basis.connection(t);
        assert!((&e + e.transpose()).norm() <= 1e-10);
    }
}

#[test]
fn perturbation_limits_and_symmetry() {
    let times: Vec<f64> = (0..=20).map(|k| 0.05 * k as f64).collect();
    let rigid = rotating_basis_perturbation(&SpectralBasis::new(vec![1.0, 2.0], 0.0).unwrap(), &times).unwrap();
    assert!(rigid.u1.iter().all(|m| m.norm() == 0.0));
    assert!(rigid.antisymmetric.iter().all(|m| m.norm() == 0.0));

    let flat = rotating_basis_perturbation(&SpectralBasis::new(vec![1.5, 1.5], 0.2).unwrap(), &times).unwrap();
    assert!(flat.antisymmetric.iter().all(|m| m.norm() == 0.0));

    let p = rotating_basis_perturbation(&SpectralBasis::new(vec![1.0, 2.0], 0.2).unwrap(), &times).unwrap();
    assert!(p.within_validity);
    for u1 in &p.u1 {
        assert_eq!(u1, &u1.transpose());
    }
    assert_eq!(p.u1[0].norm(), 0.0);
    assert!(p.u1[20].norm() > 0.0);
    let wide = rotating_basis_perturbation(&SpectralBasis::new(vec![1.0, 2.0], 1.0).unwrap(), &times).unwrap();
    assert!(!wide.within_validity);
}

#[test]
fn tables_can_be_shared_across_threads() {
    let tables = Arc::new(ProcessTables::build(&plain_vanilla(1.0, 1), &TimeGrid::uniform(1.0, 8).unwrap()).unwrap());
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let t = tables.clone();
            std::thread::spawn(move || probability_current(&t, &v(&[1.0]), &v(&[0.0]), 0.5).unwrap().density)
        })
        .collect();
    let out: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(out[0], out[1]);
}
