mod common;

use common::Lcg;
use difflab_core::process::{paddim_axes_from_data, ProcessKind, ProcessSpec, TimeGrid};
use difflab_core::{Error, Vector};

fn gaussian_pair(rng: &mut Lcg) -> (f64, f64) {
    let (a, b) = (rng.uniform().max(1e-300), rng.uniform());
    let r = (-2.0 * a.ln()).sqrt();
    let phi = 2.0 * std::f64::consts::PI * b;
    (r * phi.cos(), r * phi.sin())
}

#[test]
fn principal_axis_of_an_anisotropic_cloud() {
    let mut rng = Lcg::new(31);
    let samples: Vec<Vector> = (0..10_000)
        .map(|_| {
            let (a, b) = gaussian_pair(&mut rng);
            Vector::from_vec(vec![2.0 * a, b])
        })
        .collect();
    let axes = paddim_axes_from_data(&samples, 2).unwrap();
    let first = &axes.axes[0];
    let angle = first[1].atan2(first[0]).abs();
    assert!(angle < 0.05, "{angle}");
    assert!(first[0] > 0.0);
    assert!(axes.variances[0] > axes.variances[1]);
}

#[test]
fn plain_vanilla_from_json() {
    let text = r#"{
        "dimension": 2,
        "horizon": 5.0,
        "kind": "ddim-plain-vanilla",
        "schedule": {"form": "exponential-rate", "params": {"beta0": 1.0}}
    }"#;
    let spec = ProcessSpec::from_json(text).unwrap();
    assert_eq!(spec.kind(), ProcessKind::DdimPlainVanilla);
    let f = spec.drift(0.7).unwrap();
    assert!((f[(0, 0)] + 0.5).abs() < 1e-15 && f[(0, 1)] == 0.0);
    assert!((spec.diffusion(0.7).unwrap()[(1, 1)] - 1.0).abs() < 1e-15);
    assert!((spec.terminal_alpha().unwrap() - (-5f64).exp()).abs() < 1e-15);
}

#[test]
fn tabulated_and_paddim_configs_round_trip_bit_identically() {
    let times: Vec<f64> = (0..=100).map(|k| 0.05 * k as f64).collect();
    let alphas: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
    let text = serde_json::json!({
        "dimension": 1,
        "horizon": 5.0,
        "kind": "ddim-plain-vanilla",
        "schedule": {"form": "tabulated", "table": {"times": times, "alphas": alphas}}
    })
    .to_string();
    let spec = ProcessSpec::from_json(&text).unwrap();
    assert!((spec.drift(2.5).unwrap()[(0, 0)] + 0.5).abs() < 1e-3);

    let paddim = r#"{
        "dimension": 3,
        "horizon": 4.0,
        "kind": "paddim",
        "axes": [[0.6, 0.8, 0.0], [-0.8, 0.6, 0.0]],
        "axis_schedules": [
            {"form": "exponential-rate", "params": {"beta0": 0.5, "beta1": 0.25}},
            {"form": "cosine-like", "params": {"offset": 0.01, "end_alpha": 1e-3}}
        ],
        "schedule": {"form": "exponential-rate", "params": {"beta0": 3.0}}
    }"#;
    let pa = ProcessSpec::from_json(paddim).unwrap();
    let grid = TimeGrid::uniform(4.0, 64).unwrap();
    for original in [spec, pa] {
        let back = ProcessSpec::from_json(&original.to_json()).unwrap();
        for &t in grid.times().iter().filter(|t| **t <= original.horizon()) {
            assert_eq!(original.drift(t).unwrap(), back.drift(t).unwrap());
            assert_eq!(original.noise(t).unwrap(), back.noise(t).unwrap());
        }
    }
}

#[test]
fn config_errors_are_reported() {
    let unknown = r#"{"dimension": 1, "horizon": 1.0, "kind": "ddim-plain-vanilla", "schedul": {}}"#;
    assert!(matches!(ProcessSpec::from_json(unknown), Err(Error::Json(_)) | Err(Error::Config(_))));
    let skew = r#"{
        "dimension": 2, "horizon": 1.0, "kind": "paddim",
        "axes": [[1.0, 0.0], [0.5, 1.0]],
        "axis_schedules": [{"form": "exponential-rate"}, {"form": "exponential-rate"}]
    }"#;
    assert!(matches!(ProcessSpec::from_json(skew), Err(Error::Contract(_))));
    let flat = r#"{"dimension": 1, "horizon": 1.0, "kind": "ddim-plain-vanilla",
        "schedule": {"form": "exponential-rate", "params": {"beta0": 0.0}}}"#;
    assert!(ProcessSpec::from_json(flat).is_err());
}
