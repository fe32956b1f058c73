#![allow(dead_code)]

use difflab_core::process::{
    plain_vanilla_spec, MatrixFnConfig, ProcessConfig, ProcessSpec, Schedule, ScheduleForm,
};
use difflab_core::{Mat, Vector};

/// f(t) = [[−½, ωt], [−ωt, −½]], g = I.
pub fn rotation_decay(horizon: f64, omega: f64) -> ProcessSpec {
    let drift = MatrixFnConfig::RotationDecay { decay: [0.5, 0.5], spin: 0.0, omega0: 0.0, omega1: omega };
    let noise = MatrixFnConfig::Constant { matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
    ProcessSpec::from_config(ProcessConfig::general(2, horizon, drift, noise)).unwrap()
}

/// Anisotropic decay in a spinning frame: f(t) at different times do not commute.
pub fn twisted(horizon: f64) -> ProcessSpec {
    let drift = MatrixFnConfig::RotationDecay { decay: [0.4, 1.6], spin: 1.3, omega0: 0.2, omega1: 0.3 };
    let noise = MatrixFnConfig::Constant { matrix: vec![vec![1.0, 0.0], vec![0.3, 0.8]] };
    ProcessSpec::from_config(ProcessConfig::general(2, horizon, drift, noise)).unwrap()
}

pub fn plain_vanilla(horizon: f64, d: usize) -> ProcessSpec {
    plain_vanilla_spec(&Schedule::exponential(1.0, horizon).unwrap(), d, horizon).unwrap()
}

/// DDIM with diagonal, time-varying D.
pub fn ddim_diagonal(horizon: f64) -> ProcessSpec {
    let diffusion = MatrixFnConfig::DiagonalSchedule {
        schedules: vec![ScheduleForm::linear_rate(0.5, 1.0), ScheduleForm::exponential(2.0)],
    };
    ProcessSpec::from_config(ProcessConfig::ddim_general(2, horizon, diffusion)).unwrap()
}

/// DDIM whose diffusion eigenbasis rotates: D(t) = R(ωt) diag(λ) R(ωt)ᵀ.
pub fn ddim_rotating(horizon: f64, eigenvalues: [f64; 2], omega: f64) -> ProcessSpec {
    let diffusion = MatrixFnConfig::RotatingDiagonal { eigenvalues: eigenvalues.to_vec(), omega };
    ProcessSpec::from_config(ProcessConfig::ddim_general(2, horizon, diffusion)).unwrap()
}

/// Classical RK4 on dU/dt = f U from U(0) = I.
pub fn rk4_evolution(spec: &ProcessSpec, t: f64, steps: usize) -> Mat {
    let d = spec.dimension();
    let h = t / steps as f64;
    let mut u = Mat::identity(d, d);
    for k in 0..steps {
        let s = k as f64 * h;
        let f0 = spec.drift(s).unwrap();
        let fm = spec.drift(s + 0.5 * h).unwrap();
        let f1 = spec.drift((s + h).min(spec.horizon())).unwrap();
        let k1 = &f0 * &u;
        let k2 = &fm * (&u + &k1 * (0.5 * h));
        let k3 = &fm * (&u + &k2 * (0.5 * h));
        let k4 = &f1 * (&u + &k3 * h);
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    u
}

/// Small deterministic generator so oracle tests do not depend on the library's RNG plumbing.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn vector(&mut self, d: usize, scale: f64) -> Vector {
        Vector::from_iterator(d, (0..d).map(|_| self.range(-scale, scale)))
    }
}
