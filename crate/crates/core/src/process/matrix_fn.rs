//! Time-indexed d×d matrix functions used for the drift f(t), the noise g(t)
//! and the diffusion matrix D(t).

use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, ScheduleForm};
use crate::linalg::{identity, sqrt_psd};
use crate::{Error, Mat, Result};

/// Config-level description of a matrix function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixFnConfig {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    /// d = 2 only: `f(t) = −R(φt) diag(a₁, a₂) R(φt)ᵀ + (ω₀ + ω₁t) J`,
    /// with J = [[0, 1], [−1, 0]] and R the planar rotation.
    RotationDecay {
        decay: [f64; 2],
        #[serde(default)]
        spin: f64,
        #[serde(default)]
        omega0: f64,
        #[serde(default)]
        omega1: f64,
    },
    /// One schedule per coordinate axis.
    DiagonalSchedule {
        schedules: Vec<ScheduleForm>,
    },
    /// Eigenvalues λ_m carried by a basis rotating at rate ω in the (0, 1) plane.
    RotatingDiagonal {
        eigenvalues: Vec<f64>,
        omega: f64,
    },
    /// Linear interpolation between matrices given at increasing times.
    Tabulated {
        times: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
    },
}

/// Which physical quantity a schedule- or spectrum-based function represents.
///
/// For a schedule with log-rate r(t) = d log α/dt: drift ½r, noise √(−r),
/// diffusion −r. For a spectrum λ: drift −½λ, noise √λ, diffusion λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Drift,
    Noise,
    Diffusion,
}

impl Role {
    fn from_log_rate(self, r: f64) -> f64 {
        match self {
            Role::Drift => 0.5 * r,
            Role::Noise => (-r).max(0.0).sqrt(),
            Role::Diffusion => -r,
        }
    }

    fn from_eigenvalue(self, lambda: f64) -> f64 {
        match self {
            Role::Drift => -0.5 * lambda,
            Role::Noise => lambda.max(0.0).sqrt(),
            Role::Diffusion => lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFn {
    Constant(Mat),
    RotationDecay { decay: [f64; 2], spin: f64, omega0: f64, omega1: f64 },
    /// `Σ_m c(α_m) d_m d_mᵀ + c(α_default)(I − Σ_m d_m d_mᵀ)`, where `axes`
    /// holds the d_m as columns (possibly zero of them).
    AxisSchedules { axes: Mat, schedules: Vec<Schedule>, complement: Option<Schedule>, role: Role },
    RotatingDiagonal { eigenvalues: Vec<f64>, omega: f64, role: Role },
    Tabulated { times: Vec<f64>, values: Vec<Mat> },
    /// −½D(t) or the symmetric root of D(t) for a diffusion given directly.
    FromDiffusion { diffusion: Box<MatrixFn>, role: Role },
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Mat> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what} must be a {d}×{d} matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    Ok(Mat::from_row_slice(d, d, &flat))
}

pub(crate) fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Planar rotation by `angle` in the (0, 1) coordinate plane of R^d.
pub fn plane_rotation(d: usize, angle: f64) -> Mat {
    let mut r = identity(d);
    if d >= 2 {
        let (s, c) = angle.sin_cos();
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;
    }
    r
}

impl MatrixFn {
    /// Builds the runtime function for a config block placed in a given slot.
    pub fn from_config(cfg: &MatrixFnConfig, d: usize, horizon: f64, role: Role) -> Result<Self> {
        Ok(match cfg {
            MatrixFnConfig::Constant { matrix } => {
                let m = matrix_from_rows(matrix, d, "constant matrix")?;
                MatrixFn::Constant(m)
            }
            MatrixFnConfig::RotationDecay { decay, spin, omega0, omega1 } => {
                if d != 2 {
                    return Err(Error::Config("rotation-decay is defined for dimension 2 only".into()));
                }
                if role != Role::Drift {
                    return Err(Error::Config("rotation-decay describes a drift matrix".into()));
                }
                MatrixFn::RotationDecay { decay: *decay, spin: *spin, omega0: *omega0, omega1: *omega1 }
            }
            MatrixFnConfig::DiagonalSchedule { schedules } => {
                if schedules.len() != d {
                    return Err(Error::Config(format!("diagonal-schedule needs {d} schedules")));
                }
                let schedules =
                    schedules.iter().map(|f| Schedule::new(f.clone(), horizon)).collect::<Result<Vec<_>>>()?;
                MatrixFn::AxisSchedules { axes: identity(d), schedules, complement: None, role }
            }
            MatrixFnConfig::RotatingDiagonal { eigenvalues, omega } => {
                if eigenvalues.len() != d || d < 2 {
                    return Err(Error::Config(format!("rotating-diagonal needs {d} ≥ 2 eigenvalues")));
                }
                if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::Config("rotating-diagonal eigenvalues must be ≥ 0".into()));
                }
                MatrixFn::RotatingDiagonal { eigenvalues: eigenvalues.clone(), omega: *omega, role }
            }
            MatrixFnConfig::Tabulated { times, matrices } => {
                if times.len() != matrices.len() || times.len() < 2 {
                    return Err(Error::Config("tabulated matrix function needs ≥ 2 (time, matrix) pairs".into()));
                }
                if times[0] > 0.0 || *times.last().unwrap() < horizon {
                    return Err(Error::Config("tabulated matrix function must cover [0, T]".into()));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config("tabulated times must be strictly increasing".into()));
                }
                let values = matrices
                    .iter()
                    .map(|m| matrix_from_rows(m, d, "tabulated matrix"))
                    .collect::<Result<Vec<_>>>()?;
                MatrixFn::Tabulated { times: times.clone(), values }
            }
        })
    }

    pub fn eval(&self, t: f64) -> Mat {
        match self {
            MatrixFn::Constant(m) => m.clone(),
            MatrixFn::RotationDecay { decay, spin, omega0, omega1 } => {
                let r = plane_rotation(2, spin * t);
                let diag = Mat::from_row_slice(2, 2, &[-decay[0], 0.0, 0.0, -decay[1]]);
                let w = omega0 + omega1 * t;
                let j = Mat::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
                &r * diag * r.transpose() + j
            }
            MatrixFn::AxisSchedules { axes, schedules, complement, role } => {
                let d = axes.nrows();
                let mut out = Mat::zeros(d, d);
                let mut projector = Mat::zeros(d, d);
                for (m, s) in schedules.iter().enumerate() {
                    let col = axes.column(m);
                    let outer = &col * col.transpose();
                    out += &outer * role.from_log_rate(s.log_rate(t));
                    projector += outer;
                }
                if let Some(s) = complement {
                    out += (identity(d) - projector) * role.from_log_rate(s.log_rate(t));
                }
                out
            }
            MatrixFn::RotatingDiagonal { eigenvalues, omega, role } => {
                let d = eigenvalues.len();
                let r = plane_rotation(d, omega * t);
                let diag = Mat::from_diagonal(&crate::Vector::from_iterator(
                    d,
                    eigenvalues.iter().map(|&l| role.from_eigenvalue(l)),
                ));
                &r * diag * r.transpose()
            }
            MatrixFn::Tabulated { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[n - 1] {
                    return values[n - 1].clone();
                }
                let i = times.partition_point(|&v| v <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                &values[i] * (1.0 - w) + &values[i + 1] * w
            }
            MatrixFn::FromDiffusion { diffusion, role } => {
                let dm = diffusion.eval(t);
                match role {
                    Role::Drift => dm * -0.5,
                    Role::Diffusion => dm,
                    // PSD-ness is checked at spec construction
                    Role::Noise => sqrt_psd(&dm, t).unwrap_or_else(|_| Mat::from_element(dm.nrows(), dm.ncols(), f64::NAN)),
                }
            }
        }
    }

    /// Converts back to a config block (inverse of `from_config` for the
    /// families that have one).
    pub fn to_config(&self) -> Option<MatrixFnConfig> {
        Some(match self {
            MatrixFn::Constant(m) => MatrixFnConfig::Constant { matrix: rows_of(m) },
            MatrixFn::RotationDecay { decay, spin, omega0, omega1 } => {
                MatrixFnConfig::RotationDecay { decay: *decay, spin: *spin, omega0: *omega0, omega1: *omega1 }
            }
            MatrixFn::RotatingDiagonal { eigenvalues, omega, .. } => {
                MatrixFnConfig::RotatingDiagonal { eigenvalues: eigenvalues.clone(), omega: *omega }
            }
            MatrixFn::Tabulated { times, values } => {
                MatrixFnConfig::Tabulated { times: times.clone(), matrices: values.iter().map(rows_of).collect() }
            }
            MatrixFn::AxisSchedules { axes, schedules, complement: None, .. } if *axes == identity(axes.nrows()) => {
                MatrixFnConfig::DiagonalSchedule { schedules: schedules.iter().map(|s| s.form().clone()).collect() }
            }
            MatrixFn::FromDiffusion { diffusion, .. } => return diffusion.to_config(),
            MatrixFn::AxisSchedules { .. } => return None,
        })
    }
}
