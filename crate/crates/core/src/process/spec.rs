use serde::{Deserialize, Serialize};

use super::axes::AxisScheduleSet;
use super::grid::TimeGrid;
use super::matrix_fn::{MatrixFn, MatrixFnConfig, Role};
use super::schedule::{Schedule, ScheduleForm};
use crate::linalg::{asymmetry, identity, is_finite, min_symmetric_eigenvalue};
use crate::{Error, Mat, Result, Vector};

pub const DEFAULT_ALPHA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    General,
    DdimGeneral,
    DdimPlainVanilla,
    Paddim,
}

impl ProcessKind {
    /// True for every kind constrained by f = −½ g gᵀ.
    pub fn is_ddim(self) -> bool {
        !matches!(self, ProcessKind::General)
    }
}

/// Process part of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub dimension: usize,
    pub horizon: f64,
    pub kind: ProcessKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_schedules: Option<Vec<ScheduleForm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<MatrixFnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<MatrixFnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<MatrixFnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_min: Option<f64>,
}

impl ProcessConfig {
    fn bare(dimension: usize, horizon: f64, kind: ProcessKind) -> Self {
        Self {
            dimension,
            horizon,
            kind,
            schedule: None,
            axes: None,
            axis_schedules: None,
            drift: None,
            noise: None,
            diffusion: None,
            alpha_min: None,
        }
    }

    pub fn plain_vanilla(dimension: usize, horizon: f64, schedule: ScheduleForm) -> Self {
        Self { schedule: Some(schedule), ..Self::bare(dimension, horizon, ProcessKind::DdimPlainVanilla) }
    }

    pub fn general(dimension: usize, horizon: f64, drift: MatrixFnConfig, noise: MatrixFnConfig) -> Self {
        Self { drift: Some(drift), noise: Some(noise), ..Self::bare(dimension, horizon, ProcessKind::General) }
    }

    pub fn ddim_general(dimension: usize, horizon: f64, diffusion: MatrixFnConfig) -> Self {
        Self { diffusion: Some(diffusion), ..Self::bare(dimension, horizon, ProcessKind::DdimGeneral) }
    }

    pub fn paddim(
        horizon: f64,
        axes: Vec<Vec<f64>>,
        axis_schedules: Vec<ScheduleForm>,
        default_schedule: Option<ScheduleForm>,
    ) -> Self {
        let dimension = axes.first().map_or(0, Vec::len);
        Self {
            axes: Some(axes),
            axis_schedules: Some(axis_schedules),
            schedule: default_schedule,
            ..Self::bare(dimension, horizon, ProcessKind::Paddim)
        }
    }
}

/// A linear diffusion dx = f(t) x dt + g(t) dw on [0, T].
#[derive(Debug, Clone)]
pub struct ProcessSpec {
    config: ProcessConfig,
    kind: ProcessKind,
    dimension: usize,
    horizon: f64,
    drift: MatrixFn,
    noise: MatrixFn,
    alpha_min: f64,
    scalar_schedule: Option<Schedule>,
    axis_set: Option<AxisScheduleSet>,
}

const CHECK_POINTS: usize = 256;

impl ProcessSpec {
    pub fn from_config(config: ProcessConfig) -> Result<Self> {
        let d = config.dimension;
        let horizon = config.horizon;
        if d == 0 {
            return Err(Error::Config("dimension must be ≥ 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        let alpha_min = config.alpha_min.unwrap_or(DEFAULT_ALPHA_MIN);
        if !(alpha_min > 0.0 && alpha_min < 1.0) {
            return Err(Error::Config(format!("alpha_min must lie in (0, 1), got {alpha_min}")));
        }
        let schedule = config.schedule.clone().map(|f| Schedule::new(f, horizon)).transpose()?;
        let mut scalar_schedule = None;
        let mut axis_set = None;
        let (drift, noise) = match config.kind {
            ProcessKind::General => {
                let (Some(dc), Some(nc)) = (&config.drift, &config.noise) else {
                    return Err(Error::Config("kind `general` needs `drift` and `noise`".into()));
                };
                (MatrixFn::from_config(dc, d, horizon, Role::Drift)?, MatrixFn::from_config(nc, d, horizon, Role::Noise)?)
            }
            ProcessKind::DdimGeneral => {
                let Some(dc) = &config.diffusion else {
                    return Err(Error::Config("kind `ddim-general` needs `diffusion`".into()));
                };
                match dc {
                    MatrixFnConfig::DiagonalSchedule { .. } | MatrixFnConfig::RotatingDiagonal { .. } => (
                        MatrixFn::from_config(dc, d, horizon, Role::Drift)?,
                        MatrixFn::from_config(dc, d, horizon, Role::Noise)?,
                    ),
                    MatrixFnConfig::RotationDecay { .. } => {
                        return Err(Error::Config("rotation-decay cannot describe a diffusion matrix".into()))
                    }
                    _ => {
                        let diffusion = MatrixFn::from_config(dc, d, horizon, Role::Diffusion)?;
                        check_diffusion_psd(&diffusion, horizon)?;
                        (
                            MatrixFn::FromDiffusion { diffusion: Box::new(diffusion.clone()), role: Role::Drift },
                            MatrixFn::FromDiffusion { diffusion: Box::new(diffusion), role: Role::Noise },
                        )
                    }
                }
            }
            ProcessKind::DdimPlainVanilla => {
                let Some(s) = schedule else {
                    return Err(Error::Config("kind `ddim-plain-vanilla` needs `schedule`".into()));
                };
                let mk = |role| MatrixFn::AxisSchedules {
                    axes: Mat::zeros(d, 0),
                    schedules: vec![],
                    complement: Some(s.clone()),
                    role,
                };
                let out = (mk(Role::Drift), mk(Role::Noise));
                scalar_schedule = Some(s);
                out
            }
            ProcessKind::Paddim => {
                let (Some(axes), Some(forms)) = (&config.axes, &config.axis_schedules) else {
                    return Err(Error::Config("kind `paddim` needs `axes` and `axis_schedules`".into()));
                };
                if axes.len() != forms.len() {
                    return Err(Error::Config(format!(
                        "{} axes but {} axis_schedules",
                        axes.len(),
                        forms.len()
                    )));
                }
                let vectors = axes
                    .iter()
                    .map(|a| {
                        if a.len() != d {
                            Err(Error::Config(format!("axis of length {} in dimension {d}", a.len())))
                        } else {
                            Ok(Vector::from_column_slice(a))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let schedules =
                    forms.iter().map(|f| Schedule::new(f.clone(), horizon)).collect::<Result<Vec<_>>>()?;
                if vectors.len() < d && schedule.is_none() {
                    return Err(Error::Config("fewer axes than dimensions requires a default `schedule`".into()));
                }
                let set = AxisScheduleSet::new(vectors, schedules, schedule)?;
                let out = (set.matrix_fn(Role::Drift), set.matrix_fn(Role::Noise));
                axis_set = Some(set);
                out
            }
        };
        let spec = Self { kind: config.kind, dimension: d, horizon, drift, noise, alpha_min, scalar_schedule, axis_set, config };
        spec.check_invariants_at(&check_times(horizon))?;
        if let Some(a) = spec.terminal_alpha() {
            if a > alpha_min {
                log::warn!("α(T) = {a:.3e} exceeds alpha_min = {alpha_min:.1e}: ε = V⁻¹(T) x_T is only approximate");
            }
        }
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("process config serialises")
    }

    pub fn config(&self) -> &ProcessConfig {
        &self.config
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    /// The scalar schedule of a plain-vanilla process.
    pub fn scalar_schedule(&self) -> Option<&Schedule> {
        self.scalar_schedule.as_ref()
    }

    /// Axes and per-axis schedules of a paDDIM process.
    pub fn axis_set(&self) -> Option<&AxisScheduleSet> {
        self.axis_set.as_ref()
    }

    /// Largest α(T) among the schedules defining the process, if any.
    pub fn terminal_alpha(&self) -> Option<f64> {
        let t = self.horizon;
        if let Some(s) = &self.scalar_schedule {
            return Some(s.alpha(t));
        }
        self.axis_set.as_ref().map(|set| set.terminal_alpha(t))
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        let tol = 1e-9 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    pub fn drift(&self, t: f64) -> Result<Mat> {
        Ok(self.drift.eval(self.check_domain(t)?))
    }

    pub fn noise(&self, t: f64) -> Result<Mat> {
        Ok(self.noise.eval(self.check_domain(t)?))
    }

    /// D(t) = g(t) g(t)ᵀ.
    pub fn diffusion(&self, t: f64) -> Result<Mat> {
        let g = self.noise(t)?;
        Ok(&g * g.transpose())
    }

    /// Checks finiteness and the kind-specific structure at every grid time.
    pub fn validate_on(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(Error::domain(format!(
                "grid horizon {} differs from process horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        self.check_invariants_at(grid.times())
    }

    fn check_invariants_at(&self, times: &[f64]) -> Result<()> {
        let d = self.dimension;
        for &t in times {
            let f = self.drift(t)?;
            let g = self.noise(t)?;
            if f.shape() != (d, d) || g.shape() != (d, d) {
                return Err(Error::Dimension { expected: d, got: f.nrows() });
            }
            if !is_finite(&f) || !is_finite(&g) {
                return Err(Error::numerical(t, "drift or noise is not finite"));
            }
            if self.kind.is_ddim() {
                let defect = (&f + &g * g.transpose() * 0.5).norm();
                if defect > 1e-12 * (1.0 + f.norm()) {
                    return Err(Error::Contract(format!("DDIM condition f = −½ggᵀ violated by {defect:.3e} at t = {t}")));
                }
            }
            if self.kind == ProcessKind::DdimPlainVanilla {
                let scalar = f[(0, 0)];
                if (&f - identity(d) * scalar).norm() > 1e-14 * (1.0 + scalar.abs()) {
                    return Err(Error::Contract(format!("plain-vanilla drift is not a multiple of I at t = {t}")));
                }
            }
        }
        Ok(())
    }
}

fn check_times(horizon: f64) -> Vec<f64> {
    (0..=CHECK_POINTS).map(|i| horizon * i as f64 / CHECK_POINTS as f64).collect()
}

fn check_diffusion_psd(diffusion: &MatrixFn, horizon: f64) -> Result<()> {
    for t in check_times(horizon) {
        let dm = diffusion.eval(t);
        if asymmetry(&dm) > 1e-12 * (1.0 + dm.norm()) {
            return Err(Error::Config(format!("diffusion matrix not symmetric at t = {t}")));
        }
        if min_symmetric_eigenvalue(&dm) < -1e-12 * (1.0 + dm.norm()) {
            return Err(Error::Config(format!("diffusion matrix not PSD at t = {t}")));
        }
    }
    Ok(())
}

/// D(t) = g(t) g(t)ᵀ with the domain check of the process.
pub fn diffusion_matrix(spec: &ProcessSpec, t: f64) -> Result<Mat> {
    spec.diffusion(t)
}

/// Plain-vanilla DDIM: f = ½ (d log α/dt) I, g = √(−d log α/dt) I.
pub fn plain_vanilla_spec(schedule: &Schedule, dimension: usize, horizon: f64) -> Result<ProcessSpec> {
    ProcessSpec::from_config(ProcessConfig::plain_vanilla(dimension, horizon, schedule.form().clone()))
}

/// Convenience for tests and examples: a general process from constant matrices.
pub fn constant_spec(horizon: f64, drift: &Mat, noise: &Mat) -> Result<ProcessSpec> {
    let d = drift.nrows();
    let rows = |m: &Mat| super::matrix_fn::rows_of(m);
    let cfg = ProcessConfig::general(
        d,
        horizon,
        MatrixFnConfig::Constant { matrix: rows(drift) },
        MatrixFnConfig::Constant { matrix: rows(noise) },
    );
    ProcessSpec::from_config(cfg)
}
