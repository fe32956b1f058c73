//! Evolution and covariance data bundled for scores and samplers.

use crate::covariance::{rk4_sigma, rk4_v, sigma_by_quadrature, sigma_ddim_closed_form, v_factor, CovarianceTrack};
use crate::evolution::{build_evolution, default_substeps, EvolutionTable, DEFAULT_RESOLUTION};
use crate::linalg::{identity, sqrt_psd, symmetrize};
use crate::process::{ProcessKind, ProcessSpec, TimeGrid};
use crate::{Error, Mat, Result};

/// U, U⁻¹, Σ and V at a single time.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: f64,
    pub u: Mat,
    pub u_inv: Mat,
    pub sigma: Mat,
    pub v: Mat,
}

#[derive(Debug, Clone)]
pub struct ProcessTables {
    evolution: EvolutionTable,
    covariance: CovarianceTrack,
    off_grid: bool,
}

impl ProcessTables {
    /// Default construction: time-ordered (or closed-form) U with the default
    /// substeps, Σ from I − UUᵀ for DDIM kinds and by quadrature otherwise,
    /// and V seeded at the first grid time.
    pub fn build(spec: &ProcessSpec, grid: &TimeGrid) -> Result<Self> {
        let evolution = build_evolution(spec, grid, default_substeps(grid))?;
        let sigma = if spec.kind().is_ddim() {
            sigma_ddim_closed_form(&evolution)?
        } else {
            sigma_by_quadrature(&evolution)?
        };
        let covariance = v_factor(&evolution, &sigma, 1)?;
        Self::from_parts(evolution, covariance)
    }

    pub fn from_parts(evolution: EvolutionTable, covariance: CovarianceTrack) -> Result<Self> {
        if covariance.v_all().is_none() {
            return Err(Error::Contract("covariance track has no V factor".into()));
        }
        if covariance.grid() != evolution.grid() {
            return Err(Error::Contract("evolution and covariance grids differ".into()));
        }
        Ok(Self { evolution, covariance, off_grid: false })
    }

    /// Allows [`ProcessTables::at`] to answer for times between grid points.
    pub fn with_off_grid(mut self, allow: bool) -> Self {
        self.off_grid = allow;
        self
    }

    pub fn spec(&self) -> &ProcessSpec {
        self.evolution.spec()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.evolution.grid()
    }

    pub fn evolution(&self) -> &EvolutionTable {
        &self.evolution
    }

    pub fn covariance(&self) -> &CovarianceTrack {
        &self.covariance
    }

    pub fn dimension(&self) -> usize {
        self.spec().dimension()
    }

    pub fn horizon(&self) -> f64 {
        self.spec().horizon()
    }

    /// Grid values, or closed forms for plain-vanilla processes. Other
    /// off-grid times are a domain error unless enabled with
    /// [`ProcessTables::with_off_grid`].
    pub fn at(&self, t: f64) -> Result<TimeSlice> {
        if let Some(i) = self.grid().index_of(t) {
            return Ok(self.slice(i));
        }
        if self.off_grid || self.spec().kind() == ProcessKind::DdimPlainVanilla {
            return self.at_any(t);
        }
        Err(Error::domain(format!("time {t} is not on the table grid")))
    }

    pub fn slice(&self, i: usize) -> TimeSlice {
        TimeSlice {
            t: self.grid().time(i),
            u: self.evolution.u(i).clone(),
            u_inv: self.evolution.u_inv(i).clone(),
            sigma: self.covariance.sigma(i).clone(),
            v: self.covariance.v(i).expect("checked at construction").clone(),
        }
    }

    /// Values at any t in [0, T]. Between grid points U, U⁻¹ are propagated
    /// from the preceding grid time, Σ is I − UUᵀ for DDIM kinds and RK4 of
    /// the covariance equation otherwise, and V follows its own equation.
    pub fn at_any(&self, t: f64) -> Result<TimeSlice> {
        let spec = self.spec();
        let d = spec.dimension();
        if !(0.0..=spec.horizon()).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", spec.horizon())));
        }
        if let (ProcessKind::DdimPlainVanilla, Some(s)) = (spec.kind(), spec.scalar_schedule()) {
            let log_alpha = s.log_alpha(t);
            let root = (0.5 * log_alpha).exp();
            let var = if t == 0.0 { 0.0 } else { -log_alpha.exp_m1() };
            let eye = identity(d);
            return Ok(TimeSlice { t, u: &eye * root, u_inv: &eye / root, sigma: &eye * var, v: eye * var.sqrt() });
        }
        if let Some(i) = self.grid().index_of(t) {
            return Ok(self.slice(i));
        }
        let (u, u_inv) = self.evolution.pair_at(t)?;
        let i = self.grid().interval_of(t);
        let a = self.grid().time(i);
        let width = spec.horizon() / DEFAULT_RESOLUTION as f64;
        let n = ((t - a) / width).ceil().max(1.0) as usize;
        let sigma = if spec.kind().is_ddim() {
            symmetrize(&(identity(d) - &u * u.transpose()))
        } else {
            symmetrize(&rk4_sigma(spec, a, t, n, self.covariance.sigma(i))?)
        };
        let v = if i == 0 {
            sqrt_psd(&sigma, t)?
        } else {
            let (sa, sb) = (a.sqrt(), t.sqrt());
            let steps = ((sb - sa) / (spec.horizon().sqrt() / (2 * DEFAULT_RESOLUTION) as f64)).ceil().max(1.0);
            rk4_v(spec, sa, sb, steps as usize, self.covariance.v(i).expect("checked at construction"))?
        };
        Ok(TimeSlice { t, u, u_inv, sigma, v })
    }

    /// K(t, t') through [`ProcessTables::at`].
    pub fn kernel(&self, t: f64, t_prime: f64) -> Result<Mat> {
        if t == t_prime {
            return Ok(identity(self.dimension()));
        }
        Ok(self.at(t)?.u * self.at(t_prime)?.u_inv)
    }
}
