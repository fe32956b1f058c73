//! Evolution operator U(t) of dU/dt = f(t) U, U(0) = I, and the transition
//! kernel K(t, t') = U(t) U⁻¹(t').
//!
//! Over a substep [s, s + Δ] the propagator is exp(f(s + Δ/2) Δ). U is the
//! product of these factors with later times on the left; U⁻¹ is the product
//! of exp(−f Δ) factors with later times on the right, so it is never
//! obtained by inverting U.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{identity, is_finite};
use crate::process::{ProcessKind, ProcessSpec, TimeGrid};
use crate::{Error, Mat, Result};

/// Finest substep used by default, as a fraction of the horizon.
pub const DEFAULT_RESOLUTION: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionMethod {
    TimeOrderedProduct,
    ClosedFormScalar,
    Rk4Ode,
}

impl EvolutionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EvolutionMethod::TimeOrderedProduct => "time-ordered-product",
            EvolutionMethod::ClosedFormScalar => "closed-form-scalar",
            EvolutionMethod::Rk4Ode => "rk4-ode",
        }
    }
}

/// exp(A) by scaling and squaring with a Padé approximant (nalgebra's
/// implementation). The zero matrix maps to I exactly.
pub fn matrix_exponential(a: &Mat) -> Result<Mat> {
    exp_at(a, f64::NAN)
}

fn exp_at(a: &Mat, time: f64) -> Result<Mat> {
    if !is_finite(a) {
        return Err(Error::numerical(time, "matrix exponential of a non-finite matrix"));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(identity(a.nrows()));
    }
    let e = a.clone().exp();
    if !is_finite(&e) {
        return Err(Error::numerical(time, "matrix exponential overflowed"));
    }
    Ok(e)
}

/// Substeps per grid interval so that no substep exceeds T / 2048.
pub fn default_substeps(grid: &TimeGrid) -> usize {
    let target = grid.horizon() / DEFAULT_RESOLUTION as f64;
    let widest = grid.times().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    ((widest / target) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// U(tᵢ) and U⁻¹(tᵢ) on a time grid.
#[derive(Debug, Clone)]
pub struct EvolutionTable {
    spec: ProcessSpec,
    grid: TimeGrid,
    u: Vec<Mat>,
    u_inv: Vec<Mat>,
    method: EvolutionMethod,
    substeps: usize,
}

/// Builds the table with the closed form for plain-vanilla processes and the
/// time-ordered product otherwise.
pub fn build_evolution(spec: &ProcessSpec, grid: &TimeGrid, substeps: usize) -> Result<EvolutionTable> {
    let method = if spec.kind() == ProcessKind::DdimPlainVanilla {
        EvolutionMethod::ClosedFormScalar
    } else {
        EvolutionMethod::TimeOrderedProduct
    };
    build_evolution_with(spec, grid, substeps, method)
}

pub fn build_evolution_with(
    spec: &ProcessSpec,
    grid: &TimeGrid,
    substeps: usize,
    method: EvolutionMethod,
) -> Result<EvolutionTable> {
    if substeps == 0 {
        return Err(Error::domain("substeps must be ≥ 1"));
    }
    spec.validate_on(grid)?;
    let d = spec.dimension();
    let n = grid.len();
    let mut u = Vec::with_capacity(n);
    let mut u_inv = Vec::with_capacity(n);
    u.push(identity(d));
    u_inv.push(identity(d));
    match method {
        EvolutionMethod::ClosedFormScalar => {
            let Some(schedule) = spec.scalar_schedule() else {
                return Err(Error::Contract("closed-form evolution needs a plain-vanilla process".into()));
            };
            for &t in &grid.times()[1..] {
                let root = schedule.alpha(t).sqrt();
                if !(root > 0.0) {
                    return Err(Error::numerical(t, "α(t) underflowed to zero"));
                }
                u.push(identity(d) * root);
                u_inv.push(identity(d) * root.recip());
            }
        }
        EvolutionMethod::TimeOrderedProduct => {
            for w in grid.times().windows(2) {
                let (step, step_inv) = product_over(spec, w[0], w[1], substeps)?;
                let next = step * u.last().unwrap();
                let next_inv = u_inv.last().unwrap() * step_inv;
                if !is_finite(&next) || !is_finite(&next_inv) {
                    return Err(Error::numerical(w[1], "evolution operator is not finite"));
                }
                u.push(next);
                u_inv.push(next_inv);
            }
        }
        EvolutionMethod::Rk4Ode => {
            for w in grid.times().windows(2) {
                let (step, step_inv) = rk4_over(spec, w[0], w[1], substeps)?;
                u.push(step * u.last().unwrap());
                u_inv.push(u_inv.last().unwrap() * step_inv);
            }
        }
    }
    Ok(EvolutionTable { spec: spec.clone(), grid: grid.clone(), u, u_inv, method, substeps })
}

/// Time-ordered products over [a, b]: (Π exp(f Δ), Π exp(−f Δ)) with the
/// first factor left-ordered and the second right-ordered in time.
fn product_over(spec: &ProcessSpec, a: f64, b: f64, substeps: usize) -> Result<(Mat, Mat)> {
    let d = spec.dimension();
    let h = (b - a) / substeps as f64;
    let mut fwd = identity(d);
    let mut inv = identity(d);
    for k in 0..substeps {
        let tm = a + (k as f64 + 0.5) * h;
        let f = spec.drift(tm)?;
        fwd = exp_at(&(&f * h), tm)? * fwd;
        inv *= exp_at(&(&f * -h), tm)?;
    }
    Ok((fwd, inv))
}

/// Classical RK4 for dU/dt = fU and dW/dt = −Wf over [a, b], both from I.
fn rk4_over(spec: &ProcessSpec, a: f64, b: f64, substeps: usize) -> Result<(Mat, Mat)> {
    let d = spec.dimension();
    let h = (b - a) / substeps as f64;
    let mut u = identity(d);
    let mut w = identity(d);
    for k in 0..substeps {
        let t = a + k as f64 * h;
        let f0 = spec.drift(t)?;
        let fm = spec.drift(t + 0.5 * h)?;
        let f1 = spec.drift(t + h)?;
        let k1 = &f0 * &u;
        let k2 = &fm * (&u + &k1 * (0.5 * h));
        let k3 = &fm * (&u + &k2 * (0.5 * h));
        let k4 = &f1 * (&u + &k3 * h);
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let l1 = -(&w * &f0);
        let l2 = -((&w + &l1 * (0.5 * h)) * &fm);
        let l3 = -((&w + &l2 * (0.5 * h)) * &fm);
        let l4 = -((&w + &l3 * h) * &f1);
        w += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    Ok((u, w))
}

impl EvolutionTable {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn method(&self) -> EvolutionMethod {
        self.method
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn u(&self, i: usize) -> &Mat {
        &self.u[i]
    }

    pub fn u_inv(&self, i: usize) -> &Mat {
        &self.u_inv[i]
    }

    pub fn u_all(&self) -> &[Mat] {
        &self.u
    }

    pub fn u_inv_all(&self) -> &[Mat] {
        &self.u_inv
    }

    /// Largest substep width used when building the table.
    pub fn max_substep(&self) -> f64 {
        let widest = self.grid.times().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        widest / self.substeps as f64
    }

    fn index(&self, t: f64) -> Result<usize> {
        self.grid.index_of(t).ok_or_else(|| Error::domain(format!("time {t} is not on the evolution grid")))
    }

    /// (U(t), U⁻¹(t)) at any t in [0, T]: grid values are returned as stored,
    /// other times are reached by propagating from the preceding grid time
    /// with substeps no wider than the table's.
    pub fn pair_at(&self, t: f64) -> Result<(Mat, Mat)> {
        if let Some(i) = self.grid.index_of(t) {
            return Ok((self.u[i].clone(), self.u_inv[i].clone()));
        }
        let horizon = self.grid.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {horizon}]")));
        }
        if let (EvolutionMethod::ClosedFormScalar, Some(s)) = (self.method, self.spec.scalar_schedule()) {
            let root = s.alpha(t).sqrt();
            let d = self.spec.dimension();
            return Ok((identity(d) * root, identity(d) * root.recip()));
        }
        let i = self.grid.interval_of(t);
        let a = self.grid.time(i);
        let n = ((t - a) / self.max_substep()).ceil().max(1.0) as usize;
        let (step, step_inv) = match self.method {
            EvolutionMethod::Rk4Ode => rk4_over(&self.spec, a, t, n)?,
            _ => product_over(&self.spec, a, t, n)?,
        };
        Ok((step * &self.u[i], &self.u_inv[i] * step_inv))
    }

    /// K(t, t') = U(t) U⁻¹(t'). Off-grid times are an error unless
    /// `interpolate` is set.
    pub fn kernel(&self, t: f64, t_prime: f64, interpolate: bool) -> Result<Mat> {
        if t == t_prime {
            return Ok(identity(self.spec.dimension()));
        }
        if interpolate {
            let (u, _) = self.pair_at(t)?;
            let (_, w) = self.pair_at(t_prime)?;
            return Ok(u * w);
        }
        Ok(&self.u[self.index(t)?] * &self.u_inv[self.index(t_prime)?])
    }

    /// max_i ‖U(tᵢ) U⁻¹(tᵢ) − I‖_F.
    pub fn inverse_defect(&self) -> f64 {
        let eye = identity(self.spec.dimension());
        self.u.iter().zip(&self.u_inv).map(|(u, w)| (u * w - &eye).norm()).fold(0.0, f64::max)
    }

    /// CSV with header `t, U_00, U_01, …` (row-major entries).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.spec.dimension();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(matrix_headers("U", d));
        w.write_record(&header)?;
        for (i, u) in self.u.iter().enumerate() {
            let mut row = vec![self.grid.time(i).to_string()];
            row.extend(row_major_strings(u));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn matrix_headers(name: &str, d: usize) -> Vec<String> {
    (0..d).flat_map(|i| (0..d).map(move |j| format!("{name}_{i}{j}"))).collect()
}

pub(crate) fn row_major_strings(m: &Mat) -> Vec<String> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)].to_string())).collect()
}
