//! Equilibration diagnostics: the antisymmetric matrix Q, the stationary
//! covariance, probability currents, and the spectral (rotating-basis)
//! description of DDIM evolution.

use crate::evolution::EvolutionTable;
use crate::linalg::{cholesky, eigenvalues, identity, inverse, min_symmetric_eigenvalue, solve_sylvester_self, symmetrize};
use crate::process::plane_rotation;
use crate::tables::ProcessTables;
use crate::{Error, Mat, Result, Vector};

/// Q with its residual ‖fQ + Qfᵀ − ½(fD − Dfᵀ)‖_F.
#[derive(Debug, Clone, PartialEq)]
pub struct QSolution {
    pub q: Mat,
    pub residual: f64,
}

/// Solves f Q + Q fᵀ = ½ (f D − D fᵀ), then projects Q onto antisymmetric
/// matrices and re-evaluates the residual.
pub fn solve_q(f: &Mat, d: &Mat) -> Result<QSolution> {
    let rhs = (f * d - d * f.transpose()) * 0.5;
    let raw = solve_sylvester_self(f, &rhs)?;
    let q = (&raw - raw.transpose()) * 0.5;
    let residual = (f * &q + &q * f.transpose() - &rhs).norm();
    Ok(QSolution { q, residual })
}

/// Stationary covariance from f Σ + Σ fᵀ = −D; f must be Hurwitz.
pub fn stationary_sigma(f: &Mat, d: &Mat) -> Result<Mat> {
    if let Some(bad) = eigenvalues(f).into_iter().find(|z| z.re >= 0.0) {
        return Err(Error::domain(format!(
            "drift is not Hurwitz: eigenvalue {:.6}{:+.6}i has non-negative real part",
            bad.re, bad.im
        )));
    }
    let sigma = symmetrize(&solve_sylvester_self(f, &-d)?);
    let low = min_symmetric_eigenvalue(&sigma);
    if low < -1e-10 * (1.0 + sigma.norm()) {
        return Err(Error::numerical(f64::INFINITY, format!("stationary covariance not PSD ({low:.3e})")));
    }
    Ok(sigma)
}

/// Probability current of the exact Gaussian p(x, t) of a process started at x₀.
#[derive(Debug, Clone, PartialEq)]
pub struct Current {
    pub density: f64,
    /// J = J_drift + J_diffusive.
    pub total: Vector,
    /// p f x.
    pub drift: Vector,
    /// −½ p D ∇log p.
    pub diffusive: Vector,
    /// p [(f + ½ D Σ⁻¹) x − ½ D Σ⁻¹ K x₀], evaluated with an explicit Σ⁻¹.
    pub closed_form: Vector,
    /// Set when p underflows; all currents are then zero.
    pub underflow: bool,
}

pub fn probability_current(tables: &ProcessTables, x0: &Vector, x: &Vector, t: f64) -> Result<Current> {
    let spec = tables.spec();
    let d = spec.dimension();
    if x0.len() != d || x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len() });
    }
    let slice = tables.at(t)?;
    let chol = cholesky(&slice.sigma, t)?;
    let mean = &slice.u * x0;
    let r = x - &mean;
    let sigma_inv_r = chol.solve(&r);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_p = -0.5 * (r.dot(&sigma_inv_r) + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln());
    let density = log_p.exp();
    if !(density > 1e-300) {
        let zero = Vector::zeros(d);
        return Ok(Current {
            density,
            total: zero.clone(),
            drift: zero.clone(),
            diffusive: zero.clone(),
            closed_form: zero,
            underflow: true,
        });
    }
    let f = spec.drift(t)?;
    let dm = spec.diffusion(t)?;
    let drift = &f * x * density;
    // ∇log p = −Σ⁻¹(x − m)
    let diffusive = &dm * &sigma_inv_r * (0.5 * density);
    let total = &drift + &diffusive;
    let sigma_inv = inverse(&slice.sigma, t)?;
    let half_d_sinv = &dm * &sigma_inv * 0.5;
    let closed_form = ((&f + &half_d_sinv) * x - &half_d_sinv * &mean) * density;
    Ok(Current { density, total, drift, diffusive, closed_form, underflow: false })
}

fn gaussian_density(sigma: &Mat, x: &Vector) -> Result<(f64, Vector)> {
    let chol = cholesky(sigma, f64::INFINITY)?;
    let w = chol.solve(x);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let d = x.len() as f64;
    let log_p = -0.5 * (x.dot(&w) + log_det + d * (2.0 * std::f64::consts::PI).ln());
    Ok((log_p.exp(), w))
}

/// J_c = −Q Σ⁻¹ x ρ(x) with ρ = N(0, Σ).
pub fn circulating_current(q: &Mat, sigma: &Mat, x: &Vector) -> Result<Vector> {
    let (rho, sigma_inv_x) = gaussian_density(sigma, x)?;
    Ok(-(q * sigma_inv_x) * rho)
}

/// ∇·J_c at x by central differences with stencil h.
pub fn circulating_divergence(q: &Mat, sigma: &Mat, x: &Vector, h: f64) -> Result<f64> {
    let mut div = 0.0;
    for j in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        div += (circulating_current(q, sigma, &plus)?[j] - circulating_current(q, sigma, &minus)?[j]) / (2.0 * h);
    }
    Ok(div)
}

/// Orthonormal family d_m(t) = R(ωt) e_m rotating in the (0, 1) plane with
/// constant eigenvalues λ_m, so D(t) = Σ_m λ_m d_m d_mᵀ. The connection
/// e_mn = d_nᵀ ḋ_m is ω for (m, n) = (0, 1) and −ω for (1, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    pub omega: f64,
}

impl SpectralBasis {
    pub fn new(eigenvalues: Vec<f64>, omega: f64) -> Result<Self> {
        if eigenvalues.is_empty() || (omega != 0.0 && eigenvalues.len() < 2) {
            return Err(Error::Config("a rotating basis needs at least two eigenvalues".into()));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) || !omega.is_finite() {
            return Err(Error::Config("spectral basis parameters must be finite".into()));
        }
        Ok(Self { eigenvalues, omega })
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Columns are d_m(t).
    pub fn vectors(&self, t: f64) -> Mat {
        plane_rotation(self.dimension(), self.omega * t)
    }

    pub fn connection(&self, _t: f64) -> Mat {
        let mut e = Mat::zeros(self.dimension(), self.dimension());
        if self.dimension() >= 2 {
            e[(0, 1)] = self.omega;
            e[(1, 0)] = -self.omega;
        }
        e
    }

    pub fn diffusion(&self, t: f64) -> Mat {
        let r = self.vectors(t);
        &r * Mat::from_diagonal(&Vector::from_column_slice(&self.eigenvalues)) * r.transpose()
    }

    /// u⁰_m(t) = exp(−½ ∫₀ᵗ λ_m dt').
    pub fn zeroth_order(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (-0.5 * l * t).exp()).collect()
    }
}

/// Diagonal coefficients u_m(tᵢ) of U in a basis that does not rotate.
pub fn rigid_basis_evolution(basis: &SpectralBasis, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if basis.omega != 0.0 {
        return Err(Error::Contract("rigid-basis evolution needs a vanishing connection".into()));
    }
    Ok(times.iter().map(|&t| basis.zeroth_order(t)).collect())
}

/// First-order rotating-basis analysis at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub times: Vec<f64>,
    pub u0: Vec<Vec<f64>>,
    /// u¹_mn(t) = ∫₀ᵗ (u⁰_n − u⁰_m) e_mn dt'.
    pub u1: Vec<Mat>,
    /// Predicted (DΣ − ΣD)_mn = (λ_n − λ_m)(u⁰_m + u⁰_n) u¹_mn in the d_m basis.
    pub antisymmetric: Vec<Mat>,
    /// Whether ‖e‖ T ≤ 0.25, the range where the expansion is asserted.
    pub within_validity: bool,
}

const PERTURBATION_PANELS: usize = 64;

/// u¹ is integrated with composite Simpson's rule between consecutive
/// requested times (which must start at 0 and increase).
pub fn rotating_basis_perturbation(basis: &SpectralBasis, times: &[f64]) -> Result<Perturbation> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("perturbation times must start at 0 and increase"));
    }
    let d = basis.dimension();
    let integrand = |t: f64| -> Mat {
        let u0 = basis.zeroth_order(t);
        let e = basis.connection(t);
        Mat::from_fn(d, d, |m, n| (u0[n] - u0[m]) * e[(m, n)])
    };
    let mut u1 = vec![Mat::zeros(d, d)];
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / (2 * PERTURBATION_PANELS) as f64;
        let mut acc = integrand(w[0]) + integrand(w[1]);
        for k in 1..2 * PERTURBATION_PANELS {
            acc += integrand(w[0] + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let next = u1.last().unwrap() + acc * (h / 3.0);
        u1.push(next);
    }
    let u0: Vec<Vec<f64>> = times.iter().map(|&t| basis.zeroth_order(t)).collect();
    let lambda = &basis.eigenvalues;
    let antisymmetric = u0
        .iter()
        .zip(&u1)
        .map(|(z, one)| Mat::from_fn(d, d, |m, n| (lambda[n] - lambda[m]) * (z[m] + z[n]) * one[(m, n)]))
        .collect();
    let horizon = *times.last().unwrap();
    // spectral norm of ω·J
    let e_norm = basis.omega.abs();
    Ok(Perturbation { times: times.to_vec(), u0, u1, antisymmetric, within_validity: e_norm * horizon <= 0.25 })
}

/// Exact DΣ − ΣD expressed in the rotating basis, with Σ = I − UUᵀ taken
/// from a time-ordered evolution table of the matching DDIM process.
pub fn rotating_frame_commutator(table: &EvolutionTable, basis: &SpectralBasis) -> Result<Vec<Mat>> {
    if !table.spec().kind().is_ddim() {
        return Err(Error::Contract("rotating-frame comparison needs a DDIM process".into()));
    }
    let d = basis.dimension();
    let eye = identity(d);
    let mut out = Vec::with_capacity(table.grid().len());
    for (i, u) in table.u_all().iter().enumerate() {
        let t = table.grid().time(i);
        let sigma = &eye - u * u.transpose();
        let dm = table.spec().diffusion(t)?;
        let r = basis.vectors(t);
        out.push(r.transpose() * (&dm * &sigma - &sigma * &dm) * r);
    }
    Ok(out)
}
