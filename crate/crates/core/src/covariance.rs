//! Covariance Σ(t) of the forward process started from a point, and the
//! factor V(t) with Σ = V Vᵀ and V(0) = 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::evolution::{default_substeps, matrix_headers, row_major_strings, EvolutionTable};
use crate::linalg::{asymmetry, cholesky, identity, min_symmetric_eigenvalue, solve, sqrt_psd, symmetrize};
use crate::process::{ProcessKind, ProcessSpec, TimeGrid};
use crate::{Error, Mat, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMethod {
    Quadrature,
    Ode,
    DdimClosedForm,
}

impl CovarianceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMethod::Quadrature => "quadrature",
            CovarianceMethod::Ode => "ode",
            CovarianceMethod::DdimClosedForm => "ddim-closed-form",
        }
    }
}

/// Σ(tᵢ) on a grid, optionally with V(tᵢ).
#[derive(Debug, Clone)]
pub struct CovarianceTrack {
    grid: TimeGrid,
    sigma: Vec<Mat>,
    v: Option<Vec<Mat>>,
    inner: Option<Vec<Mat>>,
    method: CovarianceMethod,
}

impl CovarianceTrack {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn method(&self) -> CovarianceMethod {
        self.method
    }

    pub fn sigma(&self, i: usize) -> &Mat {
        &self.sigma[i]
    }

    pub fn sigma_all(&self) -> &[Mat] {
        &self.sigma
    }

    pub fn v(&self, i: usize) -> Option<&Mat> {
        self.v.as_ref().map(|v| &v[i])
    }

    pub fn v_all(&self) -> Option<&[Mat]> {
        self.v.as_deref()
    }

    /// ∫₀^{tᵢ} U⁻¹ D U⁻ᵀ dt' (quadrature tracks only).
    pub fn inner_integral(&self) -> Option<&[Mat]> {
        self.inner.as_deref()
    }

    /// max_{i ≥ 1} ‖V Vᵀ − Σ‖_F, if V is present.
    pub fn factor_defect(&self) -> Option<f64> {
        let v = self.v.as_ref()?;
        Some(v.iter().zip(&self.sigma).skip(1).map(|(v, s)| (v * v.transpose() - s).norm()).fold(0.0, f64::max))
    }

    /// CSV with header `t, Sigma_00, …` followed by `V_00, …` when V is present.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.sigma[0].nrows();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(matrix_headers("Sigma", d));
        if self.v.is_some() {
            header.extend(matrix_headers("V", d));
        }
        w.write_record(&header)?;
        for (i, s) in self.sigma.iter().enumerate() {
            let mut row = vec![self.grid.time(i).to_string()];
            row.extend(row_major_strings(s));
            if let Some(v) = &self.v {
                row.extend(row_major_strings(&v[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.sigma.iter().enumerate() {
            let t = self.grid.time(i);
            if asymmetry(s) > 1e-12 * (1.0 + s.norm()) {
                return Err(Error::numerical(t, "covariance lost symmetry"));
            }
            let low = min_symmetric_eigenvalue(s);
            if low < -1e-10 {
                return Err(Error::numerical(t, format!("covariance not PSD (eigenvalue {low:.3e})")));
            }
        }
        Ok(())
    }
}

/// Σ(t) = U(t) [∫₀ᵗ U⁻¹ D U⁻ᵀ dt'] U(t)ᵀ.
///
/// The inner integral uses Simpson's rule on each grid interval, with U⁻¹ at
/// the interval midpoint obtained by propagating from the left grid time.
pub fn sigma_by_quadrature(table: &EvolutionTable) -> Result<CovarianceTrack> {
    let spec = table.spec();
    let grid = table.grid();
    let integrand = |w: &Mat, t: f64| -> Result<Mat> { Ok(w * spec.diffusion(t)? * w.transpose()) };
    let d = spec.dimension();
    let mut inner = vec![Mat::zeros(d, d)];
    let mut left = integrand(table.u_inv(0), 0.0)?;
    for i in 0..grid.steps() {
        let (a, b) = (grid.time(i), grid.time(i + 1));
        let mid = 0.5 * (a + b);
        let (_, w_mid) = table.pair_at(mid)?;
        let centre = integrand(&w_mid, mid)?;
        let right = integrand(table.u_inv(i + 1), b)?;
        let next = inner.last().unwrap() + (&left + centre * 4.0 + &right) * ((b - a) / 6.0);
        inner.push(next);
        left = right;
    }
    let sigma = inner
        .iter()
        .zip(table.u_all())
        .map(|(m, u)| symmetrize(&(u * m * u.transpose())))
        .collect();
    let track = CovarianceTrack {
        grid: grid.clone(),
        sigma,
        v: None,
        inner: Some(inner),
        method: CovarianceMethod::Quadrature,
    };
    track.check()?;
    Ok(track)
}

fn sigma_rhs(spec: &ProcessSpec, t: f64, s: &Mat) -> Result<Mat> {
    let fs = spec.drift(t)? * s;
    Ok(spec.diffusion(t)? + &fs + fs.transpose())
}

pub(crate) fn rk4_sigma(spec: &ProcessSpec, a: f64, b: f64, n: usize, start: &Mat) -> Result<Mat> {
    let h = (b - a) / n as f64;
    let mut s = start.clone();
    for k in 0..n {
        let t = a + k as f64 * h;
        let k1 = sigma_rhs(spec, t, &s)?;
        let k2 = sigma_rhs(spec, t + 0.5 * h, &(&s + &k1 * (0.5 * h)))?;
        let k3 = sigma_rhs(spec, t + 0.5 * h, &(&s + &k2 * (0.5 * h)))?;
        let k4 = sigma_rhs(spec, t + h, &(&s + &k3 * h))?;
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(s)
}

/// Classical RK4 on dΣ/dt = D + fΣ + Σfᵀ from Σ(0) = 0, with the default
/// number of substeps per grid interval.
pub fn sigma_by_ode(spec: &ProcessSpec, grid: &TimeGrid) -> Result<CovarianceTrack> {
    sigma_by_ode_with(spec, grid, default_substeps(grid))
}

pub fn sigma_by_ode_with(spec: &ProcessSpec, grid: &TimeGrid, substeps: usize) -> Result<CovarianceTrack> {
    spec.validate_on(grid)?;
    let d = spec.dimension();
    let mut sigma = vec![Mat::zeros(d, d)];
    for w in grid.times().windows(2) {
        let next = rk4_sigma(spec, w[0], w[1], substeps.max(1), sigma.last().unwrap())?;
        if asymmetry(&next) > 1e-12 * (1.0 + next.norm()) || !next.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical(w[1], "ODE step lost symmetry"));
        }
        let low = min_symmetric_eigenvalue(&next);
        if low < -1e-10 {
            return Err(Error::numerical(w[1], format!("ODE step left the PSD cone (eigenvalue {low:.3e})")));
        }
        sigma.push(next);
    }
    Ok(CovarianceTrack { grid: grid.clone(), sigma, v: None, inner: None, method: CovarianceMethod::Ode })
}

/// Σ(t) = I − U(t) U(t)ᵀ, valid only under f = −½D.
pub fn sigma_ddim_closed_form(table: &EvolutionTable) -> Result<CovarianceTrack> {
    if !table.spec().kind().is_ddim() {
        return Err(Error::Contract("the closed form I − UUᵀ needs a DDIM process (f = −½D)".into()));
    }
    let d = table.spec().dimension();
    let eye = identity(d);
    let sigma = table.u_all().iter().map(|u| symmetrize(&(&eye - u * u.transpose()))).collect();
    let track = CovarianceTrack {
        grid: table.grid().clone(),
        sigma,
        v: None,
        inner: None,
        method: CovarianceMethod::DdimClosedForm,
    };
    track.check()?;
    Ok(track)
}

/// Fills V on the track.
///
/// V(t₀) = 0. At `seed_index` (≥ 1) V is the principal square root of Σ;
/// between t₀ and the seed the same rule is used. From the seed onwards V
/// follows dV/dt = ½ D V⁻ᵀ + f V, integrated with RK4 in s = √t, where the
/// equation reads dV/ds = s D V⁻ᵀ + 2 s f V and stays regular as t → 0.
/// Plain-vanilla processes use V = √(1 − α) I directly.
pub fn v_factor(table: &EvolutionTable, sigma: &CovarianceTrack, seed_index: usize) -> Result<CovarianceTrack> {
    let spec = table.spec();
    let grid = sigma.grid();
    let n = grid.len();
    if seed_index == 0 || seed_index >= n {
        return Err(Error::domain(format!("seed index must lie in 1..{n}, got {seed_index}")));
    }
    let d = spec.dimension();
    let mut v = Vec::with_capacity(n);
    v.push(Mat::zeros(d, d));
    if let (ProcessKind::DdimPlainVanilla, Some(s)) = (spec.kind(), spec.scalar_schedule()) {
        for &t in &grid.times()[1..] {
            v.push(identity(d) * (-s.log_alpha(t).exp_m1()).sqrt());
        }
    } else {
        for i in 1..=seed_index {
            cholesky(sigma.sigma(i), grid.time(i))?;
            v.push(sqrt_psd(sigma.sigma(i), grid.time(i))?);
        }
        let ds_max = grid.horizon().sqrt() / (2 * crate::evolution::DEFAULT_RESOLUTION) as f64;
        for i in seed_index..grid.steps() {
            let (a, b) = (grid.time(i).sqrt(), grid.time(i + 1).sqrt());
            let steps = ((b - a) / ds_max).ceil().max(1.0) as usize;
            let next = rk4_v(spec, a, b, steps, v.last().unwrap())?;
            v.push(next);
        }
    }
    Ok(CovarianceTrack { v: Some(v), ..sigma.clone() })
}

fn v_rhs(spec: &ProcessSpec, s: f64, v: &Mat) -> Result<Mat> {
    let t = s * s;
    let v_inv_t = solve(&v.transpose(), &identity(v.nrows()), t)
        .map_err(|_| Error::numerical(t, "V became singular while integrating the V equation"))?;
    Ok((spec.diffusion(t)? * v_inv_t + spec.drift(t)? * v * 2.0) * s)
}

pub(crate) fn rk4_v(spec: &ProcessSpec, a: f64, b: f64, n: usize, start: &Mat) -> Result<Mat> {
    let h = (b - a) / n as f64;
    let mut v = start.clone();
    for k in 0..n {
        let s = a + k as f64 * h;
        let k1 = v_rhs(spec, s, &v)?;
        let k2 = v_rhs(spec, s + 0.5 * h, &(&v + &k1 * (0.5 * h)))?;
        let k3 = v_rhs(spec, s + 0.5 * h, &(&v + &k2 * (0.5 * h)))?;
        let k4 = v_rhs(spec, s + h, &(&v + &k3 * h))?;
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(v)
}

/// ‖U⁻¹(tᵢ) V(tᵢ) − ½ ∫₀^{tᵢ} U⁻¹ D V⁻ᵀ dt'‖_F for every grid index.
///
/// The integrand G behaves like t^{-1/2} near 0, so each interval is
/// integrated exactly against the weight t^{-1/2} after interpolating
/// H = √t · G linearly; H(0) is extrapolated from the first two grid times.
pub fn v_identity_residual(table: &EvolutionTable, track: &CovarianceTrack) -> Result<Vec<f64>> {
    let Some(v) = track.v_all() else {
        return Err(Error::Contract("V has not been computed for this track".into()));
    };
    let spec = table.spec();
    let grid = track.grid();
    let d = spec.dimension();
    if grid.len() < 3 {
        return Err(Error::domain("the V identity check needs at least two grid intervals"));
    }
    let mut h_vals = vec![Mat::zeros(d, d)];
    for i in 1..grid.len() {
        let t = grid.time(i);
        let v_inv_t = solve(&v[i].transpose(), &identity(d), t)?;
        h_vals.push(table.u_inv(i) * spec.diffusion(t)? * v_inv_t * t.sqrt());
    }
    let (t1, t2) = (grid.time(1), grid.time(2));
    h_vals[0] = (&h_vals[1] * t2 - &h_vals[2] * t1) / (t2 - t1);

    let mut out = vec![0.0];
    let mut integral = Mat::zeros(d, d);
    for i in 0..grid.steps() {
        let (a, b) = (grid.time(i), grid.time(i + 1));
        let slope = (&h_vals[i + 1] - &h_vals[i]) / (b - a);
        let intercept = &h_vals[i] - &slope * a;
        let w0 = 2.0 * (b.sqrt() - a.sqrt());
        let w1 = 2.0 / 3.0 * (b.powf(1.5) - a.powf(1.5));
        integral += intercept * w0 + slope * w1;
        out.push((table.u_inv(i + 1) * &v[i + 1] - &integral * 0.5).norm());
    }
    Ok(out)
}

/// Outcome of a Fokker–Planck residual evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FokkerPlanckResidual {
    pub max_residual: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

const MOMENT_STEPS: usize = 4096;

fn gaussian_moments(spec: &ProcessSpec, x0: &Vector, sigma0: &Mat, t: f64) -> Result<(Vector, Mat)> {
    if t == 0.0 {
        return Ok((x0.clone(), sigma0.clone()));
    }
    let h = t / MOMENT_STEPS as f64;
    let mut m = x0.clone();
    for k in 0..MOMENT_STEPS {
        let s = k as f64 * h;
        let f0 = spec.drift(s)?;
        let fm = spec.drift(s + 0.5 * h)?;
        let f1 = spec.drift(s + h)?;
        let k1 = &f0 * &m;
        let k2 = &fm * (&m + &k1 * (0.5 * h));
        let k3 = &fm * (&m + &k2 * (0.5 * h));
        let k4 = &f1 * (&m + &k3 * h);
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    let s = rk4_sigma(spec, 0.0, t, MOMENT_STEPS, sigma0)?;
    Ok((m, s))
}

struct Gaussian {
    mean: Vector,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl Gaussian {
    fn new(mean: Vector, sigma: &Mat, t: f64) -> Result<Self> {
        let chol = cholesky(sigma, t)?;
        let d = mean.len() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { mean, chol, log_norm })
    }

    fn density(&self, x: &Vector) -> f64 {
        let r = x - &self.mean;
        (self.log_norm - 0.5 * r.dot(&self.chol.solve(&r))).exp()
    }
}

/// max over probes of |∂ₜp + ∇·(p f x − ½ D ∇p)| for the exact Gaussian
/// p(x, t) of the process started at N(x₀, Σ₀) (Σ₀ = 0 when `sigma0` is
/// `None`). All derivatives are central differences with stencil `h`; the
/// Gaussian parameters at t and t ± h come from RK4 on the moment equations.
pub fn fokker_planck_residual(
    spec: &ProcessSpec,
    x0: &Vector,
    sigma0: Option<&Mat>,
    t: f64,
    probes: &[Vector],
    h: f64,
) -> Result<FokkerPlanckResidual> {
    let d = spec.dimension();
    if x0.len() != d {
        return Err(Error::Dimension { expected: d, got: x0.len() });
    }
    if !(h > 0.0) || t - h < 0.0 || t + h > spec.horizon() {
        return Err(Error::domain(format!("stencil [t − h, t + h] = [{}, {}] must lie in [0, T]", t - h, t + h)));
    }
    let zero = Mat::zeros(d, d);
    let sigma0 = sigma0.unwrap_or(&zero);
    let at = |s: f64| -> Result<Gaussian> {
        let (m, cov) = gaussian_moments(spec, x0, sigma0, s)?;
        Gaussian::new(m, &cov, s)
    };
    let before = at(t - h)?;
    let now = at(t)?;
    let after = at(t + h)?;
    let f = spec.drift(t)?;
    let dm = spec.diffusion(t)?;

    let unit = |j: usize| {
        let mut e = Vector::zeros(d);
        e[j] = h;
        e
    };
    let grad = |y: &Vector| -> Vector {
        Vector::from_iterator(d, (0..d).map(|k| (now.density(&(y + unit(k))) - now.density(&(y - unit(k)))) / (2.0 * h)))
    };
    let flux = |y: &Vector, j: usize| -> f64 {
        let drift = (&f * y)[j];
        now.density(y) * drift - 0.5 * (dm.row(j) * grad(y))[(0, 0)]
    };

    let mut report = FokkerPlanckResidual { max_residual: 0.0, evaluated: 0, skipped: 0 };
    for x in probes {
        if now.density(x) < 1e-300 {
            log::warn!("density underflows at probe {:?}; skipped", x.as_slice());
            report.skipped += 1;
            continue;
        }
        let dt = (after.density(x) - before.density(x)) / (2.0 * h);
        let div: f64 = (0..d).map(|j| (flux(&(x + unit(j)), j) - flux(&(x - unit(j)), j)) / (2.0 * h)).sum();
        report.max_residual = report.max_residual.max((dt + div).abs());
        report.evaluated += 1;
    }
    Ok(report)
}
