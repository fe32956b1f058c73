use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::batch::{Direction, Recording, SamplerMethod, TrajectoryBatch};
use super::{path_rng, DEFAULT_T_MIN_FRACTION};
use crate::linalg::{matvec, to_row_major};
use crate::process::{ProcessSpec, TimeGrid};
use crate::score::{Evaluation, ScoreModel, ScoreScratch, ScoreSnapshot};
use crate::{Error, Result, Vector};

/// Euler–Maruyama: x_{i+1} = x_i + f(t_i) x_i Δt + g(t_i) √Δt ξ, one path per
/// entry of `x0_draws`.
pub fn forward_em(
    spec: &ProcessSpec,
    x0_draws: &[Vector],
    grid: &TimeGrid,
    seed: u64,
    recording: &Recording,
) -> Result<TrajectoryBatch> {
    let d = spec.dimension();
    if grid.len() < 2 {
        return Err(Error::domain("forward_em needs a grid with at least 2 points"));
    }
    if let Some(bad) = x0_draws.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    spec.validate_on(grid)?;
    let steps = grid.steps();
    let mut f = Vec::with_capacity(steps);
    let mut g = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = grid.time(i);
        f.push(to_row_major(&spec.drift(t)?));
        g.push(to_row_major(&spec.noise(t)?));
    }
    let order: Vec<usize> = (0..grid.len()).collect();
    let (slots, kept) = recording.slots(&order, grid.len());
    let per_path = kept.len() * d;
    let mut data = vec![0.0; x0_draws.len() * per_path];

    data.par_chunks_mut(per_path.max(1)).enumerate().for_each(|(p, out)| {
        if per_path == 0 {
            return;
        }
        let mut rng = path_rng(seed, p as u64);
        let mut x = x0_draws[p].as_slice().to_vec();
        let mut fx = vec![0.0; d];
        let mut xi = vec![0.0; d];
        let mut gxi = vec![0.0; d];
        if let Some(k) = slots[0] {
            out[k * d..(k + 1) * d].copy_from_slice(&x);
        }
        for i in 0..steps {
            let dt = grid.time(i + 1) - grid.time(i);
            let root = dt.sqrt();
            for v in xi.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            matvec(&f[i], &x, &mut fx);
            matvec(&g[i], &xi, &mut gxi);
            for j in 0..d {
                x[j] += fx[j] * dt + gxi[j] * root;
            }
            if let Some(k) = slots[i + 1] {
                out[k * d..(k + 1) * d].copy_from_slice(&x);
            }
        }
    });
    let times = kept.iter().map(|&i| grid.time(i)).collect();
    TrajectoryBatch::from_raw(times, d, x0_draws.len(), data, Direction::Forward, seed, SamplerMethod::Em)
}

/// Settings of the reverse SDE dx = [f x − ½(1 + λ²) D s] dt + λ g dw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseConfig {
    pub lambda: f64,
    /// Integration stops at the first grid time ≥ t_min (default 10⁻⁴ T).
    pub t_min: Option<f64>,
}

/// Integrates the reverse SDE from T down to t_min on `grid` (whose times
/// must be available in the model's tables). With positive steps
/// Δ = t_{i+1} − t_i the update is
/// x_i = x_{i+1} + (−f x + ½(1 + λ²) D s) Δ + λ g √Δ ξ, with coefficients
/// and score taken at t_{i+1}.
pub fn reverse_sde_sample(
    model: &ScoreModel,
    config: &ReverseConfig,
    x_t_draws: &[Vector],
    grid: &TimeGrid,
    seed: u64,
    recording: &Recording,
) -> Result<TrajectoryBatch> {
    let lambda = config.lambda;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("λ must be ≥ 0, got {lambda}")));
    }
    let spec = model.tables().spec();
    let d = spec.dimension();
    if let Some(bad) = x_t_draws.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    let t_min = config.t_min.unwrap_or(DEFAULT_T_MIN_FRACTION * grid.horizon());
    if !(t_min > 0.0) {
        return Err(Error::domain("t_min must be positive: the score is singular at t = 0"));
    }
    let order = grid.reverse_indices(t_min);
    if order.len() < 2 {
        return Err(Error::domain("reverse grid has fewer than two times above t_min"));
    }
    let c = 0.5 * (1.0 + lambda * lambda);
    struct Coeffs {
        f: Vec<f64>,
        dm: Vec<f64>,
        g: Vec<f64>,
        snap: ScoreSnapshot,
    }
    let mut coeffs = Vec::with_capacity(order.len() - 1);
    for &i in &order[..order.len() - 1] {
        let t = grid.time(i);
        coeffs.push(Coeffs {
            f: to_row_major(&spec.drift(t)?),
            dm: to_row_major(&spec.diffusion(t)?),
            g: to_row_major(&spec.noise(t)?),
            snap: model.snapshot(t)?,
        });
    }
    let (slots, kept) = recording.slots(&order, grid.len());
    let per_path = kept.len() * d;
    let mut data = vec![0.0; x_t_draws.len() * per_path];
    let n_comp = model.points().len();

    let underflow = data
        .par_chunks_mut(per_path.max(1))
        .enumerate()
        .map(|(p, out)| {
            if per_path == 0 {
                return false;
            }
            let mut rng = path_rng(seed, p as u64);
            let mut scratch = ScoreScratch::new(d, n_comp);
            let mut x = x_t_draws[p].as_slice().to_vec();
            let mut s = vec![0.0; d];
            let mut fx = vec![0.0; d];
            let mut ds = vec![0.0; d];
            let mut xi = vec![0.0; d];
            let mut gxi = vec![0.0; d];
            let mut flagged = false;
            if let Some(k) = slots[order[0]] {
                out[k * d..(k + 1) * d].copy_from_slice(&x);
            }
            for (step, w) in order.windows(2).enumerate() {
                let cf = &coeffs[step];
                let dt = grid.time(w[0]) - grid.time(w[1]);
                if cf.snap.score_into(&x, &mut s, &mut scratch) == Evaluation::Underflow {
                    flagged = true;
                }
                matvec(&cf.f, &x, &mut fx);
                matvec(&cf.dm, &s, &mut ds);
                if lambda > 0.0 {
                    for v in xi.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    matvec(&cf.g, &xi, &mut gxi);
                }
                let root = dt.sqrt();
                for j in 0..d {
                    x[j] += (-fx[j] + c * ds[j]) * dt + if lambda > 0.0 { lambda * gxi[j] * root } else { 0.0 };
                }
                if let Some(k) = slots[w[1]] {
                    out[k * d..(k + 1) * d].copy_from_slice(&x);
                }
            }
            flagged
        })
        .reduce(|| false, |a, b| a || b);
    if underflow {
        model.warn_underflow(t_min);
    }
    let times = kept.iter().map(|&i| grid.time(i)).collect();
    TrajectoryBatch::from_raw(times, d, x_t_draws.len(), data, Direction::Reverse, seed, SamplerMethod::Sde)
}
