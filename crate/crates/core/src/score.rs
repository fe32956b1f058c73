//! Exact scores ∇ log p(x, t) for point and weighted-mixture initial data.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{cholesky, solve};
use crate::tables::{ProcessTables, TimeSlice};
use crate::{Error, Mat, Result, Vector};

/// Anything that can be evaluated as a score field.
pub trait ScoreFn: Sync {
    fn score(&self, x: &Vector, t: f64) -> Result<Vector>;
}

impl<F> ScoreFn for F
where
    F: Fn(&Vector, f64) -> Result<Vector> + Sync,
{
    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        self(x, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreVariant {
    SinglePoint,
    Mixture,
}

/// Exact score of the forward process started from Σᵢ wᵢ δ(x − x₀⁽ⁱ⁾).
#[derive(Debug)]
pub struct ScoreModel {
    variant: ScoreVariant,
    points: Vec<Vector>,
    weights: Vec<f64>,
    tables: Arc<ProcessTables>,
    warned: AtomicBool,
}

impl Clone for ScoreModel {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant,
            points: self.points.clone(),
            weights: self.weights.clone(),
            tables: self.tables.clone(),
            warned: AtomicBool::new(false),
        }
    }
}

impl ScoreModel {
    pub fn single_point(tables: Arc<ProcessTables>, x0: Vector) -> Result<Self> {
        check_dim(&tables, &x0)?;
        Ok(Self {
            variant: ScoreVariant::SinglePoint,
            points: vec![x0],
            weights: vec![1.0],
            tables,
            warned: AtomicBool::new(false),
        })
    }

    /// Weights must be strictly positive; they are normalised here.
    pub fn mixture(tables: Arc<ProcessTables>, points: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Config(format!("{} points with {} weights", points.len(), weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("mixture weights must be strictly positive".into()));
        }
        for p in &points {
            check_dim(&tables, p)?;
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            variant: ScoreVariant::Mixture,
            points,
            weights: weights.iter().map(|w| w / total).collect(),
            tables,
            warned: AtomicBool::new(false),
        })
    }

    pub fn variant(&self) -> ScoreVariant {
        self.variant
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tables(&self) -> &Arc<ProcessTables> {
        &self.tables
    }

    pub fn dimension(&self) -> usize {
        self.tables.dimension()
    }

    /// Everything needed to evaluate the score at a fixed time.
    pub fn snapshot(&self, t: f64) -> Result<ScoreSnapshot> {
        self.snapshot_from(self.tables.at_any(t)?)
    }

    /// Snapshot at grid index `i` of the tables.
    pub fn snapshot_at_index(&self, i: usize) -> Result<ScoreSnapshot> {
        self.snapshot_from(self.tables.slice(i))
    }

    fn snapshot_from(&self, slice: TimeSlice) -> Result<ScoreSnapshot> {
        let t = slice.t;
        let d = self.dimension();
        let chol = cholesky(&slice.sigma, t)?;
        let l = chol.l();
        let min_pivot = l.diagonal().min();
        if !(min_pivot > 1e-150) {
            return Err(Error::SingularCovariance(t));
        }
        let log_det: f64 = l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let mut l_flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                l_flat[i * d + j] = l[(i, j)];
            }
        }
        let mut means = Vec::with_capacity(self.points.len() * d);
        for p in &self.points {
            means.extend((&slice.u * p).iter());
        }
        Ok(ScoreSnapshot {
            t,
            d,
            l: l_flat,
            means,
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            slice,
        })
    }

    /// ∇ log p(x, t); for the single-point variant this is −Σ⁻¹(x − K x₀).
    pub fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        let snap = self.snapshot(t)?;
        let mut scratch = ScoreScratch::new(self.dimension(), self.points.len());
        let mut out = vec![0.0; self.dimension()];
        if snap.score_into(x.as_slice(), &mut out, &mut scratch) == Evaluation::Underflow {
            self.warn_underflow(t);
        }
        Ok(Vector::from_vec(out))
    }

    pub fn log_density(&self, x: &Vector, t: f64) -> Result<f64> {
        Ok(self.snapshot(t)?.log_density(x.as_slice()))
    }

    pub(crate) fn warn_underflow(&self, t: f64) {
        if !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!("all mixture components underflow at t = {t}; using the dominant component");
        }
    }
}

impl ScoreFn for ScoreModel {
    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        ScoreModel::score(self, x, t)
    }
}

fn check_dim(tables: &ProcessTables, x: &Vector) -> Result<()> {
    if x.len() != tables.dimension() {
        return Err(Error::Dimension { expected: tables.dimension(), got: x.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    Normal,
    Underflow,
}

/// Reusable buffers for [`ScoreSnapshot::score_into`].
#[derive(Debug, Clone)]
pub struct ScoreScratch {
    r: Vec<f64>,
    y: Vec<f64>,
    q: Vec<f64>,
    logits: Vec<f64>,
}

impl ScoreScratch {
    pub fn new(d: usize, components: usize) -> Self {
        Self { r: vec![0.0; d], y: vec![0.0; d], q: vec![0.0; d * components], logits: vec![0.0; components] }
    }
}

/// Score data frozen at one time: Cholesky factor of Σ, component means
/// K(t, 0) x₀⁽ⁱ⁾ and log-weights.
#[derive(Debug, Clone)]
pub struct ScoreSnapshot {
    t: f64,
    d: usize,
    l: Vec<f64>,
    means: Vec<f64>,
    log_weights: Vec<f64>,
    log_norm: f64,
    slice: TimeSlice,
}

impl ScoreSnapshot {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn slice(&self) -> &TimeSlice {
        &self.slice
    }

    /// r ← x − mean_c; y ← L⁻¹ r; q ← L⁻ᵀ y = Σ⁻¹ r. Returns |y|².
    fn whiten(&self, x: &[f64], c: usize, r: &mut [f64], y: &mut [f64], q: &mut [f64]) -> f64 {
        let d = self.d;
        let mean = &self.means[c * d..(c + 1) * d];
        for j in 0..d {
            r[j] = x[j] - mean[j];
        }
        let l = &self.l;
        for i in 0..d {
            let mut acc = r[i];
            for k in 0..i {
                acc -= l[i * d + k] * y[k];
            }
            y[i] = acc / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut acc = y[i];
            for k in i + 1..d {
                acc -= l[k * d + i] * q[k];
            }
            q[i] = acc / l[i * d + i];
        }
        y.iter().map(|v| v * v).sum()
    }

    /// Writes ∇ log p(x) into `out`, with log-sum-exp weighting of the
    /// components. If every component density underflows the dominant
    /// component's score is returned and `Underflow` reported.
    pub fn score_into(&self, x: &[f64], out: &mut [f64], s: &mut ScoreScratch) -> Evaluation {
        let d = self.d;
        let n = self.log_weights.len();
        if n == 1 {
            self.whiten(x, 0, &mut s.r, &mut s.y, &mut s.q[..d]);
            for j in 0..d {
                out[j] = -s.q[j];
            }
            return Evaluation::Normal;
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_c = 0;
        for c in 0..n {
            let quad = self.whiten(x, c, &mut s.r, &mut s.y, &mut s.q[c * d..(c + 1) * d]);
            let logit = self.log_weights[c] - 0.5 * quad;
            s.logits[c] = logit;
            if logit > best {
                best = logit;
                best_c = c;
            }
        }
        if self.log_norm + best < f64::MIN_POSITIVE.ln() {
            for j in 0..d {
                out[j] = -s.q[best_c * d + j];
            }
            return Evaluation::Underflow;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for c in 0..n {
            let w = (s.logits[c] - best).exp();
            total += w;
            for j in 0..d {
                out[j] -= w * s.q[c * d + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
        Evaluation::Normal
    }

    /// log Σᵢ wᵢ N(x; K x₀⁽ⁱ⁾, Σ).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut r = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut q = vec![0.0; d];
        let logits: Vec<f64> = (0..self.log_weights.len())
            .map(|c| self.log_weights[c] - 0.5 * self.whiten(x, c, &mut r, &mut y, &mut q))
            .collect();
        let best = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.log_norm + best + logits.iter().map(|l| (l - best).exp()).sum::<f64>().ln()
    }
}

/// ε = −Vᵀ(t) · score: the negative score in y = V⁻¹(x − K x₀) coordinates.
pub fn epsilon_from_score(score: &Vector, tables: &ProcessTables, t: f64) -> Result<Vector> {
    let slice = tables.at(t)?;
    if t <= 0.0 || slice.v.norm() == 0.0 {
        return Err(Error::SingularCovariance(t));
    }
    Ok(-(slice.v.transpose() * score))
}

/// Inverse of [`epsilon_from_score`]: score = −V⁻ᵀ ε.
pub fn score_from_epsilon(eps: &Vector, tables: &ProcessTables, t: f64) -> Result<Vector> {
    let v = tables.at(t)?.v;
    let col = Mat::from_column_slice(eps.len(), 1, eps.as_slice());
    let solved = solve(&v.transpose(), &col, t).map_err(|_| Error::SingularCovariance(t))?;
    Ok(-Vector::from_column_slice(solved.as_slice()))
}

/// Monte-Carlo score-matching cost with per-time averages.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Σ over times of the mean squared error.
    pub total: f64,
    pub per_time: Vec<f64>,
    /// Sample standard error of each per-time mean.
    pub standard_errors: Vec<f64>,
}

/// Σₛ E‖candidate(xₛ, s) − ∇ log p(xₛ | x₀⁽ⁱ⁾)‖² with i drawn by weight and
/// xₛ = K(s, 0) x₀⁽ⁱ⁾ + V(s) η. The θ-independent constant of the
/// denoising identity is not included. Times equal to 0 are skipped.
pub fn score_matching_cost(
    model: &ScoreModel,
    candidate: &dyn ScoreFn,
    times: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<CostReport> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be ≥ 1"));
    }
    let d = model.dimension();
    let picker = WeightedIndex::new(model.weights()).map_err(|e| Error::Config(e.to_string()))?;
    let mut report = CostReport { total: 0.0, per_time: Vec::new(), standard_errors: Vec::new() };
    for (k, &t) in times.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let slice = model.tables().at_any(t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let vt = slice.v.transpose();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n_mc {
            let c = picker.sample(&mut rng);
            let eta = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let x = &slice.u * &model.points()[c] + &slice.v * &eta;
            // ∇ log p(x | x₀) = −Σ⁻¹ V η = −V⁻ᵀ η
            let eta_col = Mat::from_column_slice(d, 1, eta.as_slice());
            let target = -solve(&vt, &eta_col, t)?;
            let diff = candidate.score(&x, t)? - Vector::from_column_slice(target.as_slice());
            let e = diff.norm_squared();
            sum += e;
            sum_sq += e * e;
        }
        let n = n_mc as f64;
        let mean = sum / n;
        let var = if n_mc > 1 { (sum_sq - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
        report.total += mean;
        report.per_time.push(mean);
        report.standard_errors.push((var / n).sqrt());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{plain_vanilla_spec, Schedule, TimeGrid};

    fn tables() -> Arc<ProcessTables> {
        let spec = plain_vanilla_spec(&Schedule::exponential(1.0, 5.0).unwrap(), 1, 5.0).unwrap();
        Arc::new(ProcessTables::build(&spec, &TimeGrid::uniform(5.0, 100).unwrap()).unwrap())
    }

    fn v1(x: f64) -> Vector {
        Vector::from_vec(vec![x])
    }

    #[test]
    fn single_point_values() {
        let m = ScoreModel::single_point(tables(), v1(0.0)).unwrap();
        let t = 2f64.ln();
        assert!((m.score(&v1(1.0), t).unwrap()[0] + 2.0).abs() < 1e-12);
        assert!(matches!(m.score(&v1(1.0), 0.0), Err(Error::SingularCovariance(_))));
        let eps = epsilon_from_score(&v1(-2.0), m.tables(), t).unwrap();
        assert!((eps[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_has_zero_score_at_origin() {
        let m = ScoreModel::mixture(tables(), vec![v1(1.0), v1(-1.0)], vec![1.0, 1.0]).unwrap();
        assert_eq!(m.score(&v1(0.0), 1.0).unwrap()[0], 0.0);
    }

    #[test]
    fn far_probe_falls_back_to_dominant_component() {
        let m = ScoreModel::mixture(tables(), vec![v1(1.0), v1(-1.0)], vec![1.0, 1.0]).unwrap();
        let s = m.score(&v1(1e4), 0.05).unwrap();
        let single = ScoreModel::single_point(tables(), v1(1.0)).unwrap();
        assert_eq!(s, single.score(&v1(1e4), 0.05).unwrap());
    }

    #[test]
    fn weights_are_validated() {
        assert!(ScoreModel::mixture(tables(), vec![v1(1.0)], vec![0.0]).is_err());
        assert!(ScoreModel::mixture(tables(), vec![], vec![]).is_err());
    }
}
