//! Principal axes and per-axis schedules for principal-axis DDIM.

use nalgebra::SymmetricEigen;

use super::matrix_fn::{MatrixFn, Role};
use super::schedule::Schedule;
use crate::linalg::gram_defect;
use crate::{Error, Mat, Result, Vector};

const ORTHONORMAL_TOL: f64 = 1e-10;

/// Orthonormal axes d_m with their own schedules α_m(t). Directions outside
/// the span of the axes follow `default_schedule`.
#[derive(Debug, Clone)]
pub struct AxisScheduleSet {
    axes: Vec<Vector>,
    schedules: Vec<Schedule>,
    default_schedule: Option<Schedule>,
}

impl AxisScheduleSet {
    pub fn new(axes: Vec<Vector>, schedules: Vec<Schedule>, default_schedule: Option<Schedule>) -> Result<Self> {
        let Some(first) = axes.first() else {
            return Err(Error::Config("at least one axis is required".into()));
        };
        let d = first.len();
        if axes.len() > d || axes.iter().any(|a| a.len() != d) {
            return Err(Error::Config(format!("need at most {d} axes of length {d}")));
        }
        if axes.len() != schedules.len() {
            return Err(Error::Config(format!("{} axes but {} schedules", axes.len(), schedules.len())));
        }
        let defect = gram_defect(&columns(&axes));
        if defect > ORTHONORMAL_TOL {
            return Err(Error::Contract(format!("axes are not orthonormal (Gram defect {defect:.3e})")));
        }
        if axes.len() < d && default_schedule.is_none() {
            return Err(Error::Config("a default schedule is needed for the complement of the axes".into()));
        }
        Ok(Self { axes, schedules, default_schedule })
    }

    /// Same schedule on every axis of an orthonormal basis.
    pub fn uniform(axes: Vec<Vector>, schedule: Schedule) -> Result<Self> {
        let n = axes.len();
        Self::new(axes, vec![schedule.clone(); n], Some(schedule))
    }

    pub fn dimension(&self) -> usize {
        self.axes[0].len()
    }

    pub fn active_count(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vector] {
        &self.axes
    }

    pub fn schedules(&self) -> &[Schedule] {
        &self.schedules
    }

    pub fn default_schedule(&self) -> Option<&Schedule> {
        self.default_schedule.as_ref()
    }

    pub fn axis_matrix(&self) -> Mat {
        columns(&self.axes)
    }

    pub(crate) fn matrix_fn(&self, role: Role) -> MatrixFn {
        MatrixFn::AxisSchedules {
            axes: self.axis_matrix(),
            schedules: self.schedules.clone(),
            complement: if self.axes.len() < self.dimension() { self.default_schedule.clone() } else { None },
            role,
        }
    }

    pub(crate) fn terminal_alpha(&self, t: f64) -> f64 {
        let mut a = self.schedules.iter().map(|s| s.alpha(t)).fold(0.0, f64::max);
        if self.axes.len() < self.dimension() {
            if let Some(s) = &self.default_schedule {
                a = a.max(s.alpha(t));
            }
        }
        a
    }
}

fn columns(vs: &[Vector]) -> Mat {
    Mat::from_columns(vs)
}

/// Principal axes of a point cloud.
#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    /// Unit eigenvectors of the sample covariance, by descending eigenvalue.
    pub axes: Vec<Vector>,
    /// Matching eigenvalues (sample variances along each axis).
    pub variances: Vec<f64>,
    /// Number of eigenvalues above 10⁻¹² of the largest.
    pub effective_rank: usize,
}

impl PrincipalAxes {
    pub fn with_schedules(self, schedules: Vec<Schedule>, default_schedule: Option<Schedule>) -> Result<AxisScheduleSet> {
        AxisScheduleSet::new(self.axes, schedules, default_schedule)
    }
}

/// Top-`count` eigenvectors of the sample covariance (n − 1 normalisation).
///
/// Axes belonging to (numerically) equal eigenvalues are replaced by the
/// Gram–Schmidt orthonormalisation of the coordinate vectors projected onto
/// that eigenspace, taken in coordinate order. Each axis is signed so that
/// its first nonzero entry is positive. When `count` exceeds the effective
/// rank the result is truncated to the rank.
pub fn paddim_axes_from_data(samples: &[Vector], count: usize) -> Result<PrincipalAxes> {
    if samples.len() < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Config("samples have inconsistent dimensions".into()));
    }
    if count == 0 || count > d {
        return Err(Error::Config(format!("axis count must lie in 1..={d}, got {count}")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vector::zeros(d), |acc, s| acc + s) / n;
    let mut cov = Mat::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<Vector> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let top = values[0].max(0.0);
    let effective_rank = values.iter().filter(|&&v| v > 1e-12 * top && v > 0.0).count();
    let tie_tol = 1e-10 * (1.0 + top);

    let mut axes: Vec<Vector> = Vec::with_capacity(d);
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (values[start] - values[end]).abs() <= tie_tol {
            end += 1;
        }
        if end - start == 1 {
            axes.push(vectors[start].clone());
        } else {
            axes.extend(canonical_basis(&vectors[start..end]));
        }
        start = end;
    }
    for a in &mut axes {
        if let Some(first) = a.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                a.neg_mut();
            }
        }
    }

    let kept = count.min(effective_rank.max(1));
    if kept < count {
        log::warn!("requested {count} principal axes but the sample covariance has effective rank {effective_rank}; truncating");
    }
    axes.truncate(kept);
    Ok(PrincipalAxes { axes, variances: values[..kept].to_vec(), effective_rank })
}

/// Orthonormal basis of span(`basis`) obtained by projecting e₀, e₁, … onto it.
fn canonical_basis(basis: &[Vector]) -> Vec<Vector> {
    let d = basis[0].len();
    let b = Mat::from_columns(basis);
    let projector = &b * b.transpose();
    let mut out: Vec<Vector> = Vec::with_capacity(basis.len());
    for i in 0..d {
        if out.len() == basis.len() {
            break;
        }
        let mut v = projector.column(i).into_owned();
        for u in &out {
            let c = u.dot(&v);
            v -= u * c;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            out.push(v / norm);
        }
    }
    out
}
