use super::DEFAULT_T_MIN_FRACTION;
use crate::linalg::solve;
use crate::process::{AxisScheduleSet, Schedule};
use crate::score::ScoreModel;
use crate::tables::{ProcessTables, TimeSlice};
use crate::{Error, Mat, Result, Vector};

fn solve_vec(a: &Mat, b: &Vector, t: f64) -> Result<Vector> {
    let col = Mat::from_column_slice(b.len(), 1, b.as_slice());
    Ok(Vector::from_column_slice(solve(a, &col, t)?.as_slice()))
}

/// x(t) = U(t) x₀ + V(t) V⁻¹(T) x_T.
pub fn exact_backward_path(tables: &ProcessTables, x0: &Vector, x_t: &Vector, t: f64) -> Result<Vector> {
    let horizon = tables.horizon();
    let end = tables.at(horizon)?;
    let now = tables.at(t)?;
    let eps = solve_vec(&end.v, x_t, horizon).map_err(|_| Error::numerical(horizon, "V(T) is singular"))?;
    Ok(&now.u * x0 + &now.v * eps)
}

/// RK4 of dx/dt = f x − ½ D ∇log p from `t_start` to `t_end`, returning
/// every step. Reverse integration (t_end < t_start) stops at
/// max(t_end, t_min) with t_min defaulting to 10⁻⁴ T.
pub fn probability_flow_trajectory(
    model: &ScoreModel,
    x_start: &Vector,
    t_start: f64,
    t_end: f64,
    steps: usize,
    t_min: Option<f64>,
) -> Result<Vec<(f64, Vector)>> {
    let tables = model.tables();
    let spec = tables.spec();
    if steps == 0 {
        return Err(Error::domain("steps must be ≥ 1"));
    }
    let floor = t_min.unwrap_or(DEFAULT_T_MIN_FRACTION * spec.horizon());
    let mut end = t_end;
    if end < floor {
        log::warn!("probability-flow integration stopped at t_min = {floor} instead of {t_end}");
        end = floor;
    }
    if t_start < floor {
        return Err(Error::domain(format!("start time {t_start} lies below t_min = {floor}")));
    }
    let rhs = |x: &Vector, t: f64| -> Result<Vector> {
        let s = model.score(x, t)?;
        Ok(spec.drift(t)? * x - spec.diffusion(t)? * s * 0.5)
    };
    let h = (end - t_start) / steps as f64;
    let mut x = x_start.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push((t_start, x.clone()));
    for k in 0..steps {
        let t = t_start + k as f64 * h;
        let t_next = if k + 1 == steps { end } else { t + h };
        let k1 = rhs(&x, t)?;
        let k2 = rhs(&(&x + &k1 * (0.5 * h)), t + 0.5 * h)?;
        let k3 = rhs(&(&x + &k2 * (0.5 * h)), t + 0.5 * h)?;
        let k4 = rhs(&(&x + &k3 * h), t_next)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical(t_next, "probability-flow state is not finite"));
        }
        out.push((t_next, x.clone()));
    }
    Ok(out)
}

/// End point of [`probability_flow_trajectory`].
pub fn probability_flow_integrate(
    model: &ScoreModel,
    x_start: &Vector,
    t_start: f64,
    t_end: f64,
    steps: usize,
    t_min: Option<f64>,
) -> Result<Vector> {
    let mut path = probability_flow_trajectory(model, x_start, t_start, t_end, steps, t_min)?;
    Ok(path.pop().expect("at least one point").1)
}

/// How ε is chosen along a chain of steps.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsMode {
    /// The same vector at every step.
    Fixed(Vector),
    /// ε = V⁻¹(t_start) x(t_start), the large-T fixing of ε.
    FromXT,
    /// ε(x_s) = −Vᵀ(t_s) ∇log p(x_s, t_s) from the supplied score model.
    StateDependent,
}

impl EpsMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpsMode::Fixed(_) => "fixed-vector",
            EpsMode::FromXT => "from-xT",
            EpsMode::StateDependent => "state-dependent",
        }
    }
}

fn ei_from_slices(now: &TimeSlice, prev: &TimeSlice, x_s: &Vector, eps: &Vector) -> Vector {
    let kernel = &prev.u * &now.u_inv;
    let bracket = &prev.u_inv * &prev.v - &now.u_inv * &now.v;
    kernel * x_s + &prev.u * (bracket * eps)
}

/// Exponential-integrator step from t_s down to t_prev:
/// K(t_prev, t_s) x_s + U(t_prev) [U⁻¹(t_prev) V(t_prev) − U⁻¹(t_s) V(t_s)] ε.
/// Exact when ε is constant over the step.
pub fn ei_step(tables: &ProcessTables, x_s: &Vector, t_s: f64, t_prev: f64, eps: &Vector) -> Result<Vector> {
    if t_prev > t_s {
        return Err(Error::domain(format!("EI steps go backwards in time: t_prev = {t_prev} > t_s = {t_s}")));
    }
    if t_prev == t_s {
        return Ok(x_s.clone());
    }
    Ok(ei_from_slices(&tables.at(t_s)?, &tables.at(t_prev)?, x_s, eps))
}

fn chain_eps(
    mode: &EpsMode,
    fixed_from_start: &Option<Vector>,
    score: Option<&ScoreModel>,
    x: &Vector,
    t: f64,
    v: &Mat,
) -> Result<Vector> {
    match mode {
        EpsMode::Fixed(e) => Ok(e.clone()),
        EpsMode::FromXT => Ok(fixed_from_start.clone().expect("set for FromXT")),
        EpsMode::StateDependent => {
            let model = score.ok_or_else(|| Error::Config("state-dependent ε needs a score model".into()))?;
            Ok(-(v.transpose() * model.score(x, t)?))
        }
    }
}

/// Chained EI steps through `times` (decreasing), returning x at each time.
pub fn ei_chain(
    tables: &ProcessTables,
    x_start: &Vector,
    times: &[f64],
    mode: &EpsMode,
    score: Option<&ScoreModel>,
) -> Result<Vec<Vector>> {
    check_decreasing(times)?;
    let mut slice = tables.at(times[0])?;
    let start_eps = match mode {
        EpsMode::FromXT => Some(solve_vec(&slice.v, x_start, times[0])?),
        _ => None,
    };
    let mut x = x_start.clone();
    let mut out = vec![x.clone()];
    for &t_prev in &times[1..] {
        let eps = chain_eps(mode, &start_eps, score, &x, slice.t, &slice.v)?;
        let prev = tables.at(t_prev)?;
        x = ei_from_slices(&slice, &prev, &x, &eps);
        out.push(x.clone());
        slice = prev;
    }
    Ok(out)
}

fn check_decreasing(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::domain("a chain needs at least two times"));
    }
    if times.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::domain("chain times must be strictly decreasing"));
    }
    Ok(())
}

fn check_alpha(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::domain(format!("α must lie in (0, 1], got {a}")));
    }
    Ok(())
}

/// Scalar DDIM coefficients (a, b) with x_prev = a x_s + b ε.
fn ddim_coefficients(alpha_s: f64, alpha_prev: f64) -> (f64, f64) {
    let a = (alpha_prev / alpha_s).sqrt();
    let b = alpha_prev.sqrt() * ((1.0 / alpha_prev - 1.0).sqrt() - (1.0 / alpha_s - 1.0).sqrt());
    (a, b)
}

/// x_prev = √(α_prev/α_s) x_s + √α_prev (√(1/α_prev − 1) − √(1/α_s − 1)) ε.
pub fn ddim_step(alpha_s: f64, alpha_prev: f64, x_s: &Vector, eps: &Vector) -> Result<Vector> {
    check_alpha(alpha_s)?;
    check_alpha(alpha_prev)?;
    if alpha_s == alpha_prev {
        return Ok(x_s.clone());
    }
    let (a, b) = ddim_coefficients(alpha_s, alpha_prev);
    Ok(x_s * a + eps * b)
}

/// Chained DDIM steps with the scalar schedule α(t) through decreasing `times`.
pub fn ddim_chain(
    schedule: &Schedule,
    x_start: &Vector,
    times: &[f64],
    mode: &EpsMode,
    score: Option<&ScoreModel>,
) -> Result<Vec<Vector>> {
    check_decreasing(times)?;
    let d = x_start.len();
    let v_of = |t: f64| Mat::identity(d, d) * (-schedule.log_alpha(t).exp_m1()).sqrt();
    let start_eps = match mode {
        EpsMode::FromXT => Some(x_start / v_of(times[0])[(0, 0)]),
        _ => None,
    };
    let mut x = x_start.clone();
    let mut out = vec![x.clone()];
    for w in times.windows(2) {
        let eps = chain_eps(mode, &start_eps, score, &x, w[0], &v_of(w[0]))?;
        x = ddim_step(schedule.alpha(w[0]), schedule.alpha(w[1]), &x, &eps)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// Principal-axis DDIM step: the scalar DDIM recursion applied to each axis
/// component d_mᵀx, d_mᵀε with that axis's α_m, and with the default
/// schedule on the orthogonal complement of the axes.
pub fn paddim_step(axes: &AxisScheduleSet, t_s: f64, t_prev: f64, x_s: &Vector, eps: &Vector) -> Result<Vector> {
    let d = axes.dimension();
    if x_s.len() != d || eps.len() != d {
        return Err(Error::Dimension { expected: d, got: x_s.len().min(eps.len()) });
    }
    let mut x_rest = x_s.clone();
    let mut e_rest = eps.clone();
    let mut out = Vector::zeros(d);
    for (axis, schedule) in axes.axes().iter().zip(axes.schedules()) {
        let xm = axis.dot(x_s);
        let em = axis.dot(eps);
        x_rest -= axis * xm;
        e_rest -= axis * em;
        let (a_s, a_p) = (schedule.alpha(t_s), schedule.alpha(t_prev));
        check_alpha(a_s)?;
        check_alpha(a_p)?;
        let value = if a_s == a_p {
            xm
        } else {
            let (a, b) = ddim_coefficients(a_s, a_p);
            a * xm + b * em
        };
        out += axis * value;
    }
    if axes.active_count() < d {
        let schedule = axes.default_schedule().expect("validated at construction");
        out += ddim_step(schedule.alpha(t_s), schedule.alpha(t_prev), &x_rest, &e_rest)?;
    }
    Ok(out)
}

/// Chained paDDIM steps through decreasing `times`. For [`EpsMode::FromXT`]
/// and state-dependent ε the per-axis V = Σ_m √(1 − α_m) d_m d_mᵀ is used.
pub fn paddim_chain(
    axes: &AxisScheduleSet,
    x_start: &Vector,
    times: &[f64],
    mode: &EpsMode,
    score: Option<&ScoreModel>,
) -> Result<Vec<Vector>> {
    check_decreasing(times)?;
    let d = axes.dimension();
    let v_of = |t: f64| -> Mat {
        let mut v = Mat::zeros(d, d);
        let mut projector = Mat::zeros(d, d);
        for (axis, s) in axes.axes().iter().zip(axes.schedules()) {
            let outer = axis * axis.transpose();
            v += &outer * (-s.log_alpha(t).exp_m1()).sqrt();
            projector += outer;
        }
        if let (true, Some(s)) = (axes.active_count() < d, axes.default_schedule()) {
            v += (Mat::identity(d, d) - projector) * (-s.log_alpha(t).exp_m1()).sqrt();
        }
        v
    };
    let start_eps = match mode {
        EpsMode::FromXT => Some(solve_vec(&v_of(times[0]), x_start, times[0])?),
        _ => None,
    };
    let mut x = x_start.clone();
    let mut out = vec![x.clone()];
    for w in times.windows(2) {
        let eps = chain_eps(mode, &start_eps, score, &x, w[0], &v_of(w[0]))?;
        x = paddim_step(axes, w[0], w[1], &x, &eps)?;
        out.push(x.clone());
    }
    Ok(out)
}
