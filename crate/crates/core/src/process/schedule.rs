//! Noise schedules α(t): α(0) = 1, positive and non-increasing on [0, T].

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters of a schedule as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleForm {
    /// α(t) = exp(−β₀ t − ½ β₁ t²), i.e. a linear log-rate.
    ExponentialRate {
        #[serde(default)]
        params: ExponentialParams,
    },
    /// α(t) = cos²θ(t) / cos²θ₀ with θ running linearly from θ₀ = (π/2)·s/(1+s)
    /// to the angle where α(T) = `end_alpha`.
    CosineLike {
        #[serde(default)]
        params: CosineParams,
    },
    /// Tabulated α on a time table covering [0, T].
    Tabulated { table: ScheduleTable },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialParams {
    pub beta0: f64,
    #[serde(default)]
    pub beta1: f64,
}

impl Default for ExponentialParams {
    fn default() -> Self {
        Self { beta0: 1.0, beta1: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineParams {
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_end_alpha")]
    pub end_alpha: f64,
}

fn default_offset() -> f64 {
    0.008
}

fn default_end_alpha() -> f64 {
    1e-4
}

impl Default for CosineParams {
    fn default() -> Self {
        Self { offset: default_offset(), end_alpha: default_end_alpha() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleTable {
    pub times: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl ScheduleForm {
    pub fn exponential(beta0: f64) -> Self {
        ScheduleForm::ExponentialRate { params: ExponentialParams { beta0, beta1: 0.0 } }
    }

    pub fn linear_rate(beta0: f64, beta1: f64) -> Self {
        ScheduleForm::ExponentialRate { params: ExponentialParams { beta0, beta1 } }
    }
}

/// A validated schedule bound to a horizon T.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    form: ScheduleForm,
    horizon: f64,
    repr: Repr,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Exponential { beta0: f64, beta1: f64 },
    Cosine { theta0: f64, theta_end: f64, log_cos0: f64 },
    Table { times: Vec<f64>, log_alphas: Vec<f64>, rates: Vec<f64> },
}

impl Schedule {
    pub fn new(form: ScheduleForm, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let repr = match &form {
            ScheduleForm::ExponentialRate { params } => {
                let ExponentialParams { beta0, beta1 } = *params;
                if !(beta0.is_finite() && beta1.is_finite()) {
                    return Err(Error::Schedule("non-finite rate parameters".into()));
                }
                if beta0 < 0.0 || beta0 + beta1 * horizon < 0.0 {
                    return Err(Error::Schedule(format!(
                        "log-rate β₀ + β₁t must stay non-negative on [0, {horizon}] (β₀ = {beta0}, β₁ = {beta1})"
                    )));
                }
                Repr::Exponential { beta0, beta1 }
            }
            ScheduleForm::CosineLike { params } => {
                let CosineParams { offset, end_alpha } = *params;
                if !(offset >= 0.0 && offset.is_finite()) {
                    return Err(Error::Schedule(format!("cosine offset must be ≥ 0, got {offset}")));
                }
                if !(end_alpha > 0.0 && end_alpha < 1.0) {
                    return Err(Error::Schedule(format!("end_alpha must lie in (0, 1), got {end_alpha}")));
                }
                let theta0 = std::f64::consts::FRAC_PI_2 * offset / (1.0 + offset);
                let theta_end = (end_alpha.sqrt() * theta0.cos()).acos();
                Repr::Cosine { theta0, theta_end, log_cos0: theta0.cos().ln() }
            }
            ScheduleForm::Tabulated { table } => tabulated_repr(table, horizon)?,
        };
        let schedule = Self { form, horizon, repr };
        if schedule.alpha(horizon) >= 1.0 {
            return Err(Error::Schedule("α(T) = 1: zero-rate schedule injects no noise".into()));
        }
        Ok(schedule)
    }

    pub fn exponential(beta0: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleForm::exponential(beta0), horizon)
    }

    pub fn form(&self) -> &ScheduleForm {
        &self.form
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn log_alpha(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Exponential { beta0, beta1 } => -(beta0 * t + 0.5 * beta1 * t * t),
            Repr::Cosine { theta0, theta_end, log_cos0 } => {
                let theta = theta0 + (theta_end - theta0) * t / self.horizon;
                2.0 * (theta.cos().ln() - log_cos0)
            }
            Repr::Table { times, log_alphas, .. } => interpolate(times, log_alphas, t),
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        self.log_alpha(t).exp()
    }

    /// d log α / dt (non-positive).
    pub fn log_rate(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Exponential { beta0, beta1 } => -(beta0 + beta1 * t),
            Repr::Cosine { theta0, theta_end, .. } => {
                let speed = (theta_end - theta0) / self.horizon;
                let theta = theta0 + speed * t;
                -2.0 * theta.tan() * speed
            }
            Repr::Table { times, rates, .. } => interpolate(times, rates, t),
        }
    }
}

fn tabulated_repr(table: &ScheduleTable, horizon: f64) -> Result<Repr> {
    let ScheduleTable { times, alphas } = table;
    if times.len() != alphas.len() {
        return Err(Error::Schedule(format!("table has {} times but {} alphas", times.len(), alphas.len())));
    }
    if times.len() < 2 {
        return Err(Error::Schedule("table needs at least two entries".into()));
    }
    if times[0] != 0.0 || alphas[0] != 1.0 {
        return Err(Error::Schedule("table must start at (t = 0, α = 1) exactly".into()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Schedule(format!("table times not strictly increasing at {}", w[1])));
        }
    }
    let last = *times.last().unwrap();
    if last < horizon * (1.0 - 1e-12) {
        return Err(Error::Schedule(format!("table ends at {last} before the horizon {horizon}")));
    }
    for (i, w) in alphas.windows(2).enumerate() {
        if !w[1].is_finite() || w[1] > w[0] {
            return Err(Error::Schedule(format!("α increases between t = {} and t = {}", times[i], times[i + 1])));
        }
    }
    if let Some(i) = alphas.iter().position(|&a| a <= 0.0) {
        return Err(Error::domain(format!("α reaches 0 at t = {} (must stay positive on [0, T])", times[i])));
    }
    let log_alphas: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    let rates = nodal_derivative(times, &log_alphas);
    Ok(Repr::Table { times: times.clone(), log_alphas, rates })
}

/// Central differences in the interior, second-order one-sided at the ends
/// (first-order when only two nodes exist).
fn nodal_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 2 {
        let s = (y[1] - y[0]) / (x[1] - x[0]);
        return vec![s, s];
    }
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        // non-uniform three-point central formula
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        out[i] = (h0 * h0 * y[i + 1] - h1 * h1 * y[i - 1] + (h1 * h1 - h0 * h0) * y[i]) / (h0 * h1 * (h0 + h1));
    }
    out[0] = one_sided(x[0], x[1], x[2], y[0], y[1], y[2]);
    out[n - 1] = one_sided(x[n - 1], x[n - 2], x[n - 3], y[n - 1], y[n - 2], y[n - 3]);
    out
}

/// Derivative at `a` of the quadratic through (a, ya), (b, yb), (c, yc).
fn one_sided(a: f64, b: f64, c: f64, ya: f64, yb: f64, yc: f64) -> f64 {
    ya * (2.0 * a - b - c) / ((a - b) * (a - c)) + yb * (a - c) / ((b - a) * (b - c)) + yc * (a - b) / ((c - a) * (c - b))
}

fn interpolate(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = x.partition_point(|&v| v <= t) - 1;
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] + w * (y[i + 1] - y[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_rate_is_constant() {
        let s = Schedule::exponential(1.0, 5.0).unwrap();
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.log_rate(0.7), -1.0);
        assert!((s.alpha(2.0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn constant_alpha_is_rejected() {
        assert!(matches!(Schedule::exponential(0.0, 1.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn increasing_alpha_is_rejected() {
        assert!(matches!(Schedule::exponential(-0.5, 1.0), Err(Error::Schedule(_))));
        let table = ScheduleTable { times: vec![0.0, 0.5, 1.0], alphas: vec![1.0, 0.5, 0.6] };
        assert!(matches!(Schedule::new(ScheduleForm::Tabulated { table }, 1.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn table_hitting_zero_is_a_domain_error() {
        let table = ScheduleTable { times: vec![0.0, 0.5, 1.0], alphas: vec![1.0, 0.0, 0.0] };
        assert!(matches!(Schedule::new(ScheduleForm::Tabulated { table }, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tabulated_exponential_rate_from_finite_differences() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let alphas: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let mut alphas = alphas;
        alphas[0] = 1.0;
        let s = Schedule::new(ScheduleForm::Tabulated { table: ScheduleTable { times, alphas } }, 5.0).unwrap();
        assert!((0.5 * s.log_rate(2.5) + 0.5).abs() < 1e-3);
        assert!((s.log_rate(0.0) + 1.0).abs() < 1e-3);
        assert!((s.log_rate(5.0) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn cosine_hits_end_alpha() {
        let form = ScheduleForm::CosineLike { params: CosineParams::default() };
        let s = Schedule::new(form, 3.0).unwrap();
        assert_eq!(s.alpha(0.0), 1.0);
        assert!((s.alpha(3.0) - 1e-4).abs() < 1e-12);
        // derivative of log α against a central difference
        let h = 1e-6;
        let fd = (s.log_alpha(1.0 + h) - s.log_alpha(1.0 - h)) / (2.0 * h);
        assert!((fd - s.log_rate(1.0)).abs() < 1e-7);
    }

    #[test]
    fn schedules_are_monotone() {
        let forms = [
            ScheduleForm::linear_rate(0.1, 2.0),
            ScheduleForm::CosineLike { params: CosineParams::default() },
        ];
        for form in forms {
            let s = Schedule::new(form, 4.0).unwrap();
            let mut prev = 1.0;
            for i in 0..=400 {
                let a = s.alpha(i as f64 * 0.01);
                assert!(a <= prev && a > 0.0);
                prev = a;
            }
        }
    }
}
