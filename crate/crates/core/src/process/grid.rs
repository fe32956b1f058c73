use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Strictly increasing times pinned to 0 and T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

/// `grid` block of a config file: either `n_steps` (uniform) or explicit `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl GridConfig {
    pub fn uniform(n_steps: usize) -> Self {
        Self { n_steps: Some(n_steps), times: None }
    }

    pub fn build(&self, horizon: f64) -> Result<TimeGrid> {
        match (self.n_steps, &self.times) {
            (Some(n), None) => TimeGrid::uniform(horizon, n),
            (None, Some(times)) => TimeGrid::from_times(times.clone(), horizon),
            _ => Err(Error::Config("grid needs exactly one of `n_steps` or `times`".into())),
        }
    }
}

impl TimeGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let h = horizon / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * h).collect();
        times[n_steps] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::domain("grid needs at least two times"));
        }
        if times[0] != 0.0 {
            return Err(Error::domain(format!("grid must start at 0, starts at {}", times[0])));
        }
        if *times.last().unwrap() != horizon {
            return Err(Error::domain(format!("grid must end at the horizon {horizon}")));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::domain(format!("grid times not strictly increasing at {}", w[1])));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of intervals N (the grid holds N + 1 times).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    fn tolerance(&self) -> f64 {
        1e-10 * (1.0 + self.horizon())
    }

    /// Index of a grid time matching `t` to within rounding, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.nearest_index(t);
        ((self.times[i] - t).abs() <= self.tolerance()).then_some(i)
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let p = self.times.partition_point(|&v| v < t);
        if p == 0 {
            return 0;
        }
        if p == self.times.len() {
            return p - 1;
        }
        if (self.times[p] - t) < (t - self.times[p - 1]) {
            p
        } else {
            p - 1
        }
    }

    /// Index i of the interval [tᵢ, tᵢ₊₁) containing `t` (clamped to the last interval).
    pub fn interval_of(&self, t: f64) -> usize {
        let p = self.times.partition_point(|&v| v <= t);
        p.saturating_sub(1).min(self.steps() - 1)
    }

    /// Splits every interval into `factor` equal parts.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.times.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            for k in 0..factor {
                times.push(w[0] + k as f64 * h);
            }
        }
        times.push(self.horizon());
        Self { times }
    }

    /// Every `stride`-th time, always keeping both endpoints.
    pub fn subsampled(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut times: Vec<f64> = self.times.iter().step_by(stride).copied().collect();
        if *times.last().unwrap() != self.horizon() {
            times.push(self.horizon());
        }
        Self { times }
    }

    /// Indices of grid times `≥ t_min`, in decreasing time order (T first).
    pub fn reverse_indices(&self, t_min: f64) -> Vec<usize> {
        (0..self.len()).rev().take_while(|&i| self.times[i] >= t_min - self.tolerance()).collect()
    }
}
