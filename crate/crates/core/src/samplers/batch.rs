use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMethod {
    Em,
    Sde,
    PfOde,
    Ei,
    Ddim,
    Paddim,
}

impl SamplerMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMethod::Em => "em",
            SamplerMethod::Sde => "sde",
            SamplerMethod::PfOde => "pf-ode",
            SamplerMethod::Ei => "ei",
            SamplerMethod::Ddim => "ddim",
            SamplerMethod::Paddim => "paddim",
        }
    }
}

/// Which grid indices a batch keeps. Storing every step of 10⁵ paths is
/// rarely wanted, so moment checks record only the times they need.
#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    All,
    Indices(Vec<usize>),
}

impl Recording {
    /// Slot of each grid index in the recorded output (None if not kept).
    pub(crate) fn slots(&self, visit_order: &[usize], grid_len: usize) -> (Vec<Option<usize>>, Vec<usize>) {
        let mut slots = vec![None; grid_len];
        let mut kept = Vec::new();
        for &i in visit_order {
            let keep = match self {
                Recording::All => true,
                Recording::Indices(list) => list.contains(&i),
            };
            if keep && slots[i].is_none() {
                slots[i] = Some(kept.len());
                kept.push(i);
            }
        }
        (slots, kept)
    }
}

/// Sample paths stored path-major: path p, recorded time k, coordinate j at
/// `data[(p * times.len() + k) * d + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    times: Vec<f64>,
    dimension: usize,
    n_paths: usize,
    data: Vec<f64>,
    direction: Direction,
    seed: u64,
    method: SamplerMethod,
}

/// Ensemble moments at one recorded time, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub t: f64,
    pub mean: Vector,
    pub mean_se: Vector,
    pub covariance: Mat,
    pub covariance_se: Mat,
}

impl TrajectoryBatch {
    pub(crate) fn from_raw(
        times: Vec<f64>,
        dimension: usize,
        n_paths: usize,
        data: Vec<f64>,
        direction: Direction,
        seed: u64,
        method: SamplerMethod,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::domain("a batch needs at least one path"));
        }
        debug_assert_eq!(data.len(), n_paths * times.len() * dimension);
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let k = (pos / dimension) % times.len();
            return Err(Error::numerical(times[k], format!("path {} is not finite", pos / (dimension * times.len()))));
        }
        Ok(Self { times, dimension, n_paths, data, direction, seed, method })
    }

    /// Builds a batch from per-path position lists sharing the same times.
    pub fn from_paths(
        times: Vec<f64>,
        paths: Vec<Vec<Vector>>,
        direction: Direction,
        seed: u64,
        method: SamplerMethod,
    ) -> Result<Self> {
        let d = paths.first().and_then(|p| p.first()).map_or(0, Vector::len);
        let mut data = Vec::with_capacity(paths.len() * times.len() * d);
        for p in &paths {
            if p.len() != times.len() || p.iter().any(|x| x.len() != d) {
                return Err(Error::Dimension { expected: times.len(), got: p.len() });
            }
            for x in p {
                data.extend(x.iter());
            }
        }
        Self::from_raw(times, d, paths.len(), data, direction, seed, method)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn method(&self) -> SamplerMethod {
        self.method
    }

    /// Recorded slot of time `t`, matched to within 10⁻⁹ (1 + |t|).
    pub fn slot_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
    }

    pub fn position(&self, path: usize, k: usize) -> &[f64] {
        let start = (path * self.times.len() + k) * self.dimension;
        &self.data[start..start + self.dimension]
    }

    pub fn final_positions(&self) -> Vec<Vector> {
        let k = self.times.len() - 1;
        (0..self.n_paths).map(|p| Vector::from_column_slice(self.position(p, k))).collect()
    }

    /// Sample mean and (n − 1)-normalised covariance at recorded slot `k`.
    /// Standard errors use the empirical fourth moments.
    pub fn moments(&self, k: usize) -> Moments {
        let d = self.dimension;
        let n = self.n_paths as f64;
        let mut mean = Vector::zeros(d);
        for p in 0..self.n_paths {
            for (j, v) in self.position(p, k).iter().enumerate() {
                mean[j] += v;
            }
        }
        mean /= n;
        let mut cov = Mat::zeros(d, d);
        let mut fourth = Mat::zeros(d, d);
        for p in 0..self.n_paths {
            let x = self.position(p, k);
            for a in 0..d {
                let ca = x[a] - mean[a];
                for b in 0..d {
                    let prod = ca * (x[b] - mean[b]);
                    cov[(a, b)] += prod;
                    fourth[(a, b)] += prod * prod;
                }
            }
        }
        let denom = (n - 1.0).max(1.0);
        let biased = &cov / n;
        let covariance = cov / denom;
        let mean_se = Vector::from_iterator(d, (0..d).map(|j| (covariance[(j, j)] / n).sqrt()));
        let covariance_se = Mat::from_fn(d, d, |a, b| {
            ((fourth[(a, b)] / n - biased[(a, b)] * biased[(a, b)]).max(0.0) / n).sqrt()
        });
        Moments { t: self.times[k], mean, mean_se, covariance, covariance_se }
    }

    /// CSV with header `path_id, t, x_0, …, x_{d−1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend((0..self.dimension).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![p.to_string(), t.to_string()];
                row.extend(self.position(p, k).iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
