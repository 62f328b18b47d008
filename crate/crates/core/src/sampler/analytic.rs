//! Closed-form marginal velocity fields, used as oracles for the integrator.
//!
//! With `x_t = t·x1 + (1−t)·ε`, `ε ~ N(0,1)`, each coordinate is treated independently.

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sampler::{FieldContext, VectorField};

/// Data `x1 ~ N(0, s²)` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianField {
    pub data_std: f64,
}

impl GaussianField {
    pub fn new(data_std: f64) -> Self {
        Self { data_std }
    }

    /// Marginal variance `t²s² + (1−t)²`.
    pub fn marginal_var(&self, t: f64) -> f64 {
        t * t * self.data_std.powi(2) + (1.0 - t).powi(2)
    }

    /// `u_t(x) = x·(t·s² − (1−t)) / (t²s² + (1−t)²)`
    pub fn velocity_scalar(&self, x: f64, t: f64) -> f64 {
        x * (t * self.data_std.powi(2) - (1.0 - t)) / self.marginal_var(t)
    }

    /// `∇ log p_t(x) = −x / (t²s² + (1−t)²)`
    pub fn score_scalar(&self, x: f64, t: f64) -> f64 {
        -x / self.marginal_var(t)
    }
}

impl VectorField for GaussianField {
    fn velocity(&self, x: &Array3<f64>, t: f64, _ctx: &FieldContext<'_>) -> Result<Array3<f64>> {
        Ok(x.mapv(|v| self.velocity_scalar(v, t)))
    }
}

/// Data from a 1D Gaussian mixture `Σ_k w_k N(m_k, s_k²)`, per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureField {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl MixtureField {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
            return Err(Error::InvalidArgument("mixture parameter lengths differ".into()));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must be a distribution".into()));
        }
        if stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("mixture stds must be positive".into()));
        }
        Ok(Self { weights, means, stds })
    }

    /// Exact marginal velocity `E[x1 − ε | x_t = x]`.
    pub fn velocity_scalar(&self, x: f64, t: f64) -> f64 {
        let mut log_r = Vec::with_capacity(self.weights.len());
        let mut u = Vec::with_capacity(self.weights.len());
        for k in 0..self.weights.len() {
            let (m, s2) = (self.means[k], self.stds[k].powi(2));
            let var = t * t * s2 + (1.0 - t).powi(2);
            let r = x - t * m;
            log_r.push(self.weights[k].ln() - 0.5 * var.ln() - 0.5 * r * r / var);
            u.push(m + (t * s2 - (1.0 - t)) * r / var);
        }
        let max = log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_r.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter().zip(&u).map(|(w, u)| w * u).sum::<f64>() / z
    }

    /// Mixture CDF of the data distribution.
    pub fn data_cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((w, m), s)| w * normal_cdf((x - m) / s))
            .sum()
    }

    pub fn sample_data<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut k = self.weights.len() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                self.means[k] + self.stds[k] * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }
}

impl VectorField for MixtureField {
    fn velocity(&self, x: &Array3<f64>, t: f64, _ctx: &FieldContext<'_>) -> Result<Array3<f64>> {
        Ok(x.mapv(|v| self.velocity_scalar(v, t)))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// 1-Wasserstein distance between an empirical sample and a continuous CDF,
/// `∫ |F_n(x) − F(x)| dx`, integrated exactly between sample points with a fine inner grid.
pub fn wasserstein1_to_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, n_grid: usize) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let h = (hi - lo) / n_grid as f64;
    let mut idx = 0;
    let mut total = 0.0;
    for k in 0..n_grid {
        let x = lo + (k as f64 + 0.5) * h;
        while idx < s.len() && s[idx] <= x {
            idx += 1;
        }
        total += (idx as f64 / n - cdf(x)).abs() * h;
    }
    total
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((((i + 1) as f64) / n - f).abs())
        })
        .fold(0.0, f64::max)
}
