//! Classifier-based distribution metrics: FPSD, fold score, fJSD, re-classification.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::classifier::FoldPrediction;
use crate::error::{Error, Result};
use crate::geom::{FoldLabel, Level};

/// Ridge added to both covariances before the matrix square root.
pub const COV_EPS: f64 = 1e-6;

/// Gaussian fit (mean, covariance) of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSetStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl FeatureSetStats {
    /// Sample mean and unbiased covariance (zero covariance for a single sample).
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no features".into()));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let mut mean = DVector::zeros(d);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for f in features {
            let c = DVector::from_column_slice(f) - &mean;
            cov += &c * c.transpose();
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        Ok(Self { mean, cov, n })
    }

    pub fn from_predictions(preds: &[FoldPrediction]) -> Result<Self> {
        let f: Vec<Vec<f64>> = preds.iter().map(|p| p.features.clone()).collect();
        Self::from_features(&f)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance `‖μ_g − μ_r‖² + tr(Σ_g + Σ_r − 2(Σ_g Σ_r)^{1/2})`.
///
/// `tr (Σ_g Σ_r)^{1/2}` is evaluated as `tr (A Σ_r A)^{1/2}` with `A = Σ_g^{1/2}`,
/// which is symmetric positive semi-definite; negative eigenvalues are clamped.
pub fn fpsd(gen: &FeatureSetStats, reference: &FeatureSetStats) -> Result<f64> {
    if gen.dim() != reference.dim() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            gen.dim(),
            reference.dim()
        )));
    }
    let d = gen.dim();
    let eye = DMatrix::<f64>::identity(d, d) * COV_EPS;
    let sg = &gen.cov + &eye;
    let sr = &reference.cov + &eye;
    let a = sym_sqrt(&sg);
    let inner = &a * &sr * &a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dm = (&gen.mean - &reference.mean).norm_squared();
    Ok((dm + sg.trace() + sr.trace() - 2.0 * tr_sqrt).max(0.0))
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn check_distributions(preds: &[&[f64]]) -> Result<usize> {
    let k = preds.first().map(|p| p.len()).unwrap_or(0);
    if k == 0 {
        return Err(Error::InvalidArgument("empty distributions".into()));
    }
    for p in preds {
        if p.len() != k {
            return Err(Error::Shape("distributions differ in size".into()));
        }
        if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("distribution entries must be finite and >= 0".into()));
        }
    }
    Ok(k)
}

/// Average of per-sample distributions.
pub fn marginal(preds: &[&[f64]]) -> Result<Vec<f64>> {
    let k = check_distributions(preds)?;
    let mut m = vec![0.0; k];
    for p in preds {
        for (a, b) in m.iter_mut().zip(p.iter()) {
            *a += b;
        }
    }
    let n = preds.len() as f64;
    Ok(m.into_iter().map(|v| v / n).collect())
}

/// `exp(mean_x KL(p(·|x) ‖ p̄))`, natural log. Lies in `[1, K]`.
pub fn fold_score(preds: &[&[f64]]) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::InvalidArgument("fold score needs at least 2 samples".into()));
    }
    let m = marginal(preds)?;
    let k = m.len() as f64;
    let mean_kl = preds
        .iter()
        .map(|p| p.iter().zip(&m).map(|(&pi, &mi)| xlogy(pi, pi) - xlogy(pi, mi)).sum::<f64>())
        .sum::<f64>()
        / preds.len() as f64;
    // The mean KL is the mutual information, bounded by ln K; clamp rounding only.
    Ok(mean_kl.exp().clamp(1.0, k))
}

/// Jensen–Shannon divergence in bits.
pub fn jsd_bits(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distributions(&[p, q])?;
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .map(|(&ai, &mi)| if ai == 0.0 { 0.0 } else { ai * (ai / mi).log2() })
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(p, &m) + 0.5 * kl(q, &m)).clamp(0.0, 1.0))
}

/// `10 · JSD(p̄_gen ‖ p̄_ref)` on the marginals of two prediction sets.
pub fn fjsd(gen: &[&[f64]], reference: &[&[f64]]) -> Result<f64> {
    let a = marginal(gen)?;
    let b = marginal(reference)?;
    Ok(10.0 * jsd_bits(&a, &b)?)
}

fn level_slices(preds: &[FoldPrediction], level: Level) -> Vec<&[f64]> {
    preds.iter().map(|p| p.level(level)).collect()
}

pub fn fold_score_at(preds: &[FoldPrediction], level: Level) -> Result<f64> {
    fold_score(&level_slices(preds, level))
}

pub fn fjsd_at(gen: &[FoldPrediction], reference: &[FoldPrediction], level: Level) -> Result<f64> {
    fjsd(&level_slices(gen, level), &level_slices(reference, level))
}

/// fJSD averaged over C, A and T.
pub fn fjsd_mean(gen: &[FoldPrediction], reference: &[FoldPrediction]) -> Result<f64> {
    let mut s = 0.0;
    for level in Level::ALL {
        s += fjsd_at(gen, reference, level)?;
    }
    Ok(s / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reclassification {
    pub mean_probability: f64,
    pub n_used: usize,
    /// Samples whose conditioning label does not set this level.
    pub n_skipped: usize,
}

/// Mean `p(target | x)` at `level` over samples whose target sets that level.
pub fn reclassification_probability(preds: &[FoldPrediction], targets: &[FoldLabel], level: Level) -> Result<Reclassification> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0;
    for (p, t) in preds.iter().zip(targets) {
        if let Some(c) = t.get(level) {
            let probs = p.level(level);
            let v = *probs
                .get(c as usize)
                .ok_or_else(|| Error::InvalidLabel(format!("{level} id {c} outside classifier vocabulary")))?;
            sum += v;
            used += 1;
        }
    }
    let skipped = preds.len() - used;
    if skipped > 0 {
        log::warn!("re-classification: {skipped} samples without a {level} label skipped");
    }
    Ok(Reclassification {
        mean_probability: if used == 0 { f64::NAN } else { sum / used as f64 },
        n_used: used,
        n_skipped: skipped,
    })
}
