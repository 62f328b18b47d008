//! Conditional flow-matching objective on the linear interpolant
//! `x_t = t·x1 + (1−t)·ε`, its auxiliary distogram term, time sampling and
//! hierarchical label dropout.
//!
//! The training loop itself lives in [`training`].

pub mod training;

use ndarray::{Array2, ArrayView2, ArrayView3, Zip};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{pair_distance_bins, Backbone, FoldLabel};

/// Number of distogram bins predicted by the pair head.
pub const DISTOGRAM_BINS: usize = 64;
pub const DISTOGRAM_MIN: f64 = 1.0;
pub const DISTOGRAM_MAX: f64 = 30.0;
/// Distogram loss is only applied at `t ≥` this value.
pub const DISTOGRAM_T_MIN: f64 = 0.3;

/// Largest time value a sampler may return.
pub const T_MAX: f64 = 1.0 - 1e-6;

/// Mixture `w_u·U(0,1) + w_b·Beta(a, b)` over training times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSampler {
    pub uniform_weight: f64,
    pub beta_weight: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for TimeSampler {
    fn default() -> Self {
        Self {
            uniform_weight: 0.02,
            beta_weight: 0.98,
            beta_a: 1.9,
            beta_b: 1.0,
        }
    }
}

impl TimeSampler {
    pub fn validate(&self) -> Result<()> {
        if (self.uniform_weight + self.beta_weight - 1.0).abs() > 1e-12
            || self.uniform_weight < 0.0
            || self.beta_weight < 0.0
        {
            return Err(Error::Config("time sampler weights must be non-negative and sum to 1".into()));
        }
        if self.beta_a <= 0.0 || self.beta_b <= 0.0 {
            return Err(Error::Config("beta parameters must be positive".into()));
        }
        Ok(())
    }

    /// Mixture density on `[0, 1]`.
    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        let ln_beta = statrs::function::beta::ln_beta(self.beta_a, self.beta_b);
        // x·ln(y) with the convention 0·ln(0) = 0 (exponent 0 means a constant factor).
        let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
        let beta_pdf = (term(self.beta_a - 1.0, t) + term(self.beta_b - 1.0, 1.0 - t) - ln_beta).exp();
        self.uniform_weight + self.beta_weight * beta_pdf
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let beta_cdf = statrs::function::beta::beta_reg(self.beta_a, self.beta_b, t);
        self.uniform_weight * t + self.beta_weight * beta_cdf
    }

    pub fn mean(&self) -> f64 {
        self.uniform_weight * 0.5 + self.beta_weight * self.beta_a / (self.beta_a + self.beta_b)
    }
}

/// Draws `n` i.i.d. training times from `sampler`; values are in `[0, 1)`.
pub fn sample_time<R: Rng + ?Sized>(n: usize, sampler: &TimeSampler, rng: &mut R) -> Result<Vec<f64>> {
    sampler.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample_time needs n >= 1".into()));
    }
    let beta = Beta::new(sampler.beta_a, sampler.beta_b)
        .map_err(|e| Error::Config(format!("beta distribution: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let t = if rng.gen::<f64>() < sampler.uniform_weight {
                rng.gen::<f64>()
            } else {
                beta.sample(rng)
            };
            t.min(T_MAX)
        })
        .collect())
}

/// `t·x1 + (1−t)·eps`, elementwise.
pub fn interpolate(x1: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    if x1.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "interpolate: {:?} vs {:?}",
            x1.shape(),
            eps.shape()
        )));
    }
    let mut out = Array2::zeros(x1.raw_dim());
    Zip::from(&mut out).and(&x1).and(&eps).for_each(|o, &a, &e| {
        *o = if t == 1.0 {
            a
        } else if t == 0.0 {
            e
        } else {
            t * a + (1.0 - t) * e
        }
    });
    Ok(out)
}

/// `(1/L)·‖v_pred − (x1 − eps)‖²` with `L` the number of rows.
pub fn cfm_loss(v_pred: ArrayView2<'_, f64>, x1: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>) -> Result<f64> {
    if v_pred.shape() != x1.shape() || x1.shape() != eps.shape() {
        return Err(Error::Shape("cfm_loss: operand shapes differ".into()));
    }
    let l = v_pred.nrows().max(1) as f64;
    let mut sum = 0.0;
    Zip::from(&v_pred).and(&x1).and(&eps).for_each(|&v, &a, &e| {
        let d = v - (a - e);
        sum += d * d;
    });
    Ok(sum / l)
}

/// Cross-entropy of predicted distogram logits (`L×L×64`) against the binned
/// distances of `x1`, averaged over all `L²` pairs; zero for `t < 0.3`.
pub fn distogram_loss(logits: ArrayView3<'_, f64>, x1: &Backbone, t: f64) -> Result<f64> {
    let l = x1.len();
    if logits.shape() != [l, l, DISTOGRAM_BINS] {
        return Err(Error::Shape(format!(
            "distogram logits {:?}, expected [{l}, {l}, {DISTOGRAM_BINS}]",
            logits.shape()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distogram logits".into()));
    }
    if t < DISTOGRAM_T_MIN {
        return Ok(0.0);
    }
    let bins = pair_distance_bins(x1, DISTOGRAM_BINS, DISTOGRAM_MIN, DISTOGRAM_MAX)?;
    let mut total = 0.0;
    for i in 0..l {
        for j in 0..l {
            let row = logits.slice(ndarray::s![i, j, ..]);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[bins[[i, j]]];
        }
    }
    Ok(total / (l * l) as f64)
}

/// Clean-data estimate `x̂ = x_t + (1−t)·v`.
pub fn clean_prediction(x_t: ArrayView2<'_, f64>, t: f64, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x_t.shape() != v.shape() {
        return Err(Error::Shape("clean_prediction: shapes differ".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    let mut out = x_t.to_owned();
    out.zip_mut_with(&v, |o, &vv| *o += (1.0 - t) * vv);
    Ok(out)
}

/// One training example: clean structure, noise draw, time and interpolant.
#[derive(Debug, Clone)]
pub struct NoisySample {
    pub x1: Array2<f64>,
    pub eps: Array2<f64>,
    pub t: f64,
    pub x_t: Array2<f64>,
}

impl NoisySample {
    /// Draws `ε ~ N(0, I)` of the same shape as `x1` and forms the interpolant.
    pub fn draw<R: Rng + ?Sized>(x1: Array2<f64>, t: f64, rng: &mut R) -> Result<Self> {
        let eps = Array2::from_shape_simple_fn(x1.raw_dim(), || rng.sample::<f64, _>(StandardNormal));
        let x_t = interpolate(x1.view(), eps.view(), t)?;
        Ok(Self { x1, eps, t, x_t })
    }

    /// Regression target `x1 − ε`.
    pub fn target_velocity(&self) -> Array2<f64> {
        &self.x1 - &self.eps
    }
}

/// Probabilities of the four hierarchical dropout outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSchedule {
    /// `{∅, ∅, ∅}`
    pub p_none: f64,
    /// `{C, ∅, ∅}`
    pub p_c_only: f64,
    /// `{C, A, ∅}`
    pub p_ca: f64,
    /// `{C, A, T}`
    pub p_cat: f64,
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        Self {
            p_none: 0.5,
            p_c_only: 0.1,
            p_ca: 0.15,
            p_cat: 0.25,
        }
    }
}

impl DropoutSchedule {
    pub fn validate(&self) -> Result<()> {
        let p = [self.p_none, self.p_c_only, self.p_ca, self.p_cat];
        if p.iter().any(|v| *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("dropout probabilities must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    /// Outcome probabilities after folding unavailable outcomes into the
    /// coarsest available labelled outcome, indexed by kept depth
    /// (0 = none, 1 = C, 2 = CA, 3 = CAT).
    pub fn effective_probabilities(&self, label: &FoldLabel) -> [f64; 4] {
        let available = match label.depth() {
            None => 0,
            Some(level) => level.index() + 1,
        };
        let raw = [self.p_none, self.p_c_only, self.p_ca, self.p_cat];
        let mut out = [0.0; 4];
        for (depth, p) in raw.into_iter().enumerate() {
            let target = if depth <= available {
                depth
            } else if available == 0 {
                0
            } else {
                1
            };
            out[target] += p;
        }
        out
    }
}

/// Randomly drops label levels according to `schedule`.
pub fn dropout_labels<R: Rng + ?Sized>(label: &FoldLabel, schedule: &DropoutSchedule, rng: &mut R) -> FoldLabel {
    let probs = schedule.effective_probabilities(label);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut depth = 3;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            depth = k;
            break;
        }
    }
    use crate::geom::Level;
    let level = match depth {
        0 => None,
        1 => Some(Level::Class),
        2 => Some(Level::Architecture),
        _ => Some(Level::Topology),
    };
    label.truncated(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rng: &mut ChaCha8Rng, l: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((l, 3), || scale * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn time_sampler_mean_and_normalization() {
        let s = TimeSampler::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = sample_time(1_000_000, &s, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let analytic = 0.02 * 0.5 + 0.98 * (1.9 / 2.9);
        assert_abs_diff_eq!(analytic, 0.652, epsilon = 5e-4);
        assert!((mean - analytic).abs() < 0.002, "mean {mean}");
        assert!(draws.iter().all(|&t| (0.0..1.0).contains(&t)));

        // Composite Simpson quadrature after t = u^10, which removes the t^0.9 cusp at 0.
        let n = 20_000;
        let h = 1.0 / n as f64;
        let g = |u: f64| s.density(u.powi(10)) * 10.0 * u.powi(9);
        let mut integral = g(0.0) + g(1.0);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * g(k as f64 * h);
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn time_sampler_cdf_closed_form() {
        // Beta(a, 1) has CDF t^a.
        let s = TimeSampler::default();
        for &t in &[0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(s.cdf(t), 0.02 * t + 0.98 * t.powf(1.9), epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolate_endpoints() {
        let x1 = array![[2.0, 0.0, 0.0]];
        let eps = array![[0.0, 0.0, 0.0]];
        assert_eq!(interpolate(x1.view(), eps.view(), 0.5).unwrap(), array![[1.0, 0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1 = gaussian(&mut rng, 7, 3.0);
        let eps = gaussian(&mut rng, 7, 1.0);
        assert_eq!(interpolate(x1.view(), eps.view(), 0.0).unwrap(), eps);
        assert_eq!(interpolate(x1.view(), eps.view(), 1.0).unwrap(), x1);
        assert!(interpolate(x1.view(), gaussian(&mut rng, 6, 1.0).view(), 0.3).is_err());
    }

    #[test]
    fn cfm_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = gaussian(&mut rng, 9, 3.0);
        let eps = gaussian(&mut rng, 9, 1.0);
        let target = &x1 - &eps;
        assert_eq!(cfm_loss(target.view(), x1.view(), eps.view()).unwrap(), 0.0);

        let x1 = array![[1.0, 0.0, 0.0]];
        let eps = array![[0.0, 0.0, 0.0]];
        let v = array![[2.0, 0.0, 0.0]];
        assert_abs_diff_eq!(cfm_loss(v.view(), x1.view(), eps.view()).unwrap(), 1.0);

        // Scalar-loop oracle.
        let x1 = gaussian(&mut rng, 13, 3.0);
        let eps = gaussian(&mut rng, 13, 1.0);
        let v = gaussian(&mut rng, 13, 2.0);
        let mut oracle = 0.0;
        for i in 0..13 {
            for k in 0..3 {
                let d = v[[i, k]] - (x1[[i, k]] - eps[[i, k]]);
                oracle += d * d;
            }
        }
        oracle /= 13.0;
        assert!((cfm_loss(v.view(), x1.view(), eps.view()).unwrap() - oracle).abs() < 1e-10);
    }

    fn helix_like(l: usize) -> Backbone {
        let pts: Vec<[f64; 3]> = (0..l)
            .map(|i| {
                let a = i as f64 * 100f64.to_radians();
                [2.3 * a.cos(), 2.3 * a.sin(), 1.5 * i as f64]
            })
            .collect();
        Backbone::from_points(&pts).unwrap()
    }

    #[test]
    fn distogram_loss_examples() {
        let x1 = helix_like(12);
        let l = 12;
        let uniform = Array3::<f64>::zeros((l, l, DISTOGRAM_BINS));
        assert_eq!(distogram_loss(uniform.view(), &x1, 0.29).unwrap(), 0.0);
        let ce = distogram_loss(uniform.view(), &x1, 0.5).unwrap();
        assert!((ce - (64f64).ln()).abs() < 1e-9);

        let bins = pair_distance_bins(&x1, DISTOGRAM_BINS, DISTOGRAM_MIN, DISTOGRAM_MAX).unwrap();
        let mut perfect = Array3::<f64>::zeros((l, l, DISTOGRAM_BINS));
        for i in 0..l {
            for j in 0..l {
                perfect[[i, j, bins[[i, j]]]] = 50.0;
            }
        }
        assert!(distogram_loss(perfect.view(), &x1, 0.9).unwrap() < 1e-10);

        let mut bad = Array3::<f64>::from_elem((l, l, DISTOGRAM_BINS), f64::NAN);
        assert!(distogram_loss(bad.view(), &x1, 0.9).is_err());
        bad.fill(0.0);
        assert!(distogram_loss(bad.view(), &x1, 0.3).unwrap() > 0.0);
    }

    #[test]
    fn clean_prediction_recovers_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x1 = gaussian(&mut rng, 8, 5.0);
            let eps = gaussian(&mut rng, 8, 1.0);
            let t: f64 = rng.gen();
            let xt = interpolate(x1.view(), eps.view(), t).unwrap();
            let v = &x1 - &eps;
            let xh = clean_prediction(xt.view(), t, v.view()).unwrap();
            for (a, b) in xh.iter().zip(x1.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let xt = gaussian(&mut rng, 4, 1.0);
        let v = gaussian(&mut rng, 4, 1.0);
        assert_eq!(clean_prediction(xt.view(), 1.0, v.view()).unwrap(), xt);
        assert_eq!(clean_prediction(xt.view(), 0.3, Array2::zeros((4, 3)).view()).unwrap(), xt);
    }

    #[test]
    fn losses_are_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = gaussian(&mut rng, 10, 5.0);
        let eps = gaussian(&mut rng, 10, 1.0);
        let v = gaussian(&mut rng, 10, 3.0);
        let r = random_rotation(&mut rng);
        let rot = |a: &Array2<f64>| crate::geom::rotate_rows(a.view(), r.matrix());
        let base = cfm_loss(v.view(), x1.view(), eps.view()).unwrap();
        let rotated = cfm_loss(rot(&v).view(), rot(&x1).view(), rot(&eps).view()).unwrap();
        assert!((base - rotated).abs() < 1e-6);

        let logits = Array3::from_shape_simple_fn((10, 10, DISTOGRAM_BINS), || rng.gen::<f64>());
        let b1 = Backbone::new(x1.clone()).unwrap();
        let b2 = Backbone::new(rot(&x1)).unwrap();
        let d1 = distogram_loss(logits.view(), &b1, 0.7).unwrap();
        let d2 = distogram_loss(logits.view(), &b2, 0.7).unwrap();
        assert!((d1 - d2).abs() < 1e-6);
    }

    #[test]
    fn dropout_frequencies_full_label() {
        let schedule = DropoutSchedule::default();
        let label = FoldLabel::cat(1, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let out = dropout_labels(&label, &schedule, &mut rng);
            let k = out.depth().map_or(0, |l| l.index() + 1);
            counts[k] += 1;
        }
        let expected = [0.5, 0.1, 0.15, 0.25];
        let mut chi2 = 0.0;
        for k in 0..4 {
            let f = counts[k] as f64 / n as f64;
            assert!((f - expected[k]).abs() < 0.002, "outcome {k}: {f}");
            let e = expected[k] * n as f64;
            chi2 += (counts[k] as f64 - e).powi(2) / e;
        }
        // chi-square with 3 dof: p > 0.001 ⇔ statistic < 16.27.
        assert!(chi2 < 16.27, "chi2 {chi2}");
    }

    #[test]
    fn dropout_fall_through() {
        let schedule = DropoutSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert!(dropout_labels(&FoldLabel::null(), &schedule, &mut rng).is_null());
        }
        let c_only = FoldLabel::new(Some(2), None, None).unwrap();
        let n = 100_000;
        let mut none = 0;
        for _ in 0..n {
            let out = dropout_labels(&c_only, &schedule, &mut rng);
            if out.is_null() {
                none += 1;
            } else {
                assert_eq!(out, c_only);
            }
        }
        let f = none as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.01, "null fraction {f}");
    }
}
