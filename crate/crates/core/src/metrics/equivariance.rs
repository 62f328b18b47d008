//! How far a learned field is from SO(3)-equivariance.
//!
//! For `x_t` drawn from the interpolant and a random rotation `R`, compare the clean
//! prediction `x̂(x_t)` with predictions from the rotated input `Rᵀx_t`:
//!
//! - `E`  = RMSD(x̂(x_t), x̂(Rᵀx_t))           (small for invariant models)
//! - `Eʳ` = RMSD(x̂(x_t), R·x̂(Rᵀx_t))         (zero for equivariant models)
//! - `Eᵘ` = min_U RMSD(x̂(x_t), U·x̂(Rᵀx_t))   (Kabsch; `Eᵘ ≤ Eʳ`)
//!
//! Predictions are centered before every RMSD. Values are in Å.

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{kabsch_align, random_rotation, rmsd_raw, rotate_rows, Backbone};
use crate::objective::{clean_prediction, interpolate};
use crate::sampler::{FieldContext, VectorField};

pub const DEFAULT_N_MC: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub t: Vec<f64>,
    pub e: Vec<f64>,
    pub e_r: Vec<f64>,
    pub e_u: Vec<f64>,
    pub n_mc: usize,
}

fn centered(x: &Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    x - &mean
}

fn to_backbone(x: &Array2<f64>) -> Result<Backbone> {
    Backbone::new(x.clone())
}

/// Monte Carlo estimate of `E`, `Eʳ`, `Eᵘ` at each `t` in `t_grid` (each in `[0, 1)`).
pub fn equivariance_analysis<R: Rng + ?Sized>(
    field: &dyn VectorField,
    data: &[Backbone],
    t_grid: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<EquivarianceReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("equivariance analysis needs data".into()));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(0.0..1.0).contains(*t)) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1)")));
    }
    let scale = field.coordinate_scale();
    let ctx = FieldContext::unconditional();
    let mut report = EquivarianceReport {
        t: t_grid.to_vec(),
        e: Vec::new(),
        e_r: Vec::new(),
        e_u: Vec::new(),
        n_mc,
    };
    for &t in t_grid {
        let (mut e, mut e_r, mut e_u) = (0.0, 0.0, 0.0);
        for _ in 0..n_mc {
            let x1 = &data[rng.gen_range(0..data.len())];
            let x1 = centered(&x1.coords().to_owned()) / scale;
            let l = x1.nrows();
            let eps = Array2::from_shape_simple_fn((l, 3), || rng.sample::<f64, _>(StandardNormal));
            let x_t = interpolate(x1.view(), eps.view(), t)?;
            let rot = random_rotation(rng);
            let x_rot = rotate_rows(x_t.view(), rot.transpose().matrix());

            let mut batch = Array3::zeros((2, l, 3));
            batch.slice_mut(s![0, .., ..]).assign(&x_t);
            batch.slice_mut(s![1, .., ..]).assign(&x_rot);
            let v = field.velocity(&batch, t, &ctx)?;
            let hat = centered(&clean_prediction(x_t.view(), t, v.slice(s![0, .., ..]))?);
            let hat_rot = centered(&clean_prediction(x_rot.view(), t, v.slice(s![1, .., ..]))?);
            let back = rotate_rows(hat_rot.view(), rot.matrix());

            e += rmsd_raw(hat.view(), hat_rot.view());
            e_r += rmsd_raw(hat.view(), back.view());
            e_u += kabsch_align(&to_backbone(&hat_rot)?, &to_backbone(&hat)?)?.rmsd;
        }
        let n = n_mc as f64;
        report.e.push(scale * e / n);
        report.e_r.push(scale * e_r / n);
        report.e_u.push(scale * e_u / n);
    }
    Ok(report)
}
