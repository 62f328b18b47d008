//! Host-side featurization: binned pair distances, separation bins, index and time encodings.

use ndarray::{Array2, Array3, Array4};

use crate::error::{Error, Result};
use crate::geom::{distance_bin, FoldLabel, Level};
use crate::model::config::ModelConfig;
use crate::model::nn::sinusoidal;
use crate::objective::{DISTOGRAM_MAX, DISTOGRAM_MIN};

/// Motif-scaffolding conditioning: fixed coordinates (model units) and a 0/1 mask, per batch item.
#[derive(Debug, Clone)]
pub struct Motif {
    pub coords: Array3<f64>,
    pub mask: Array2<f64>,
}

/// Batched denoiser input. Coordinates are in model units (see [`ModelConfig::angstrom_per_unit`]).
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `[B, L, 3]`
    pub x_t: &'a Array3<f64>,
    /// One time per batch item.
    pub t: &'a [f64],
    /// Self-conditioning estimate, `[B, L, 3]`.
    pub x_hat: Option<&'a Array3<f64>>,
    pub labels: &'a [FoldLabel],
    pub motif: Option<&'a Motif>,
    /// Residue numbering, defaults to `0..L`.
    pub residue_index: Option<&'a [i64]>,
}

impl<'a> ModelInput<'a> {
    pub fn new(x_t: &'a Array3<f64>, t: &'a [f64], labels: &'a [FoldLabel]) -> Self {
        Self {
            x_t,
            t,
            x_hat: None,
            labels,
            motif: None,
            residue_index: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.x_t.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.x_t.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let (b, l) = (self.batch(), self.len());
        if b == 0 || l == 0 || self.x_t.shape()[2] != 3 {
            return Err(Error::Shape(format!("x_t must be [B, L, 3], got {:?}", self.x_t.shape())));
        }
        if self.t.len() != b || self.labels.len() != b {
            return Err(Error::Shape("t and labels need one entry per batch item".into()));
        }
        if let Some(xh) = self.x_hat {
            if xh.shape() != self.x_t.shape() {
                return Err(Error::Shape("x_hat shape differs from x_t".into()));
            }
        }
        if let Some(m) = self.motif {
            if m.coords.shape() != self.x_t.shape() || m.mask.shape() != [b, l] {
                return Err(Error::Shape("motif shapes do not match x_t".into()));
            }
        }
        if let Some(idx) = self.residue_index {
            if idx.len() != l {
                return Err(Error::Shape("residue_index length differs from L".into()));
            }
        }
        if self.x_t.iter().any(|v| !v.is_finite()) || self.t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser input".into()));
        }
        for label in self.labels {
            config.vocab.validate(label)?;
        }
        Ok(())
    }

    fn indices(&self) -> Vec<i64> {
        match self.residue_index {
            Some(idx) => idx.to_vec(),
            None => (0..self.len() as i64).collect(),
        }
    }
}

/// Separation bin for residue offset `j − i`: `clamp(offset, −c, c) + c` with `c = (n_bins − 1)/2`.
pub fn separation_bin(offset: i64, n_bins: usize) -> usize {
    let c = ((n_bins - 1) / 2) as i64;
    (offset.clamp(-c, c) + c) as usize
}

/// Null ids sit one past the last real id of each level.
pub fn label_ids(label: &FoldLabel, config: &ModelConfig) -> [u32; 3] {
    let mut ids = [0u32; 3];
    for level in Level::ALL {
        ids[level.index()] = label
            .get(level)
            .unwrap_or(config.vocab.size(level) as u32);
    }
    ids
}

/// All integer and real-valued features for one batch.
#[derive(Debug, Clone)]
pub struct Features {
    pub batch: usize,
    pub len: usize,
    /// `[B, L, token_input_dim]` row-major.
    pub tokens: Vec<f64>,
    /// `[B, t_enc_dim]`
    pub t_enc: Vec<f64>,
    /// `[B, 3]`
    pub label_ids: Vec<u32>,
    /// `[B, L, L]`
    pub xt_bins: Vec<u32>,
    /// `[B, L, L]`, absent when self-conditioning is off.
    pub xhat_bins: Option<Vec<u32>>,
    /// `[L, L]`
    pub sep_bins: Vec<u32>,
}

fn pair_bins(x: &Array3<f64>, b: usize, n_bins: usize, scale: f64) -> Vec<u32> {
    let l = x.shape()[1];
    let mut out = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            let d = ((x[[b, i, 0]] - x[[b, j, 0]]).powi(2)
                + (x[[b, i, 1]] - x[[b, j, 1]]).powi(2)
                + (x[[b, i, 2]] - x[[b, j, 2]]).powi(2))
            .sqrt()
                * scale;
            out.push(distance_bin(d, n_bins, DISTOGRAM_MIN, DISTOGRAM_MAX) as u32);
        }
    }
    out
}

pub fn build_features(input: &ModelInput<'_>, config: &ModelConfig) -> Result<Features> {
    input.validate(config)?;
    let (bsz, l) = (input.batch(), input.len());
    let idx = input.indices();
    let idx_f: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
    let idx_enc = sinusoidal(&idx_f, config.idx_enc_dim, 1.0);
    let width = config.token_input_dim();

    let mut tokens = Vec::with_capacity(bsz * l * width);
    for b in 0..bsz {
        for i in 0..l {
            for k in 0..3 {
                tokens.push(input.x_t[[b, i, k]]);
            }
            tokens.extend_from_slice(&idx_enc[i * config.idx_enc_dim..(i + 1) * config.idx_enc_dim]);
            match input.motif {
                Some(m) => {
                    let w = m.mask[[b, i]];
                    for k in 0..3 {
                        tokens.push(m.coords[[b, i, k]] * w);
                    }
                    tokens.push(w);
                }
                None => tokens.extend_from_slice(&[0.0; 4]),
            }
        }
    }

    let t_enc = sinusoidal(input.t, config.t_enc_dim, 1000.0);
    let label_ids = input
        .labels
        .iter()
        .flat_map(|lab| label_ids(lab, config))
        .collect();

    let scale = config.angstrom_per_unit;
    let xt_bins = (0..bsz)
        .flat_map(|b| pair_bins(input.x_t, b, config.xt_bins, scale))
        .collect();
    let xhat_bins = input
        .x_hat
        .map(|xh| (0..bsz).flat_map(|b| pair_bins(xh, b, config.xhat_bins, scale)).collect());

    let mut sep_bins = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            sep_bins.push(separation_bin(idx[j] - idx[i], config.sep_bins) as u32);
        }
    }

    Ok(Features {
        batch: bsz,
        len: l,
        tokens,
        t_enc,
        label_ids,
        xt_bins,
        xhat_bins,
        sep_bins,
    })
}

impl Features {
    /// Dense one-hot pair features `[B, L, L, xt_bins + xhat_bins + sep_bins]`.
    pub fn pair_one_hot(&self, config: &ModelConfig) -> Array4<f64> {
        let (b, l) = (self.batch, self.len);
        let width = config.xt_bins + config.xhat_bins + config.sep_bins;
        let mut out = Array4::zeros((b, l, l, width));
        for bi in 0..b {
            for i in 0..l {
                for j in 0..l {
                    let k = (bi * l + i) * l + j;
                    out[[bi, i, j, self.xt_bins[k] as usize]] = 1.0;
                    if let Some(xh) = &self.xhat_bins {
                        out[[bi, i, j, config.xt_bins + xh[k] as usize]] = 1.0;
                    }
                    out[[bi, i, j, config.xt_bins + config.xhat_bins + self.sep_bins[i * l + j] as usize]] = 1.0;
                }
            }
        }
        out
    }
}
