use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::LabelVocab;
use crate::model::nn::{LayerNorm, Linear};

/// Width/depth hyperparameters of the denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq_dim: usize,
    pub pair_dim: usize,
    pub cond_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub n_registers: usize,
    /// Number of pair-track updates interleaved with the attention blocks (0 = frozen pair grid).
    pub n_pair_updates: usize,
    /// Hidden width of the triangle multiplicative updates.
    pub tri_dim: usize,
    pub t_enc_dim: usize,
    pub idx_enc_dim: usize,
    pub fold_emb_dim: usize,
    /// Feed-forward hidden width as a multiple of `seq_dim`.
    pub ff_mult: usize,
    pub use_distogram_head: bool,
    pub xt_bins: usize,
    pub xhat_bins: usize,
    pub sep_bins: usize,
    /// Å per model coordinate unit.
    pub angstrom_per_unit: f64,
    pub vocab: LabelVocab,
}

impl ModelConfig {
    /// Default desk-scale model.
    pub fn desk(vocab: LabelVocab) -> Self {
        Self {
            seq_dim: 128,
            pair_dim: 64,
            cond_dim: 128,
            n_heads: 4,
            n_blocks: 6,
            n_registers: 10,
            n_pair_updates: 2,
            tri_dim: 32,
            t_enc_dim: 64,
            idx_enc_dim: 64,
            fold_emb_dim: 32,
            ff_mult: 2,
            use_distogram_head: true,
            xt_bins: 64,
            xhat_bins: 128,
            sep_bins: 127,
            angstrom_per_unit: 10.0,
            vocab,
        }
    }

    /// Desk model without pair-track updates (no triangle layers, no distogram head).
    pub fn desk_no_tri(vocab: LabelVocab) -> Self {
        Self {
            n_pair_updates: 0,
            use_distogram_head: false,
            ..Self::desk(vocab)
        }
    }

    /// Very small model for unit tests and quick demos.
    pub fn tiny(vocab: LabelVocab) -> Self {
        Self {
            seq_dim: 32,
            pair_dim: 16,
            cond_dim: 32,
            n_heads: 2,
            n_blocks: 2,
            n_registers: 2,
            n_pair_updates: 1,
            tri_dim: 8,
            t_enc_dim: 16,
            idx_enc_dim: 16,
            fold_emb_dim: 8,
            ff_mult: 2,
            use_distogram_head: true,
            xt_bins: 64,
            xhat_bins: 128,
            sep_bins: 127,
            angstrom_per_unit: 10.0,
            vocab,
        }
    }

    pub fn preset(name: &str, vocab: LabelVocab) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(vocab)),
            "desk-no-tri" | "desk_no_tri" => Ok(Self::desk_no_tri(vocab)),
            "tiny" => Ok(Self::tiny(vocab)),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("seq_dim", self.seq_dim),
            ("pair_dim", self.pair_dim),
            ("cond_dim", self.cond_dim),
            ("n_heads", self.n_heads),
            ("n_blocks", self.n_blocks),
            ("t_enc_dim", self.t_enc_dim),
            ("idx_enc_dim", self.idx_enc_dim),
            ("fold_emb_dim", self.fold_emb_dim),
            ("ff_mult", self.ff_mult),
            ("xt_bins", self.xt_bins),
            ("xhat_bins", self.xhat_bins),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.seq_dim.is_multiple_of(self.n_heads) {
            return fail(format!(
                "seq_dim {} not divisible by n_heads {}",
                self.seq_dim, self.n_heads
            ));
        }
        if self.n_pair_updates > self.n_blocks {
            return fail("n_pair_updates exceeds n_blocks".into());
        }
        if self.n_pair_updates > 0 && self.tri_dim == 0 {
            return fail("tri_dim must be positive when pair updates are enabled".into());
        }
        if self.use_distogram_head && self.n_pair_updates == 0 {
            return fail("distogram head requires pair updates".into());
        }
        if self.sep_bins < 3 || self.sep_bins.is_multiple_of(2) {
            return fail("sep_bins must be odd and >= 3".into());
        }
        if !self.t_enc_dim.is_multiple_of(2) || !self.idx_enc_dim.is_multiple_of(2) {
            return fail("encoding dims must be even".into());
        }
        if !(self.angstrom_per_unit > 0.0 && self.angstrom_per_unit.is_finite()) {
            return fail("angstrom_per_unit must be positive".into());
        }
        if self.vocab.n_class == 0 || self.vocab.n_architecture == 0 || self.vocab.n_topology == 0 {
            return fail("label vocabulary sizes must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.seq_dim / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_mult * self.seq_dim
    }

    /// Width of the per-token input features before the embedding projection.
    pub fn token_input_dim(&self) -> usize {
        3 + self.idx_enc_dim + 4
    }

    pub fn cond_input_dim(&self) -> usize {
        self.t_enc_dim + 3 * self.fold_emb_dim
    }

    /// Block index after which pair update `j` runs.
    pub fn pair_update_after(&self, j: usize) -> usize {
        (j + 1) * self.n_blocks / self.n_pair_updates - 1
    }

    /// Number of base parameters implied by the config.
    pub fn parameter_count(&self) -> usize {
        let d = self.seq_dim;
        let p = self.pair_dim;
        let c = self.cond_dim;
        let lin = Linear::param_count;
        let v = &self.vocab;

        let mut n = lin(self.token_input_dim(), d, true);
        n += self.n_registers * d;
        n += (v.n_class + 1 + v.n_architecture + 1 + v.n_topology + 1) * self.fold_emb_dim;
        n += lin(self.cond_input_dim(), 2 * c, true) + lin(c, 2 * c, true) + lin(c, c, true);
        n += (self.xt_bins + self.xhat_bins + self.sep_bins) * p + p;

        let ada = |dim: usize| lin(c, dim, true) * 2;
        let block = ada(d)
            + 3 * lin(d, d, false)
            + 2 * LayerNorm::param_count(d)
            + LayerNorm::param_count(p)
            + lin(p, self.n_heads, false)
            + lin(d, d, true)
            + lin(c, d, true)
            + ada(d)
            + lin(d, 2 * self.ff_dim(), true)
            + lin(self.ff_dim(), d, true)
            + lin(c, d, true);
        n += self.n_blocks * block;

        let tri = LayerNorm::param_count(p)
            + lin(p, 4 * self.tri_dim, true)
            + lin(p, p, true)
            + LayerNorm::param_count(self.tri_dim)
            + lin(self.tri_dim, p, true);
        let update = LayerNorm::param_count(d) + 2 * lin(d, p, false) + 2 * tri;
        n += self.n_pair_updates * update;

        n += LayerNorm::param_count(d) + lin(d, 3, true);
        if self.use_distogram_head {
            n += LayerNorm::param_count(p) + lin(p, self.xt_bins, true);
        }
        n
    }
}
