//! Non-equivariant conditioned transformer that predicts the flow velocity.
//!
//! Data flow: per-residue coordinate/index/motif features are embedded into tokens and
//! prefixed with learned registers; time and fold labels go through a small MLP into a
//! shared conditioning vector consumed by adaptive LayerNorms and output gates; binned pair
//! distances and sequence separations form a pair grid that biases attention and, optionally,
//! is refined by triangle multiplicative updates and decoded into distogram logits.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod nn;

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::FoldLabel;
use crate::objective::DISTOGRAM_BINS;

pub use blocks::{AttentionBlock, Conditioning, PairUpdate};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata};
pub use config::ModelConfig;
pub use features::{build_features, Features, ModelInput, Motif};
use nn::{swiglu, to_vec_f64, Embedding, Init, LayerNorm, Linear, LoraTarget, ParamKind, ParamStore};

/// Low-rank adapter hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 16, alpha: 32.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// `[B, L, 3]` in model units.
    pub velocity: Tensor,
    /// `[B, L, L, 64]`, symmetric in the two residue axes.
    pub distogram: Option<Tensor>,
}

/// Embedded network inputs, before the trunk.
#[derive(Debug, Clone)]
pub struct EmbeddedInputs {
    /// `[B, N, D]`, registers first.
    pub tokens: Tensor,
    /// Residue pair grid `[B, L, L, P]` (register rows/columns are implicit zeros).
    pub pair: Tensor,
    pub cond: Conditioning,
}

impl EmbeddedInputs {
    /// Pair grid padded to `[B, N, N, P]` with zero register rows and columns.
    pub fn padded_pair(&self) -> Result<Tensor> {
        let r = self.cond.n_registers;
        Ok(self.pair.pad_with_zeros(1, r, 0)?.pad_with_zeros(2, r, 0)?)
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: ModelConfig,
    seed: u64,
    store: ParamStore,
    embed: Linear,
    registers: Var,
    fold: Vec<Embedding>,
    cond_mlp: [Linear; 3],
    pair_xt: Embedding,
    pair_xhat: Embedding,
    pair_sep: Embedding,
    pair_bias: Var,
    blocks: Vec<AttentionBlock>,
    pair_updates: Vec<PairUpdate>,
    decoder_norm: LayerNorm,
    decoder: Linear,
    distogram: Option<(LayerNorm, Linear)>,
    lora: Option<LoraConfig>,
}

impl Denoiser {
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, Device::Cpu, seed);
        let s = &mut store;
        let (d, p, c) = (config.seq_dim, config.pair_dim, config.cond_dim);
        let v = &config.vocab;

        let embed = Linear::new(s, "embed", config.token_input_dim(), d, true, Init::Default)?;
        let registers = s.normal("registers", &[config.n_registers, d], 1.0 / (d as f64).sqrt(), ParamKind::Base)?;
        let fold = vec![
            Embedding::new(s, "fold.class", v.n_class + 1, config.fold_emb_dim)?,
            Embedding::new(s, "fold.architecture", v.n_architecture + 1, config.fold_emb_dim)?,
            Embedding::new(s, "fold.topology", v.n_topology + 1, config.fold_emb_dim)?,
        ];
        let cond_mlp = [
            Linear::new(s, "cond.0", config.cond_input_dim(), 2 * c, true, Init::Default)?,
            Linear::new(s, "cond.1", c, 2 * c, true, Init::Default)?,
            Linear::new(s, "cond.2", c, c, true, Init::Default)?,
        ];
        let pair_xt = Embedding::new(s, "pair.xt", config.xt_bins, p)?;
        let pair_xhat = Embedding::new(s, "pair.xhat", config.xhat_bins, p)?;
        let pair_sep = Embedding::new(s, "pair.sep", config.sep_bins, p)?;
        let pair_bias = s.zeros("pair.bias", &[p], ParamKind::Base)?;
        let blocks = (0..config.n_blocks)
            .map(|i| AttentionBlock::new(s, &format!("block{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let pair_updates = (0..config.n_pair_updates)
            .map(|i| PairUpdate::new(s, &format!("pair_update{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(s, "decoder.norm", d)?;
        let decoder = Linear::new(s, "decoder.out", d, 3, true, Init::Zeros)?;
        let distogram = if config.use_distogram_head {
            Some((
                LayerNorm::new(s, "distogram.norm", p)?,
                Linear::new(s, "distogram.out", p, DISTOGRAM_BINS, true, Init::Default)?,
            ))
        } else {
            None
        };
        Ok(Self {
            config,
            seed,
            store,
            embed,
            registers,
            fold,
            cond_mlp,
            pair_xt,
            pair_xhat,
            pair_sep,
            pair_bias,
            blocks,
            pair_updates,
            decoder_norm,
            decoder,
            distogram,
            lora: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn lora(&self) -> Option<LoraConfig> {
        self.lora
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count(ParamKind::Base)
    }

    /// Variables an optimizer should update: adapters when attached, otherwise all base weights.
    pub fn trainable_vars(&self) -> Vec<Var> {
        if self.lora.is_some() {
            self.store.vars(ParamKind::Adapter)
        } else {
            self.store.vars(ParamKind::Base)
        }
    }

    fn tensor(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    fn ids(&self, values: Vec<u32>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, &Device::Cpu)?)
    }

    /// Concatenated per-level embeddings `[B, 3·fold_emb_dim]`.
    pub fn embed_fold_labels(&self, labels: &[FoldLabel]) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(labels.len() * 3);
        for label in labels {
            self.config.vocab.validate(label)?;
            ids.extend(features::label_ids(label, &self.config));
        }
        self.embed_label_ids(&ids, labels.len())
    }

    fn embed_label_ids(&self, ids: &[u32], batch: usize) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(3);
        for (level, table) in self.fold.iter().enumerate() {
            let col: Vec<u32> = (0..batch).map(|b| ids[b * 3 + level]).collect();
            parts.push(table.forward(&self.ids(col, &[batch])?)?);
        }
        Ok(Tensor::cat(&parts, D::Minus1)?)
    }

    pub fn embed_inputs(&self, f: &Features) -> Result<EmbeddedInputs> {
        let cfg = &self.config;
        let (b, l) = (f.batch, f.len);

        let x = self.tensor(f.tokens.clone(), &[b, l, cfg.token_input_dim()])?;
        let res_tokens = self.embed.forward(&x)?;
        let tokens = if cfg.n_registers > 0 {
            let reg = self
                .registers
                .as_tensor()
                .unsqueeze(0)?
                .broadcast_as((b, cfg.n_registers, cfg.seq_dim))?;
            Tensor::cat(&[&reg, &res_tokens], 1)?
        } else {
            res_tokens
        };

        let t_enc = self.tensor(f.t_enc.clone(), &[b, cfg.t_enc_dim])?;
        let fold = self.embed_label_ids(&f.label_ids, b)?;
        let h = Tensor::cat(&[&t_enc, &fold], D::Minus1)?;
        let h = swiglu(&self.cond_mlp[0].forward(&h)?)?;
        let h = swiglu(&self.cond_mlp[1].forward(&h)?)?;
        let residue = self.cond_mlp[2].forward(&h)?.unsqueeze(1)?;
        let cond = Conditioning {
            residue,
            n_registers: cfg.n_registers,
            len: l,
        };

        let mut pair = self
            .pair_xt
            .forward(&self.ids(f.xt_bins.clone(), &[b, l, l])?)?;
        if let Some(xh) = &f.xhat_bins {
            pair = (pair + self.pair_xhat.forward(&self.ids(xh.clone(), &[b, l, l])?)?)?;
        }
        let sep = self.pair_sep.forward(&self.ids(f.sep_bins.clone(), &[1, l, l])?)?;
        let pair = pair
            .broadcast_add(&sep)?
            .broadcast_add(self.pair_bias.as_tensor())?;
        Ok(EmbeddedInputs { tokens, pair, cond })
    }

    /// Runs the trunk on embedded inputs.
    pub fn forward_embedded(&self, e: EmbeddedInputs) -> Result<DenoiserOutput> {
        let cfg = &self.config;
        let EmbeddedInputs {
            mut tokens,
            mut pair,
            cond,
        } = e;
        let mut next_update = 0;
        let mut pair_normed = nn::layer_norm(&pair, 1e-5)?;
        for (i, block) in self.blocks.iter().enumerate() {
            tokens = block.forward(&tokens, &pair_normed, &cond)?;
            if next_update < self.pair_updates.len() && cfg.pair_update_after(next_update) == i {
                pair = self.pair_updates[next_update].forward(&tokens, &pair, cfg.n_registers)?;
                pair_normed = nn::layer_norm(&pair, 1e-5)?;
                next_update += 1;
            }
        }
        let l = cond.len;
        let residues = tokens.narrow(1, cfg.n_registers, l)?;
        let velocity = self.decoder.forward(&self.decoder_norm.forward(&residues)?)?;
        let distogram = match &self.distogram {
            Some((norm, head)) => {
                let logits = head.forward(&norm.forward(&pair)?)?;
                Some(((&logits + logits.transpose(1, 2)?)? * 0.5)?)
            }
            None => None,
        };
        Ok(DenoiserOutput { velocity, distogram })
    }

    pub fn forward(&self, input: &ModelInput<'_>) -> Result<DenoiserOutput> {
        let f = build_features(input, &self.config)?;
        self.forward_embedded(self.embed_inputs(&f)?)
    }

    /// Velocity as `[B, L, 3]` f64 in model units; errors on non-finite output.
    pub fn predict_velocity(&self, input: &ModelInput<'_>) -> Result<Array3<f64>> {
        let out = self.forward(input)?;
        let v = to_vec_f64(&out.velocity)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("denoiser velocity".into()));
        }
        Ok(Array3::from_shape_vec((input.batch(), input.len(), 3), v).expect("shape checked by forward"))
    }

    fn lora_targets(&mut self) -> Vec<&mut dyn LoraTarget> {
        let mut out: Vec<&mut dyn LoraTarget> = Vec::new();
        out.push(&mut self.embed);
        for e in self.fold.iter_mut() {
            out.push(e);
        }
        for l in self.cond_mlp.iter_mut() {
            out.push(l);
        }
        out.push(&mut self.pair_xt);
        out.push(&mut self.pair_xhat);
        out.push(&mut self.pair_sep);
        for b in self.blocks.iter_mut() {
            b.lora_targets(&mut out);
        }
        for u in self.pair_updates.iter_mut() {
            u.lora_targets(&mut out);
        }
        out.push(&mut self.decoder);
        if let Some((_, head)) = &mut self.distogram {
            out.push(head);
        }
        out
    }

    /// Attaches adapters to every linear and embedding layer. Base weights are left untouched.
    pub fn apply_lora(&mut self, lora: LoraConfig) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::LoraAlreadyApplied);
        }
        if lora.rank == 0 || !(lora.alpha.is_finite() && lora.alpha > 0.0) {
            return Err(Error::InvalidArgument("LoRA rank and alpha must be positive".into()));
        }
        let mut store = std::mem::replace(&mut self.store, ParamStore::new(DType::F32, Device::Cpu, 0));
        store.reseed(self.seed ^ 0x10ba);
        let result = self
            .lora_targets()
            .into_iter()
            .try_for_each(|t| t.attach_lora(&mut store, lora.rank, lora.alpha));
        self.store = store;
        result?;
        self.lora = Some(lora);
        Ok(())
    }

    /// Folds adapters into fresh weight storage and drops them.
    pub fn merge_lora(&mut self) -> Result<()> {
        if self.lora.is_none() {
            return Err(Error::LoraNotApplied);
        }
        let mut store = std::mem::replace(&mut self.store, ParamStore::new(DType::F32, Device::Cpu, 0));
        let result = self
            .lora_targets()
            .into_iter()
            .try_for_each(|t| t.merge_lora(&mut store));
        store.remove_adapters();
        self.store = store;
        result?;
        self.lora = None;
        Ok(())
    }

    /// Copies all parameter values from `other` (same config and adapter layout).
    pub fn load_state_from(&self, other: &Denoiser) -> Result<()> {
        if self.store.params().len() != other.store.params().len() {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        for (a, b) in self.store.params().iter().zip(other.store.params()) {
            if a.name != b.name || a.var.dims() != b.var.dims() {
                return Err(Error::Shape(format!("parameter mismatch {} vs {}", a.name, b.name)));
            }
            a.var.set(&b.var.as_tensor().to_dtype(self.dtype())?)?;
        }
        Ok(())
    }

    /// Independent copy with its own parameter storage.
    pub fn deep_clone(&self) -> Result<Denoiser> {
        let mut copy = Denoiser::new(self.config.clone(), self.dtype(), self.seed)?;
        if let Some(l) = self.lora {
            copy.apply_lora(l)?;
        }
        copy.load_state_from(self)?;
        Ok(copy)
    }

    /// Same weights in another float type (e.g. f64 for gradient checks).
    pub fn to_dtype(&self, dtype: DType) -> Result<Denoiser> {
        let mut copy = Denoiser::new(self.config.clone(), dtype, self.seed)?;
        if let Some(l) = self.lora {
            copy.apply_lora(l)?;
        }
        copy.load_state_from(self)?;
        Ok(copy)
    }

    /// FNV-1a hash over the raw bytes of all base parameters.
    pub fn base_checksum(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.store.params().iter().filter(|p| p.kind == ParamKind::Base) {
            for v in to_vec_f64(p.var.as_tensor())? {
                for byte in v.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        Ok(h)
    }
}
