//! Conditioned, pair-biased attention blocks and pair-track updates.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::nn::{layer_norm, sigmoid, softmax_last, swiglu, Init, LayerNorm, Linear, LoraTarget, ParamStore};

/// Residue-level conditioning `[B, 1, C]`; register positions are conditioned on zeros.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub residue: Tensor,
    pub n_registers: usize,
    pub len: usize,
}

impl Conditioning {
    /// Applies `f` to the residue conditioning and to the zero register conditioning, then
    /// expands to `[B, N, K]`.
    fn modulation(&self, f: &Linear) -> Result<Tensor> {
        let (b, _, c) = self.residue.dims3()?;
        let res = f.forward(&self.residue)?;
        let k = res.dim(D::Minus1)?;
        let res = res.broadcast_as((b, self.len, k))?;
        if self.n_registers == 0 {
            return Ok(res.contiguous()?);
        }
        let zeros = Tensor::zeros((1, 1, c), self.residue.dtype(), self.residue.device())?;
        let reg = f.forward(&zeros)?.broadcast_as((b, self.n_registers, k))?;
        Ok(Tensor::cat(&[&reg, &res], 1)?)
    }

    /// Dense `[B, N, C]` conditioning with zero rows at the registers.
    pub fn expanded(&self) -> Result<Tensor> {
        let (b, _, c) = self.residue.dims3()?;
        let res = self.residue.broadcast_as((b, self.len, c))?.contiguous()?;
        Ok(res.pad_with_zeros(1, self.n_registers, 0)?)
    }
}

/// LayerNorm without affine, then `·(1 + scale(c)) + shift(c)`.
#[derive(Debug, Clone)]
pub struct AdaLn {
    modulation: Linear,
    dim: usize,
}

impl AdaLn {
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            modulation: Linear::new(store, &format!("{name}.mod"), cond_dim, 2 * dim, true, Init::Default)?,
            dim,
        })
    }

    pub fn forward(&self, x: &Tensor, cond: &Conditioning) -> Result<Tensor> {
        let m = cond.modulation(&self.modulation)?;
        let scale = m.narrow(D::Minus1, 0, self.dim)?;
        let shift = m.narrow(D::Minus1, self.dim, self.dim)?;
        Ok(((layer_norm(x, 1e-5)? * (scale + 1.0)?)? + shift)?)
    }
}

/// Output gate produced from the conditioning; zero at initialization.
#[derive(Debug, Clone)]
pub struct AdaScale {
    gate: Linear,
}

impl AdaScale {
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            gate: Linear::new(store, &format!("{name}.gate"), cond_dim, dim, true, Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor, cond: &Conditioning) -> Result<Tensor> {
        Ok((x * cond.modulation(&self.gate)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    ln_attn: AdaLn,
    q: Linear,
    k: Linear,
    v: Linear,
    q_norm: LayerNorm,
    k_norm: LayerNorm,
    pair_norm: LayerNorm,
    pair_bias: Linear,
    out: Linear,
    scale_attn: AdaScale,
    ln_ff: AdaLn,
    ff_in: Linear,
    ff_out: Linear,
    scale_ff: AdaScale,
    n_heads: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let (d, c, p) = (cfg.seq_dim, cfg.cond_dim, cfg.pair_dim);
        let n = |s: &str| format!("{name}.{s}");
        Ok(Self {
            ln_attn: AdaLn::new(store, &n("ln_attn"), c, d)?,
            q: Linear::new(store, &n("q"), d, d, false, Init::Default)?,
            k: Linear::new(store, &n("k"), d, d, false, Init::Default)?,
            v: Linear::new(store, &n("v"), d, d, false, Init::Default)?,
            q_norm: LayerNorm::new(store, &n("q_norm"), d)?,
            k_norm: LayerNorm::new(store, &n("k_norm"), d)?,
            pair_norm: LayerNorm::new(store, &n("pair_norm"), p)?,
            pair_bias: Linear::new(store, &n("pair_bias"), p, cfg.n_heads, false, Init::Default)?,
            out: Linear::new(store, &n("out"), d, d, true, Init::Default)?,
            scale_attn: AdaScale::new(store, &n("scale_attn"), c, d)?,
            ln_ff: AdaLn::new(store, &n("ln_ff"), c, d)?,
            ff_in: Linear::new(store, &n("ff_in"), d, 2 * cfg.ff_dim(), true, Init::Default)?,
            ff_out: Linear::new(store, &n("ff_out"), cfg.ff_dim(), d, true, Init::Default)?,
            scale_ff: AdaScale::new(store, &n("scale_ff"), c, d)?,
            n_heads: cfg.n_heads,
        })
    }

    /// Per-head attention bias `[B, H, N, N]` from the residue pair grid, zero at registers.
    ///
    /// `pair_normed` is the affine-free LayerNorm of the pair grid (shared across blocks while
    /// the grid is unchanged); this block's LayerNorm affine is folded into the projection:
    /// `W(γ⊙z + β) = z·(W·diag γ)ᵀ + Wβ`.
    pub fn pair_bias(&self, pair_normed: &Tensor, n_registers: usize) -> Result<Tensor> {
        let (b, l, _, p) = pair_normed.dims4()?;
        let (gamma, beta) = self.pair_norm.affine().expect("pair norm has affine parameters");
        let w = self.pair_bias.effective_weight()?;
        let w_eff = w.broadcast_mul(&gamma.unsqueeze(0)?)?;
        let b_eff = w.matmul(&beta.unsqueeze(1)?)?.squeeze(1)?;
        let z = pair_normed.reshape((b * l * l, p))?;
        let bias = z.matmul(&w_eff.t()?)?.broadcast_add(&b_eff)?;
        let bias = bias.reshape((b, l, l, self.n_heads))?.permute((0, 3, 1, 2))?.contiguous()?;
        Ok(bias
            .pad_with_zeros(2, n_registers, 0)?
            .pad_with_zeros(3, n_registers, 0)?)
    }

    /// Attention logits `[B, H, N, N]` including the pair bias.
    pub fn attention_logits(&self, x: &Tensor, pair: &Tensor, cond: &Conditioning) -> Result<Tensor> {
        let h = self.ln_attn.forward(x, cond)?;
        let (q, k) = self.qk(&h)?;
        let dh = q.dim(D::Minus1)?;
        let logits = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        Ok((logits + self.pair_bias(&layer_norm(pair, 1e-5)?, cond.n_registers)?)?)
    }

    fn heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.n_heads, d / self.n_heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn qk(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        let q = self.heads(&self.q_norm.forward(&self.q.forward(h)?)?)?;
        let k = self.heads(&self.k_norm.forward(&self.k.forward(h)?)?)?;
        Ok((q, k))
    }

    /// `pair_normed` is `layer_norm(pair)` without affine, see [`Self::pair_bias`].
    pub fn forward(&self, x: &Tensor, pair_normed: &Tensor, cond: &Conditioning) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let h = self.ln_attn.forward(x, cond)?;
        let (q, k) = self.qk(&h)?;
        let v = self.heads(&self.v.forward(&h)?)?;
        let dh = d / self.n_heads;
        let logits = ((q.matmul(&k.t()?)? / (dh as f64).sqrt())? + self.pair_bias(pair_normed, cond.n_registers)?)?;
        let attn = softmax_last(&logits)?;
        let o = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        let x = (x + self.scale_attn.forward(&self.out.forward(&o)?, cond)?)?;

        let h = self.ln_ff.forward(&x, cond)?;
        let ff = self.ff_out.forward(&swiglu(&self.ff_in.forward(&h)?)?)?;
        Ok((&x + self.scale_ff.forward(&ff, cond)?)?)
    }

    pub fn lora_targets<'a>(&'a mut self, out: &mut Vec<&'a mut dyn LoraTarget>) {
        for lin in [
            &mut self.ln_attn.modulation,
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.pair_bias,
            &mut self.out,
            &mut self.scale_attn.gate,
            &mut self.ln_ff.modulation,
            &mut self.ff_in,
            &mut self.ff_out,
            &mut self.scale_ff.gate,
        ] {
            out.push(lin);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleDirection {
    Outgoing,
    Incoming,
}

/// Gated triangle multiplicative update over a `[B, L, L, P]` pair grid.
#[derive(Debug, Clone)]
pub struct TriangleMultiplication {
    norm_in: LayerNorm,
    proj: Linear,
    gate: Linear,
    norm_out: LayerNorm,
    out: Linear,
    hidden: usize,
    direction: TriangleDirection,
}

impl TriangleMultiplication {
    pub fn new(store: &mut ParamStore, name: &str, pair_dim: usize, hidden: usize, direction: TriangleDirection) -> Result<Self> {
        let n = |s: &str| format!("{name}.{s}");
        Ok(Self {
            norm_in: LayerNorm::new(store, &n("norm_in"), pair_dim)?,
            proj: Linear::new(store, &n("proj"), pair_dim, 4 * hidden, true, Init::Default)?,
            gate: Linear::new(store, &n("gate"), pair_dim, pair_dim, true, Init::Default)?,
            norm_out: LayerNorm::new(store, &n("norm_out"), hidden)?,
            out: Linear::new(store, &n("out"), hidden, pair_dim, true, Init::Zeros)?,
            hidden,
            direction,
        })
    }

    pub fn forward(&self, pair: &Tensor) -> Result<Tensor> {
        let c = self.hidden;
        let z = self.norm_in.forward(pair)?;
        let proj = self.proj.forward(&z)?;
        let part = |i: usize| proj.narrow(D::Minus1, i * c, c);
        let a = (sigmoid(&part(0)?)? * part(1)?)?;
        let b = (sigmoid(&part(2)?)? * part(3)?)?;
        // [B, c, L, L]
        let a = a.permute((0, 3, 1, 2))?.contiguous()?;
        let b = b.permute((0, 3, 1, 2))?.contiguous()?;
        let x = match self.direction {
            // x_ij = Σ_k a_ik b_jk
            TriangleDirection::Outgoing => a.matmul(&b.t()?)?,
            // x_ij = Σ_k a_ki b_kj
            TriangleDirection::Incoming => a.t()?.matmul(&b)?,
        };
        let x = x.permute((0, 2, 3, 1))?;
        let update = self.out.forward(&self.norm_out.forward(&x)?)?;
        let g = sigmoid(&self.gate.forward(&z)?)?;
        Ok((pair + (g * update)?)?)
    }

    fn lora_targets<'a>(&'a mut self, out: &mut Vec<&'a mut dyn LoraTarget>) {
        out.push(&mut self.proj);
        out.push(&mut self.gate);
        out.push(&mut self.out);
    }
}

/// Outer-sum injection of the sequence track followed by outgoing and incoming triangle updates.
#[derive(Debug, Clone)]
pub struct PairUpdate {
    seq_norm: LayerNorm,
    left: Linear,
    right: Linear,
    tri_out: TriangleMultiplication,
    tri_in: TriangleMultiplication,
}

impl PairUpdate {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let n = |s: &str| format!("{name}.{s}");
        let (d, p) = (cfg.seq_dim, cfg.pair_dim);
        Ok(Self {
            seq_norm: LayerNorm::new(store, &n("seq_norm"), d)?,
            left: Linear::new(store, &n("left"), d, p, false, Init::Zeros)?,
            right: Linear::new(store, &n("right"), d, p, false, Init::Zeros)?,
            tri_out: TriangleMultiplication::new(store, &n("tri_out"), p, cfg.tri_dim, TriangleDirection::Outgoing)?,
            tri_in: TriangleMultiplication::new(store, &n("tri_in"), p, cfg.tri_dim, TriangleDirection::Incoming)?,
        })
    }

    /// `tokens` is `[B, N, D]` with registers first; `pair` is the residue grid `[B, L, L, P]`.
    pub fn forward(&self, tokens: &Tensor, pair: &Tensor, n_registers: usize) -> Result<Tensor> {
        let (_, n, _) = tokens.dims3()?;
        let l = pair.dim(1)?;
        if n != l + n_registers {
            return Err(Error::Shape("token/pair length mismatch".into()));
        }
        let s = self.seq_norm.forward(&tokens.narrow(1, n_registers, l)?)?;
        let a = self.left.forward(&s)?.unsqueeze(2)?;
        let b = self.right.forward(&s)?.unsqueeze(1)?;
        let pair = pair.broadcast_add(&a)?.broadcast_add(&b)?;
        let pair = self.tri_out.forward(&pair)?;
        self.tri_in.forward(&pair)
    }

    pub fn lora_targets<'a>(&'a mut self, out: &mut Vec<&'a mut dyn LoraTarget>) {
        out.push(&mut self.left);
        out.push(&mut self.right);
        self.tri_out.lora_targets(out);
        self.tri_in.lora_targets(out);
    }
}
