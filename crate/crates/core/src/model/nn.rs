//! Small set of trainable layers on top of candle tensors.
//!
//! Parameters are owned by a [`ParamStore`] (ordered, named) so checkpoints,
//! optimizers and LoRA attachment can enumerate them; layers keep cheap `Var`
//! handles into the same storage.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Base,
    Adapter,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

/// Ordered registry of named parameters. Cloning shares the underlying storage.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            params: Vec::new(),
            device,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn vars(&self, kind: ParamKind) -> Vec<Var> {
        self.params
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.var.clone())
            .collect()
    }

    pub fn count(&self, kind: ParamKind) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.var.elem_count())
            .sum()
    }

    /// Points `name` at a new variable (used when merging adapters).
    pub(crate) fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        p.var = var;
        Ok(())
    }

    pub(crate) fn remove_adapters(&mut self) {
        self.params.retain(|p| p.kind == ParamKind::Base);
    }

    fn register(&mut self, name: String, values: Vec<f64>, shape: &[usize], kind: ParamKind) -> Result<Var> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.push(Param {
            name,
            var: var.clone(),
            kind,
        });
        Ok(var)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind) -> Result<Var> {
        let n = shape.iter().product();
        self.register(name.into(), vec![0.0; n], shape, kind)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64, kind: ParamKind) -> Result<Var> {
        let n = shape.iter().product();
        self.register(name.into(), vec![value; n], shape, kind)
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, kind: ParamKind) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.register(name.into(), values, shape, kind)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, kind: ParamKind) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.register(name.into(), values, shape, kind)
    }

    /// Reseeds the initializer stream (used when attaching adapters to a loaded model).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Weight initialization for [`Linear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform `±1/√fan_in` for weight and bias.
    Default,
    /// All zeros (gates and output heads that must start as the identity / zero map).
    Zeros,
}

/// Low-rank additive update `(α/r)·B·A` on a frozen weight.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub a: Var,
    pub b: Var,
    pub scale: f64,
}

/// Anything that can carry a LoRA adapter.
pub trait LoraTarget {
    fn attach_lora(&mut self, store: &mut ParamStore, rank: usize, alpha: f64) -> Result<()>;
    fn merge_lora(&mut self, store: &mut ParamStore) -> Result<()>;
    fn has_lora(&self) -> bool;
}

/// Dense affine map `y = x·Wᵀ + b` applied over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    weight: Var,
    bias: Option<Var>,
    lora: Option<LoraAdapter>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let (weight, bias) = match init {
            Init::Default => (
                store.uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, ParamKind::Base)?,
                if bias {
                    Some(store.uniform(format!("{name}.bias"), &[out_dim], bound, ParamKind::Base)?)
                } else {
                    None
                },
            ),
            Init::Zeros => (
                store.zeros(format!("{name}.weight"), &[out_dim, in_dim], ParamKind::Base)?,
                if bias {
                    Some(store.zeros(format!("{name}.bias"), &[out_dim], ParamKind::Base)?)
                } else {
                    None
                },
            ),
        };
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            lora: None,
            in_dim,
            out_dim,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize, bias: bool) -> usize {
        in_dim * out_dim + if bias { out_dim } else { 0 }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    /// `W + (α/r)·B·A` when an adapter is attached, else `W`.
    pub fn effective_weight(&self) -> Result<Tensor> {
        match &self.lora {
            Some(l) => Ok((self.weight.as_tensor() + (l.b.as_tensor().matmul(l.a.as_tensor())? * l.scale)?)?),
            None => Ok(self.weight.as_tensor().clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::Shape("linear on scalar".into()))?;
        if last != self.in_dim {
            return Err(Error::Shape(format!(
                "{}: input dim {last}, expected {}",
                self.name, self.in_dim
            )));
        }
        let rows = x.elem_count() / last;
        let x2 = x.reshape((rows, last))?;
        let mut y = x2.matmul(&self.weight.as_tensor().t()?)?;
        if let Some(lora) = &self.lora {
            let low = x2.matmul(&lora.a.as_tensor().t()?)?;
            let delta = low.matmul(&lora.b.as_tensor().t()?)?;
            y = (y + (delta * lora.scale)?)?;
        }
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b.as_tensor())?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty dims") = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

impl LoraTarget for Linear {
    fn attach_lora(&mut self, store: &mut ParamStore, rank: usize, alpha: f64) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::LoraAlreadyApplied);
        }
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        let a = store.uniform(format!("{}.lora_a", self.name), &[rank, self.in_dim], bound, ParamKind::Adapter)?;
        let b = store.zeros(format!("{}.lora_b", self.name), &[self.out_dim, rank], ParamKind::Adapter)?;
        self.lora = Some(LoraAdapter {
            a,
            b,
            scale: alpha / rank as f64,
        });
        Ok(())
    }

    fn merge_lora(&mut self, store: &mut ParamStore) -> Result<()> {
        let lora = self.lora.take().ok_or(Error::LoraNotApplied)?;
        let delta = (lora.b.as_tensor().matmul(lora.a.as_tensor())? * lora.scale)?;
        let merged = (self.weight.as_tensor() + delta)?;
        // New storage: other handles to the base weight keep the unmerged values.
        self.weight = Var::from_tensor(&merged)?;
        store.replace(&format!("{}.weight", self.name), self.weight.clone())
    }

    fn has_lora(&self) -> bool {
        self.lora.is_some()
    }
}

/// Lookup table indexed by integer ids.
#[derive(Debug, Clone)]
pub struct Embedding {
    name: String,
    table: Var,
    lora: Option<LoraAdapter>,
    n_rows: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, n_rows: usize, dim: usize) -> Result<Self> {
        let table = store.normal(format!("{name}.table"), &[n_rows, dim], 1.0 / (dim as f64).sqrt(), ParamKind::Base)?;
        Ok(Self {
            name: name.to_string(),
            table,
            lora: None,
            n_rows,
            dim,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Gathers rows for `ids` (u32, any shape) → `ids.shape ++ [dim]`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let mut out = self.table.as_tensor().index_select(&flat, 0)?;
        if let Some(lora) = &self.lora {
            let low = lora.a.as_tensor().index_select(&flat, 0)?;
            out = (out + (low.matmul(lora.b.as_tensor())? * lora.scale)?)?;
        }
        dims.push(self.dim);
        Ok(out.reshape(dims)?)
    }
}

impl LoraTarget for Embedding {
    fn attach_lora(&mut self, store: &mut ParamStore, rank: usize, alpha: f64) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::LoraAlreadyApplied);
        }
        let a = store.zeros(format!("{}.lora_a", self.name), &[self.n_rows, rank], ParamKind::Adapter)?;
        let b = store.normal(format!("{}.lora_b", self.name), &[rank, self.dim], 1.0 / (rank as f64).sqrt(), ParamKind::Adapter)?;
        self.lora = Some(LoraAdapter {
            a,
            b,
            scale: alpha / rank as f64,
        });
        Ok(())
    }

    fn merge_lora(&mut self, store: &mut ParamStore) -> Result<()> {
        let lora = self.lora.take().ok_or(Error::LoraNotApplied)?;
        let delta = (lora.a.as_tensor().matmul(lora.b.as_tensor())? * lora.scale)?;
        let merged = (self.table.as_tensor() + delta)?;
        self.table = Var::from_tensor(&merged)?;
        store.replace(&format!("{}.table", self.name), self.table.clone())
    }

    fn has_lora(&self) -> bool {
        self.lora.is_some()
    }
}

/// LayerNorm over the last dimension, optionally with a learned affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Option<Var>,
    beta: Option<Var>,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Some(store.constant(format!("{name}.gamma"), &[dim], 1.0, ParamKind::Base)?),
            beta: Some(store.zeros(format!("{name}.beta"), &[dim], ParamKind::Base)?),
            eps: 1e-5,
        })
    }

    pub fn plain() -> Self {
        Self {
            gamma: None,
            beta: None,
            eps: 1e-5,
        }
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn affine(&self) -> Option<(&Tensor, &Tensor)> {
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => Some((g.as_tensor(), b.as_tensor())),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = layer_norm(x, self.eps)?;
        if let Some(g) = &self.gamma {
            y = y.broadcast_mul(g.as_tensor())?;
        }
        if let Some(b) = &self.beta {
            y = y.broadcast_add(b.as_tensor())?;
        }
        Ok(y)
    }
}

pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(x)?)?)
}

/// `silu(a) ⊙ b` where `[a, b]` are the two halves of the last dimension.
pub fn swiglu(x: &Tensor) -> Result<Tensor> {
    let d = x.dim(D::Minus1)?;
    if d % 2 != 0 {
        return Err(Error::Shape("swiglu needs an even feature dimension".into()));
    }
    let a = x.narrow(D::Minus1, 0, d / 2)?;
    let b = x.narrow(D::Minus1, d / 2, d / 2)?;
    Ok((silu(&a)? * b)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Sinusoidal features `[sin(v·ω_k), cos(v·ω_k)]`, `ω_k = 10000^{−k/half}`, row-major `n×dim`.
pub fn sinusoidal(values: &[f64], dim: usize, scale: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(values.len() * dim);
    for &v in values {
        for k in 0..half {
            let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            out.push((scale * v * w).sin());
        }
        for k in 0..half {
            let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            out.push((scale * v * w).cos());
        }
        out.resize(out.len() + dim - 2 * half, 0.0);
    }
    out
}

/// Bernoulli keep-mask scaled by `1/(1−p)`, drawn from `rng`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, dtype: DType, device: &Device, rng: &mut R) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let values: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

/// Converts a tensor of any float dtype to a flat `Vec<f64>`.
pub fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
