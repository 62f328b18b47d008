//! Optimizer step for the denoiser: data augmentation, noising, optional
//! self-conditioning pass, CFM + distogram loss and an AdamW update.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{crop_to_common_length, ClusterBalancedIterator};
use crate::error::{Error, Result};
use crate::geom::{center_backbone, pair_distance_bins, random_rotation, FoldLabel, StructureRecord};
use crate::model::nn::log_softmax_last;
use crate::model::{Denoiser, ModelInput};
use crate::objective::{dropout_labels, sample_time, DropoutSchedule, TimeSampler, DISTOGRAM_BINS, DISTOGRAM_MAX, DISTOGRAM_MIN, DISTOGRAM_T_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub self_cond_prob: f64,
    pub time_sampler: TimeSampler,
    pub dropout: DropoutSchedule,
    /// Adds the distogram term when the model has a distogram head.
    pub distogram_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            self_cond_prob: 0.5,
            time_sampler: TimeSampler::default(),
            dropout: DropoutSchedule::default(),
            distogram_loss: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.self_cond_prob) {
            return Err(Error::Config("self_cond_prob must be in [0, 1]".into()));
        }
        self.time_sampler.validate()?;
        self.dropout.validate()
    }
}

/// A noised, augmented batch ready for the loss.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// Clean structures in model units, `[B, L, 3]`.
    pub x1: Array3<f64>,
    pub eps: Array3<f64>,
    pub x_t: Array3<f64>,
    pub t: Vec<f64>,
    pub labels: Vec<FoldLabel>,
    /// Self-conditioning input, present when that branch was taken.
    pub x_hat: Option<Array3<f64>>,
    /// True distogram bins of `x1`, `[B·L·L]`.
    pub distogram_bins: Vec<u32>,
}

impl PreparedBatch {
    pub fn batch(&self) -> usize {
        self.x1.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.x1.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Tensor,
    pub cfm: f64,
    pub distogram: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub cfm: f64,
    pub distogram: f64,
    pub self_conditioned: bool,
}

/// Centers, rotates, picks a label and noises every record of an equal-length batch.
pub fn prepare_batch<R: Rng + ?Sized>(
    model: &Denoiser,
    records: &[&StructureRecord],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PreparedBatch> {
    let b = records.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let l = records[0].len();
    if records.iter().any(|r| r.len() != l) {
        return Err(Error::Shape("training batch must have equal chain lengths".into()));
    }
    let scale = model.config().angstrom_per_unit;
    let times = sample_time(b, &cfg.time_sampler, rng)?;
    let mut x1 = Array3::zeros((b, l, 3));
    let mut eps = Array3::zeros((b, l, 3));
    let mut labels = Vec::with_capacity(b);
    let mut distogram_bins = Vec::with_capacity(b * l * l);
    for (bi, rec) in records.iter().enumerate() {
        let centered = center_backbone(&rec.backbone, None)?;
        let rotated = centered.rotated(&random_rotation(rng));
        distogram_bins.extend(
            pair_distance_bins(&rotated, DISTOGRAM_BINS, DISTOGRAM_MIN, DISTOGRAM_MAX)?
                .iter()
                .map(|&v| v as u32),
        );
        let coords = rotated.coords();
        for i in 0..l {
            for k in 0..3 {
                x1[[bi, i, k]] = coords[[i, k]] / scale;
                eps[[bi, i, k]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let label = if rec.labels.is_empty() {
            FoldLabel::null()
        } else {
            rec.labels[rng.gen_range(0..rec.labels.len())]
        };
        labels.push(dropout_labels(&label, &cfg.dropout, rng));
    }
    let mut x_t = Array3::zeros((b, l, 3));
    for bi in 0..b {
        let t = times[bi];
        for i in 0..l {
            for k in 0..3 {
                x_t[[bi, i, k]] = t * x1[[bi, i, k]] + (1.0 - t) * eps[[bi, i, k]];
            }
        }
    }
    Ok(PreparedBatch {
        x1,
        eps,
        x_t,
        t: times,
        labels,
        x_hat: None,
        distogram_bins,
    })
}

/// Runs the gradient-free pass and stores `x̂ = x_t + (1−t)·v`.
pub fn add_self_conditioning(model: &Denoiser, batch: &mut PreparedBatch) -> Result<()> {
    let input = ModelInput::new(&batch.x_t, &batch.t, &batch.labels);
    let v = model.predict_velocity(&input)?;
    let mut x_hat = batch.x_t.clone();
    for (bi, &t) in batch.t.iter().enumerate() {
        let mut row = x_hat.index_axis_mut(ndarray::Axis(0), bi);
        row.scaled_add(1.0 - t, &v.index_axis(ndarray::Axis(0), bi));
    }
    batch.x_hat = Some(x_hat);
    Ok(())
}

/// Total loss `mean_b [ cfm_b + 1(t_b ≥ 0.3)·CE_b ]` as a differentiable tensor.
pub fn batch_loss(model: &Denoiser, batch: &PreparedBatch, use_distogram: bool) -> Result<LossTerms> {
    let (b, l) = (batch.batch(), batch.len());
    let dtype = model.dtype();
    let dev = Device::Cpu;
    let mut input = ModelInput::new(&batch.x_t, &batch.t, &batch.labels);
    input.x_hat = batch.x_hat.as_ref();
    let out = model.forward(&input)?;

    let target: Vec<f64> = batch
        .x1
        .iter()
        .zip(batch.eps.iter())
        .map(|(a, e)| a - e)
        .collect();
    let target = Tensor::from_vec(target, (b, l, 3), &dev)?.to_dtype(dtype)?;
    let per_sample = (out.velocity - target)?.sqr()?.sum((1, 2))?;
    let cfm = (per_sample.sum_all()? / (b * l) as f64)?;
    let mut total = cfm.clone();
    let mut dist_value = 0.0;

    if let (true, Some(logits)) = (use_distogram, out.distogram) {
        let gate: Vec<f64> = batch
            .t
            .iter()
            .flat_map(|&t| {
                let w = if t >= DISTOGRAM_T_MIN { 1.0 } else { 0.0 };
                std::iter::repeat_n(w, l * l)
            })
            .collect();
        if gate.iter().any(|&w| w > 0.0) {
            let n = b * l * l;
            let logp = log_softmax_last(&logits.reshape((n, DISTOGRAM_BINS))?)?;
            let idx = Tensor::from_vec(batch.distogram_bins.clone(), (n, 1), &dev)?;
            let picked = logp.gather(&idx, D::Minus1)?.squeeze(1)?;
            let gate = Tensor::from_vec(gate, n, &dev)?.to_dtype(dtype)?;
            let ce = ((picked * gate)?.sum_all()?.neg()? / (b * l * l) as f64)?;
            dist_value = ce.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            total = (total + ce)?;
        }
    }
    let cfm_value = cfm.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok(LossTerms {
        total,
        cfm: cfm_value,
        distogram: dist_value,
    })
}

/// Worst relative error between backprop gradients of the total loss and central finite
/// differences, over `n_checks` randomly chosen parameter entries. Use an f64 model.
pub fn gradient_check(model: &Denoiser, batch: &PreparedBatch, n_checks: usize, seed: u64) -> Result<f64> {
    let loss = batch_loss(model, batch, true)?;
    let grads = loss.total.backward()?;
    let params = model.store().params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < n_checks {
        attempts += 1;
        if attempts > 1000 * n_checks {
            return Err(Error::InvalidArgument("too few parameters with non-zero gradient".into()));
        }
        let p = &params[rng.gen_range(0..params.len())];
        let Some(g) = grads.get(&p.var) else { continue };
        let g = crate::model::nn::to_vec_f64(g)?;
        let idx = rng.gen_range(0..g.len());
        if g[idx].abs() < 1e-6 {
            continue;
        }
        let base = crate::model::nn::to_vec_f64(p.var.as_tensor())?;
        let set = |v: &[f64]| -> Result<()> {
            let t = Tensor::from_vec(v.to_vec(), p.var.dims(), &Device::Cpu)?.to_dtype(model.dtype())?;
            Ok(p.var.set(&t)?)
        };
        let eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[idx] += delta;
            set(&v)?;
            let l = batch_loss(model, batch, true)?.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            set(&base)?;
            Ok(l)
        };
        let h = 1e-5;
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs());
        worst = worst.max(rel);
        done += 1;
    }
    Ok(worst)
}

/// Owns a model, its optimizer state and the training RNG.
pub struct Trainer {
    model: Denoiser,
    optimizer: AdamW,
    config: TrainConfig,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(model: Denoiser, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamsAdamW {
            lr: config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let optimizer = AdamW::new(model.trainable_vars(), params)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            optimizer,
            config,
            rng,
            step: 0,
        })
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn into_model(self) -> Denoiser {
        self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One optimizer step on `records` (equal lengths). A non-finite loss aborts without updating.
    pub fn training_step(&mut self, records: &[&StructureRecord]) -> Result<StepReport> {
        let mut batch = prepare_batch(&self.model, records, &self.config, &mut self.rng)?;
        let self_conditioned = self.rng.gen::<f64>() < self.config.self_cond_prob;
        if self_conditioned {
            add_self_conditioning(&self.model, &mut batch)?;
        }
        let terms = batch_loss(&self.model, &batch, self.config.distogram_loss)?;
        let loss = terms.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step)));
        }
        self.optimizer.backward_step(&terms.total)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss,
            cfm: terms.cfm,
            distogram: terms.distogram,
            self_conditioned,
        })
    }

    /// Runs `steps` optimizer steps on batches drawn cluster-balanced from `records`
    /// (cropped to a common length). `on_step` sees every report after its update.
    pub fn fit(
        &mut self,
        records: &[StructureRecord],
        clusters: &ClusterBalancedIterator,
        steps: u64,
        data_rng: &mut ChaCha8Rng,
        mut on_step: impl FnMut(&StepReport, &Trainer) -> Result<()>,
    ) -> Result<Vec<StepReport>> {
        let b = self.config.batch_size;
        let mut reports = Vec::with_capacity(steps as usize);
        let mut picks: Vec<usize> = Vec::with_capacity(b);
        for _ in 0..steps {
            picks.clear();
            {
                let mut stream = clusters.stream(data_rng);
                picks.extend(stream.by_ref().take(b));
            }
            if picks.len() < b {
                return Err(Error::InvalidArgument("dataset has no clusters".into()));
            }
            let refs: Vec<&StructureRecord> = picks.iter().map(|&i| &records[i]).collect();
            let batch = crop_to_common_length(&refs, data_rng)?;
            let batch_refs: Vec<&StructureRecord> = batch.iter().collect();
            let report = self.training_step(&batch_refs)?;
            on_step(&report, self)?;
            reports.push(report);
        }
        Ok(reports)
    }
}
