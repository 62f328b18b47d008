//! Rotation-invariant relational graph network predicting C/A/T fold classes.
//!
//! Relational convolution per layer, for relations `r` with adjacency `A_r`:
//!
//! ```text
//! u_i = Σ_r W_r Σ_j A_r[i,j] h_j  +  Σ_r V_r Σ_j A_r[i,j] e_ij
//! h_i ← h_i + dropout(leaky(LN(u_i)))
//! ```
//!
//! The edge term is linear in the edge features, so the per-relation sums are
//! precomputed with the graph. Node states are sum-pooled; the pooled vector passes
//! through one MLP layer to give the feature embedding φ used by FPSD, followed by
//! one linear head per level.

pub mod graph;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Backbone, FoldLabel, LabelVocab, Level, StructureRecord};
use crate::model::checkpoint::{self, CheckpointMetadata};
use crate::model::nn::{dropout_mask, leaky_relu, log_softmax_last, softmax_last, to_vec_f64, Embedding, Init, LayerNorm, Linear, ParamStore};

pub use graph::{build_graph, GraphConfig, ProteinGraph, N_RELATIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub graph: GraphConfig,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub vocab: LabelVocab,
}

impl ClassifierConfig {
    pub fn new(vocab: LabelVocab) -> Self {
        Self {
            graph: GraphConfig::default(),
            hidden_dim: 64,
            n_layers: 3,
            dropout: 0.2,
            leaky_slope: 0.1,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::Config("classifier needs hidden_dim > 0 and n_layers > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for level in Level::ALL {
            if self.vocab.size(level) == 0 {
                return Err(Error::Config(format!("empty {level} vocabulary")));
            }
        }
        if self.graph.rbf_dim < 2 || self.graph.spatial_cutoff <= 0.0 {
            return Err(Error::Config("invalid graph settings".into()));
        }
        Ok(())
    }
}

/// Per-level class distributions and the pooled feature φ(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    /// Indexed by [`Level::index`].
    pub probs: [Vec<f64>; 3],
    pub features: Vec<f64>,
}

impl FoldPrediction {
    pub fn level(&self, level: Level) -> &[f64] {
        &self.probs[level.index()]
    }

    pub fn argmax(&self, level: Level) -> u32 {
        self.level(level)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i as u32)
    }
}

struct RelConv {
    msg: Linear,
    edge: Linear,
    norm: LayerNorm,
}

/// Padded batch of graphs as dense tensors.
struct GraphBatch {
    nodes: Tensor,
    /// `[B, R·L, L]`
    adjacency: Tensor,
    /// `[B, L, R·E]`
    edges: Tensor,
    /// `[B, L, 1]`
    mask: Tensor,
    batch: usize,
    len: usize,
}

pub struct FoldClassifier {
    config: ClassifierConfig,
    seed: u64,
    store: ParamStore,
    atom: Embedding,
    node_in: Linear,
    layers: Vec<RelConv>,
    pool_norm: LayerNorm,
    readout: Linear,
    heads: Vec<Linear>,
}

impl FoldClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(DType::F32, Device::Cpu, seed);
        let d = config.hidden_dim;
        let r = N_RELATIONS;
        let atom = Embedding::new(&mut store, "atom_type", 1, d)?;
        let node_in = Linear::new(&mut store, "node_in", config.graph.node_dim(), d, true, Init::Default)?;
        let layers = (0..config.n_layers)
            .map(|i| {
                Ok(RelConv {
                    msg: Linear::new(&mut store, &format!("conv{i}.msg"), r * d, d, true, Init::Default)?,
                    edge: Linear::new(&mut store, &format!("conv{i}.edge"), r * config.graph.edge_dim(), d, false, Init::Default)?,
                    norm: LayerNorm::new(&mut store, &format!("conv{i}.norm"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool_norm = LayerNorm::new(&mut store, "pool_norm", d)?;
        let readout = Linear::new(&mut store, "readout", d, d, true, Init::Default)?;
        let heads = Level::ALL
            .iter()
            .map(|l| Linear::new(&mut store, &format!("head_{l}"), d, config.vocab.size(*l), true, Init::Default))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            seed,
            store,
            atom,
            node_in,
            layers,
            pool_norm,
            readout,
            heads,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn feature_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn batch_tensors(&self, graphs: &[&ProteinGraph]) -> Result<GraphBatch> {
        let b = graphs.len();
        let l = graphs.iter().map(|g| g.len).max().unwrap_or(0);
        let r = N_RELATIONS;
        let nd = self.config.graph.node_dim();
        let ed = self.config.graph.edge_dim();
        let mut nodes = vec![0f32; b * l * nd];
        let mut adj = vec![0f32; b * r * l * l];
        let mut edges = vec![0f32; b * l * r * ed];
        let mut mask = vec![0f32; b * l];
        for (bi, g) in graphs.iter().enumerate() {
            for i in 0..g.len {
                mask[bi * l + i] = 1.0;
                for k in 0..nd {
                    nodes[(bi * l + i) * nd + k] = g.node_features[i * nd + k] as f32;
                }
            }
            for (ri, rel) in g.relations.iter().enumerate() {
                for e in rel {
                    adj[((bi * r + ri) * l + e.dst) * l + e.src] = 1.0;
                }
                for i in 0..g.len {
                    let src = (ri * g.len + i) * ed;
                    let dst = ((bi * l + i) * r + ri) * ed;
                    for k in 0..ed {
                        edges[dst + k] = g.edge_sums[src + k] as f32;
                    }
                }
            }
        }
        let dev = &Device::Cpu;
        Ok(GraphBatch {
            nodes: Tensor::from_vec(nodes, (b, l, nd), dev)?,
            adjacency: Tensor::from_vec(adj, (b, r * l, l), dev)?,
            edges: Tensor::from_vec(edges, (b, l, r * ed), dev)?,
            mask: Tensor::from_vec(mask, (b, l, 1), dev)?,
            batch: b,
            len: l,
        })
    }

    /// Logits per level and φ, `[B, K_level]` and `[B, D]`.
    fn forward_batch<R: Rng + ?Sized>(&self, batch: &GraphBatch, mut dropout_rng: Option<&mut R>) -> Result<(Vec<Tensor>, Tensor)> {
        let (b, l, d, r) = (batch.batch, batch.len, self.config.hidden_dim, N_RELATIONS);
        let p = self.config.dropout;
        let slope = self.config.leaky_slope;
        let atom_ids = Tensor::zeros((b, l), DType::U32, &Device::Cpu)?;
        let mut h = (self.node_in.forward(&batch.nodes)? + self.atom.forward(&atom_ids)?)?.broadcast_mul(&batch.mask)?;
        for layer in &self.layers {
            let agg = batch
                .adjacency
                .matmul(&h)?
                .reshape((b, r, l, d))?
                .permute((0, 2, 1, 3))?
                .contiguous()?
                .reshape((b, l, r * d))?;
            let u = (layer.msg.forward(&agg)? + layer.edge.forward(&batch.edges)?)?;
            let mut u = leaky_relu(&layer.norm.forward(&u)?, slope)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                u = (u * dropout_mask(&[b, l, d], p, DType::F32, &Device::Cpu, rng)?)?;
            }
            h = (h + u)?.broadcast_mul(&batch.mask)?;
        }
        let pooled = h.sum(1)?;
        let mut phi = leaky_relu(&self.readout.forward(&self.pool_norm.forward(&pooled)?)?, slope)?;
        let features = phi.clone();
        if let Some(rng) = dropout_rng {
            phi = (phi * dropout_mask(&[b, d], p, DType::F32, &Device::Cpu, rng)?)?;
        }
        let logits = self.heads.iter().map(|hd| hd.forward(&phi)).collect::<Result<Vec<_>>>()?;
        Ok((logits, features))
    }

    pub fn classify_graphs(&self, graphs: &[&ProteinGraph]) -> Result<Vec<FoldPrediction>> {
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(32) {
            let batch = self.batch_tensors(chunk)?;
            let (logits, feats) = self.forward_batch::<ChaCha8Rng>(&batch, None)?;
            let probs: Vec<Vec<f64>> = logits
                .iter()
                .map(|t| to_vec_f64(&softmax_last(&t.to_dtype(DType::F64)?)?))
                .collect::<Result<_>>()?;
            let feats = to_vec_f64(&feats)?;
            let d = self.config.hidden_dim;
            for i in 0..chunk.len() {
                let per_level: Vec<Vec<f64>> = Level::ALL
                    .iter()
                    .enumerate()
                    .map(|(k, lvl)| {
                        let kk = self.config.vocab.size(*lvl);
                        probs[k][i * kk..(i + 1) * kk].to_vec()
                    })
                    .collect();
                let [c, a, t]: [Vec<f64>; 3] = per_level.try_into().expect("three levels");
                out.push(FoldPrediction {
                    probs: [c, a, t],
                    features: feats[i * d..(i + 1) * d].to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn classify(&self, backbone: &Backbone) -> Result<FoldPrediction> {
        Ok(self.classify_batch(std::slice::from_ref(backbone))?.remove(0))
    }

    pub fn classify_batch(&self, backbones: &[Backbone]) -> Result<Vec<FoldPrediction>> {
        let graphs = backbones
            .iter()
            .map(|b| build_graph(b, &self.config.graph))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ProteinGraph> = graphs.iter().collect();
        self.classify_graphs(&refs)
    }

    /// Summed cross-entropy over the levels present in each target, averaged over the batch.
    fn loss(&self, logits: &[Tensor], targets: &[FoldLabel]) -> Result<Tensor> {
        let b = targets.len();
        let mut total: Option<Tensor> = None;
        for (k, level) in Level::ALL.iter().enumerate() {
            let kk = self.config.vocab.size(*level);
            let mut onehot = vec![0f32; b * kk];
            for (i, t) in targets.iter().enumerate() {
                if let Some(c) = t.get(*level) {
                    onehot[i * kk + c as usize] = 1.0;
                }
            }
            let onehot = Tensor::from_vec(onehot, (b, kk), &Device::Cpu)?;
            let term = (log_softmax_last(&logits[k])? * onehot)?.sum_all()?.neg()?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        Ok((total.expect("three levels") / b as f64)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Vocabulary entries absent from the training labels; excluded from accuracy.
    pub missing: Vec<(Level, u32)>,
}

pub fn train_classifier(
    records: &[StructureRecord],
    config: ClassifierConfig,
    train: &ClassifierTrainConfig,
) -> Result<(FoldClassifier, ClassifierTrainReport)> {
    let labeled: Vec<&StructureRecord> = records.iter().filter(|r| !r.labels.is_empty()).collect();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("no labeled records to train on".into()));
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Config("classifier training needs epochs > 0 and batch_size > 0".into()));
    }
    for r in &labeled {
        for l in &r.labels {
            config.vocab.validate(l)?;
        }
    }
    let mut missing = Vec::new();
    for level in Level::ALL {
        for c in 0..config.vocab.size(level) as u32 {
            if !labeled.iter().any(|r| r.labels.iter().any(|l| l.get(level) == Some(c))) {
                log::warn!("no training examples for {level} class {c}; excluded from accuracy");
                missing.push((level, c));
            }
        }
    }
    let model = FoldClassifier::new(config, train.seed)?;
    let graphs = labeled
        .iter()
        .map(|r| build_graph(&r.backbone, &model.config.graph))
        .collect::<Result<Vec<_>>>()?;
    let params = ParamsAdamW {
        lr: train.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt = AdamW::new(model.store.vars(crate::model::nn::ParamKind::Base), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0xC1A5_51F1);
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(train.batch_size) {
            let gs: Vec<&ProteinGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            // Multi-domain records contribute one uniformly drawn label per epoch.
            let targets: Vec<FoldLabel> = chunk
                .iter()
                .map(|&i| *labeled[i].labels.choose(&mut rng).expect("labeled"))
                .collect();
            let batch = model.batch_tensors(&gs)?;
            let (logits, _) = model.forward_batch(&batch, Some(&mut rng))?;
            let loss = model.loss(&logits, &targets)?;
            let v = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !v.is_finite() {
                return Err(Error::NonFinite("classifier loss".into()));
            }
            opt.backward_step(&loss)?;
            sum += v * chunk.len() as f64;
            n += chunk.len();
        }
        epoch_losses.push(sum / n as f64);
    }
    Ok((model, ClassifierTrainReport { epoch_losses, missing }))
}

/// Top-1 accuracy at `level` over records whose first label sets that level,
/// skipping classes listed in `exclude`.
pub fn accuracy(model: &FoldClassifier, records: &[StructureRecord], level: Level, exclude: &[(Level, u32)]) -> Result<f64> {
    let used: Vec<(&StructureRecord, u32)> = records
        .iter()
        .filter_map(|r| r.labels.first().and_then(|l| l.get(level)).map(|c| (r, c)))
        .filter(|(_, c)| !exclude.contains(&(level, *c)))
        .collect();
    if used.is_empty() {
        return Err(Error::InvalidArgument(format!("no records labeled at level {level}")));
    }
    let bbs: Vec<Backbone> = used.iter().map(|(r, _)| r.backbone.clone()).collect();
    let preds = model.classify_batch(&bbs)?;
    let hits = preds.iter().zip(&used).filter(|(p, (_, c))| p.argmax(level) == *c).count();
    Ok(hits as f64 / used.len() as f64)
}

/// Same directory layout as denoiser checkpoints.
pub fn save_classifier(model: &FoldClassifier, dir: &Path, step: u64, dataset_id: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = toml::to_string_pretty(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("config.toml"), cfg)?;
    checkpoint::write_tensors(&model.store, dir)?;
    checkpoint::write_metadata(
        dir,
        &CheckpointMetadata {
            seed: model.seed,
            step,
            dataset_id: dataset_id.to_string(),
            lora: None,
        },
    )
}

pub fn load_classifier(dir: &Path) -> Result<FoldClassifier> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!("classifier directory {} not found", dir.display())));
    }
    let config: ClassifierConfig = checkpoint::load_toml(dir, "config.toml")?;
    let meta = checkpoint::read_metadata(dir)?;
    let model = FoldClassifier::new(config, meta.seed)?;
    checkpoint::read_tensors(&model.store, dir)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{generate_toy_dataset, toy_vocab, ToySpec};
    use crate::geom::random_rotation;
    use nalgebra::Vector3;

    fn toy(n: usize, topologies: Vec<u32>, seed: u64) -> Vec<StructureRecord> {
        let spec = ToySpec {
            topologies,
            ..ToySpec::default()
        };
        generate_toy_dataset(n, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn untrained_outputs_are_distributions() {
        let m = FoldClassifier::new(ClassifierConfig::new(toy_vocab()), 0).unwrap();
        let recs = toy(4, (0..12).collect(), 0);
        let bbs: Vec<Backbone> = recs.iter().map(|r| r.backbone.clone()).collect();
        for p in m.classify_batch(&bbs).unwrap() {
            for level in Level::ALL {
                let s: f64 = p.level(level).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert_eq!(p.level(level).len(), toy_vocab().size(level));
            }
            assert_eq!(p.features.len(), 64);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let m = FoldClassifier::new(ClassifierConfig::new(toy_vocab()), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bb = toy(1, (0..12).collect(), 3).remove(0).backbone;
        let base = m.classify(&bb).unwrap();
        for _ in 0..100 {
            let shift = Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let moved = bb.rotated(&random_rotation(&mut rng)).translated(shift);
            let p = m.classify(&moved).unwrap();
            for level in Level::ALL {
                for (a, b) in base.level(level).iter().zip(p.level(level)) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
            for (a, b) in base.features.iter().zip(&p.features) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn feature_dim_independent_of_length() {
        let m = FoldClassifier::new(ClassifierConfig::new(toy_vocab()), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = crate::data::toy::random_coil(20, &mut rng);
        let b = crate::data::toy::random_coil(70, &mut rng);
        let p = m.classify_batch(&[a.clone(), b]).unwrap();
        assert_eq!(p[0].features.len(), p[1].features.len());
        // Padding inside a mixed-length batch does not change the result.
        let alone = m.classify(&a).unwrap();
        for (x, y) in alone.features.iter().zip(&p[0].features) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn training_separates_toy_classes_and_is_deterministic() {
        let train = toy(240, (0..12).collect(), 10);
        let test = toy(90, (0..12).collect(), 11);
        let cfg = ClassifierTrainConfig {
            epochs: 12,
            ..ClassifierTrainConfig::default()
        };
        let (m, report) = train_classifier(&train, ClassifierConfig::new(toy_vocab()), &cfg).unwrap();
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        assert!(last <= 0.5 * first, "{:?}", report.epoch_losses);
        let acc = accuracy(&m, &test, Level::Class, &report.missing).unwrap();
        assert!(acc >= 0.95, "class accuracy {acc}");

        let small = ClassifierTrainConfig {
            epochs: 1,
            ..ClassifierTrainConfig::default()
        };
        let (a, _) = train_classifier(&train[..32], ClassifierConfig::new(toy_vocab()), &small).unwrap();
        let (b, _) = train_classifier(&train[..32], ClassifierConfig::new(toy_vocab()), &small).unwrap();
        assert_eq!(a.classify(&test[0].backbone).unwrap(), b.classify(&test[0].backbone).unwrap());
    }

    #[test]
    fn single_class_dataset_converges() {
        let train = toy(48, vec![4], 12);
        let cfg = ClassifierTrainConfig {
            epochs: 15,
            ..ClassifierTrainConfig::default()
        };
        let (m, report) = train_classifier(&train, ClassifierConfig::new(toy_vocab()), &cfg).unwrap();
        assert!(report.missing.contains(&(Level::Class, 0)));
        assert!(!report.missing.contains(&(Level::Topology, 4)));
        let p = m.classify(&toy(1, vec![4], 13)[0].backbone).unwrap();
        assert!(p.level(Level::Class)[1] > 0.99, "{:?}", p.level(Level::Class));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FoldClassifier::new(ClassifierConfig::new(toy_vocab()), 5).unwrap();
        save_classifier(&m, dir.path(), 3, "toy").unwrap();
        let n = load_classifier(dir.path()).unwrap();
        let bb = toy(1, vec![0], 1).remove(0).backbone;
        assert_eq!(m.classify(&bb).unwrap(), n.classify(&bb).unwrap());
        assert!(matches!(load_classifier(&dir.path().join("missing")), Err(Error::Checkpoint(_))));
    }
}
