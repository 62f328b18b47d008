use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;
use crate::classifier::{accuracy, load_classifier, save_classifier, train_classifier, ClassifierConfig, ClassifierTrainConfig, FoldPrediction};
use crate::data::{
    apply_filters, generate_toy_dataset, ingest_calpha, load_dataset, save_dataset, toy_cluster_key, write_calpha_pdb,
    ClusterBalancedIterator, DatasetManifest, FilterConfig, ToySpec, VocabTables,
};
use crate::geom::{Backbone, FoldLabel, Level, StructureRecord};
use crate::metrics::structure::{diversity_from_matrix, tm_matrix};
use crate::metrics::{
    equivariance_analysis, fjsd_at, fold_score_at, fpsd, novelty, reclassification_probability, FeatureSetStats,
    StructureSetReport,
};
use crate::model::{load_checkpoint, save_checkpoint, Denoiser, LoraConfig, ModelConfig};
use crate::objective::training::{StepReport, TrainConfig, Trainer};
use crate::sampler::{sample_backbones, GuidanceSpec, SamplerConfig, StochasticitySchedule, VectorField};

pub const SAMPLE_MANIFEST: &str = "samples.json";
const RUN_CONFIG: &str = "run_config.toml";

fn load_config_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let path = resolve_input(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_run_config<T: Serialize>(dir: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(RUN_CONFIG), text)?;
    Ok(())
}

fn dataset_id(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `C`, `C.A` or `C.A.T`; empty for the null label.
fn label_string(label: &FoldLabel) -> String {
    [label.class, label.architecture, label.topology]
        .iter()
        .map_while(|v| v.map(|x| x.to_string()))
        .collect::<Vec<_>>()
        .join(".")
}

fn parse_label_opt(s: &Option<String>) -> Result<FoldLabel> {
    match s.as_deref() {
        None | Some("") => Ok(FoldLabel::null()),
        Some(s) => FoldLabel::parse(s).map_err(|e| Error::Config(e.to_string())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToydataConfig {
    pub n: usize,
    pub seed: u64,
    pub spec: ToySpec,
    pub filter: Option<FilterConfig>,
}

impl Default for ToydataConfig {
    fn default() -> Self {
        Self {
            n: 300,
            seed: 0,
            spec: ToySpec::default(),
            filter: None,
        }
    }
}

pub(super) fn toydata(a: ToydataArgs) -> Result<()> {
    let mut cfg: ToydataConfig = load_config_file(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(l) = a.length {
        cfg.spec.length = l;
    }
    if let Some(t) = a.topologies {
        cfg.spec.topologies = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.filter && cfg.filter.is_none() {
        cfg.filter = Some(FilterConfig::default());
    }
    if cfg.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    cfg.spec.validate()?;
    if let Some(f) = &cfg.filter {
        f.validate()?;
    }
    let out = resolve_output(&a.out);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = generate_toy_dataset(cfg.n, &cfg.spec, &mut rng)?;
    if let Some(f) = &cfg.filter {
        let outcome = apply_filters(records, f);
        for r in &outcome.rejected {
            log::info!("rejected {}: {:?}", r.record.source_id, r.reasons);
        }
        records = outcome.kept;
    }
    let keys: Vec<String> = records.iter().map(toy_cluster_key).collect();
    let manifest = DatasetManifest::build(&records, &keys, VocabTables::toy())?;
    save_dataset(&records, &manifest, &out)?;
    write_run_config(&out, &cfg)?;
    println!("wrote {} records in {} clusters to {}", records.len(), manifest.cluster_members().len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub preset: String,
    /// Overrides the preset when given.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub steps: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            model: None,
            train: TrainConfig::default(),
            steps: 1000,
            checkpoint_every: 0,
            log_every: 50,
            seed: 0,
        }
    }
}

fn write_losses(path: &Path, reports: &[StepReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "cfm", "distogram", "self_conditioned"])?;
    for r in reports {
        w.write_record([
            r.step.to_string(),
            r.loss.to_string(),
            r.cfm.to_string(),
            r.distogram.to_string(),
            r.self_conditioned.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_training(
    trainer: &mut Trainer,
    records: &[StructureRecord],
    manifest: &DatasetManifest,
    steps: u64,
    log_every: u64,
    checkpoint: Option<(u64, &Path, &str)>,
    seed: u64,
) -> Result<Vec<StepReport>> {
    let clusters = ClusterBalancedIterator::new(manifest)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A_5EED);
    let start = trainer.step_count();
    trainer.fit(records, &clusters, steps, &mut data_rng, |r, tr| {
        if log_every > 0 && r.step % log_every == 0 {
            log::info!("step {} loss {:.5} cfm {:.5} distogram {:.5}", r.step, r.loss, r.cfm, r.distogram);
        }
        if let Some((every, dir, id)) = checkpoint {
            let done = r.step - start;
            if every > 0 && done.is_multiple_of(every) && done < steps {
                save_checkpoint(tr.model(), &dir.join("checkpoints").join(format!("step-{:06}", r.step)), r.step, id)?;
            }
        }
        Ok(())
    })
}

fn load_records(path: &Path) -> Result<(Vec<StructureRecord>, DatasetManifest, String)> {
    let path = resolve_input(path);
    if !path.join("manifest.json").exists() {
        return Err(Error::Format(format!("no dataset at {}", path.display())));
    }
    let (records, manifest) = load_dataset(&path)?;
    Ok((records, manifest, dataset_id(&path)))
}

pub(super) fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainRunConfig = load_config_file(a.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg.preset = p;
        cfg.model = None;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;

    let (records, manifest, id) = load_records(&a.data)?;
    let vocab = manifest.vocab.vocab();
    let model_cfg = match cfg.model.take() {
        Some(m) => m,
        None => ModelConfig::preset(&cfg.preset, vocab.clone())?,
    };
    if model_cfg.vocab != vocab {
        return Err(Error::Config("model vocabulary does not match the dataset".into()));
    }
    model_cfg.validate()?;
    cfg.model = Some(model_cfg.clone());

    let out = resolve_output(&a.out);
    write_run_config(&out, &cfg)?;
    let model = Denoiser::new(model_cfg, DType::F32, cfg.seed)?;
    log::info!("training {} parameters on {} records", model.parameter_count(), records.len());
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let reports = run_training(
        &mut trainer,
        &records,
        &manifest,
        cfg.steps,
        cfg.log_every,
        Some((cfg.checkpoint_every, &out, &id)),
        cfg.seed,
    )?;
    save_checkpoint(trainer.model(), &out, trainer.step_count(), &id)?;
    write_losses(&out.join("losses.csv"), &reports)?;
    if let Some(last) = reports.last() {
        println!("trained {} steps, final loss {:.5}; checkpoint in {}", last.step, last.loss, out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraRunConfig {
    pub checkpoint: PathBuf,
    pub lora: LoraConfig,
    pub train: TrainConfig,
    pub steps: u64,
    pub merge: bool,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for LoraRunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            lora: LoraConfig::default(),
            train: TrainConfig::default(),
            steps: 500,
            merge: false,
            log_every: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LoraReport {
    base_checksum_before: u64,
    base_checksum_after: u64,
    merged: bool,
}

pub(super) fn lora_finetune(a: LoraArgs) -> Result<()> {
    let mut cfg: LoraRunConfig = load_config_file(a.config.as_deref())?;
    cfg.checkpoint = resolve_input(&a.checkpoint);
    if let Some(r) = a.rank {
        cfg.lora.rank = r;
    }
    if let Some(s) = a.scale {
        cfg.lora.alpha = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.merge |= a.merge;
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;

    let (mut model, meta) = load_checkpoint(&cfg.checkpoint)?;
    let (records, manifest, id) = load_records(&a.data)?;
    if model.config().vocab != manifest.vocab.vocab() {
        return Err(Error::Config("checkpoint vocabulary does not match the dataset".into()));
    }
    let before = model.base_checksum()?;
    model.apply_lora(cfg.lora)?;
    let out = resolve_output(&a.out);
    write_run_config(&out, &cfg)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let reports = run_training(&mut trainer, &records, &manifest, cfg.steps, cfg.log_every, None, cfg.seed)?;
    let mut model = trainer.into_model();
    let after = model.base_checksum()?;
    if cfg.merge {
        model.merge_lora()?;
    }
    save_checkpoint(&model, &out, meta.step + cfg.steps, &id)?;
    write_losses(&out.join("losses.csv"), &reports)?;
    let report = LoraReport {
        base_checksum_before: before,
        base_checksum_after: after,
        merged: cfg.merge,
    };
    fs::write(out.join("lora_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "fine-tuned adapters for {} steps (base weights {}); checkpoint in {}",
        cfg.steps,
        if before == after { "unchanged" } else { "CHANGED" },
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRunConfig {
    pub checkpoint: PathBuf,
    pub bad_checkpoint: Option<PathBuf>,
    pub n: usize,
    pub length: usize,
    pub sampler: SamplerConfig,
    pub omega: f64,
    pub alpha: f64,
    /// `C`, `C.A` or `C.A.T`; absent for unconditional sampling.
    pub label: Option<String>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SampleRunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            bad_checkpoint: None,
            n: 16,
            length: 64,
            sampler: SamplerConfig::default(),
            omega: 1.0,
            alpha: 0.0,
            label: None,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Index of a sample directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub format_version: u32,
    pub checkpoint: String,
    pub length: usize,
    pub label: FoldLabel,
    pub omega: f64,
    pub alpha: f64,
    pub seed: u64,
    pub files: Vec<String>,
}

pub(super) fn sample(a: SampleArgs) -> Result<()> {
    let mut cfg: SampleRunConfig = load_config_file(a.config.as_deref())?;
    cfg.checkpoint = resolve_input(&a.checkpoint);
    if let Some(b) = &a.bad_checkpoint {
        cfg.bad_checkpoint = Some(resolve_input(b));
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(l) = a.length {
        cfg.length = l;
    }
    if let Some(g) = a.gamma {
        cfg.sampler.gamma = g;
    }
    if let Some(w) = a.omega {
        cfg.omega = w;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(gt) = a.gt {
        cfg.sampler.schedule = StochasticitySchedule {
            kind: gt.into(),
            ..cfg.sampler.schedule
        };
    }
    if a.ode {
        cfg.sampler.schedule = StochasticitySchedule {
            kind: crate::sampler::ScheduleKind::Zero,
            ..cfg.sampler.schedule
        };
        cfg.sampler.gamma = 0.0;
    }
    if let Some(s) = a.steps {
        cfg.sampler.n_steps = s;
    }
    cfg.sampler.self_conditioning |= a.self_cond;
    if let Some(l) = &a.label {
        cfg.label = Some(label_string(l));
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let label = parse_label_opt(&cfg.label)?;
    if cfg.n == 0 || cfg.batch_size == 0 || cfg.length < 2 {
        return Err(Error::Config("n, batch_size must be positive and length >= 2".into()));
    }
    if cfg.alpha > 0.0 && cfg.bad_checkpoint.is_none() {
        return Err(Error::Config("alpha > 0 needs a bad checkpoint for autoguidance".into()));
    }

    let (model, _) = load_checkpoint(&cfg.checkpoint)?;
    model.config().vocab.validate(&label)?;
    let bad = match &cfg.bad_checkpoint {
        Some(p) if cfg.alpha > 0.0 => Some(load_checkpoint(p)?.0),
        _ => None,
    };
    let guidance = GuidanceSpec {
        omega: cfg.omega,
        alpha: cfg.alpha,
        label,
        bad_model: bad.as_ref().map(|m| m as &dyn VectorField),
    };
    guidance.validate().map_err(|e| Error::Config(e.to_string()))?;

    let out = resolve_output(&a.out);
    write_run_config(&out, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut files = Vec::with_capacity(cfg.n);
    let remarks = vec![
        format!("label {}", label_string(&label)),
        format!("omega {} alpha {} gamma {}", cfg.omega, cfg.alpha, cfg.sampler.gamma),
        format!("seed {}", cfg.seed),
    ];
    while files.len() < cfg.n {
        let nb = cfg.batch_size.min(cfg.n - files.len());
        for bb in sample_backbones(&model, nb, cfg.length, &guidance, &cfg.sampler, &mut rng)? {
            let name = format!("sample_{:04}.pdb", files.len());
            write_calpha_pdb(&bb, &out.join(&name), None, &remarks)?;
            files.push(name);
        }
    }
    let manifest = SampleManifest {
        format_version: 1,
        checkpoint: cfg.checkpoint.display().to_string(),
        length: cfg.length,
        label,
        omega: cfg.omega,
        alpha: cfg.alpha,
        seed: cfg.seed,
        files,
    };
    fs::write(out.join(SAMPLE_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {} samples to {}", manifest.files.len(), out.display());
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Option<SampleManifest>> {
    let path = dir.join(SAMPLE_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}

/// Sample backbones in manifest order, or every `*.pdb` sorted by name.
fn read_samples(dir: &Path) -> Result<(Vec<Backbone>, Option<SampleManifest>)> {
    let manifest = read_manifest(dir)?;
    let files: Vec<PathBuf> = match &manifest {
        Some(m) => m.files.iter().map(|f| dir.join(f)).collect(),
        None => {
            let mut v: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pdb"))
                .collect();
            v.sort();
            v
        }
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples in {}", dir.display())));
    }
    let bbs = files
        .iter()
        .map(|f| ingest_calpha(f, None).map(|c| c.record.backbone))
        .collect::<Result<Vec<_>>>()?;
    Ok((bbs, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRunConfig {
    pub samples: PathBuf,
    pub reference: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub tm_threshold: f64,
}

/// Clusters summed over equal-length groups (chains shorter than 15 are skipped).
fn grouped_diversity(set: &[Backbone], threshold: f64) -> Result<Option<(f64, usize)>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<Backbone>> = Default::default();
    for b in set.iter().filter(|b| b.len() >= 15) {
        groups.entry(b.len()).or_default().push(b.clone());
    }
    let n: usize = groups.values().map(|g| g.len()).sum();
    if n == 0 {
        return Ok(None);
    }
    let mut clusters = 0;
    for g in groups.values() {
        clusters += diversity_from_matrix(&tm_matrix(g)?, threshold)?.n_clusters;
    }
    Ok(Some((clusters as f64 / n as f64, clusters)))
}

fn level_tag(level: Level) -> &'static str {
    match level {
        Level::Class => "C",
        Level::Architecture => "A",
        Level::Topology => "T",
    }
}

pub(super) fn eval(a: EvalArgs) -> Result<()> {
    let samples_dir = resolve_input(&a.samples);
    let cfg = EvalRunConfig {
        samples: samples_dir.clone(),
        reference: a.reference.as_deref().map(resolve_input),
        classifier: a.classifier.as_deref().map(resolve_input),
        tm_threshold: a.tm_threshold,
    };
    let out = a.out.as_deref().map(resolve_output).unwrap_or_else(|| samples_dir.join("eval"));
    let (samples, _) = read_samples(&samples_dir)?;
    let mut report = StructureSetReport::from_structures(&samples)?;
    if let Some((ratio, clusters)) = grouped_diversity(&samples, cfg.tm_threshold)? {
        report.insert("diversity_ratio", ratio);
        report.insert("diversity_clusters", clusters as f64);
    }
    let reference = match &cfg.reference {
        Some(p) => Some(load_records(p)?.0),
        None => None,
    };
    if let Some(refs) = &reference {
        let ref_bbs: Vec<Backbone> = refs.iter().filter(|r| r.len() >= 15).map(|r| r.backbone.clone()).collect();
        let usable: Vec<Backbone> = samples.iter().filter(|b| b.len() >= 15).cloned().collect();
        let nov = novelty(&usable, &ref_bbs)?;
        if nov.n_used > 0 {
            report.insert("novelty_mean_max_tm", nov.mean_max_tm);
        }
        report.insert("novelty_skipped", (nov.n_skipped + samples.len() - usable.len()) as f64);
    }
    if let Some(cp) = &cfg.classifier {
        let clf = load_classifier(cp)?;
        let preds = clf.classify_batch(&samples)?;
        for level in Level::ALL {
            if preds.len() >= 2 {
                report.insert(&format!("fold_score_{}", level_tag(level)), fold_score_at(&preds, level)?);
            }
        }
        if let Some(refs) = &reference {
            let ref_bbs: Vec<Backbone> = refs.iter().map(|r| r.backbone.clone()).collect();
            let ref_preds = clf.classify_batch(&ref_bbs)?;
            let d = fpsd(&FeatureSetStats::from_predictions(&preds)?, &FeatureSetStats::from_predictions(&ref_preds)?)?;
            report.insert("fpsd", d);
            let mut mean = 0.0;
            for level in Level::ALL {
                let v = fjsd_at(&preds, &ref_preds, level)?;
                report.insert(&format!("fjsd_{}", level_tag(level)), v);
                mean += v / 3.0;
            }
            report.insert("fjsd", mean);
        }
    }
    report.write(&out)?;
    write_run_config(&out, &cfg)?;
    for (k, v) in &report.metrics {
        println!("{k}\t{v}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReclassRow {
    level: String,
    mean_probability: f64,
    n_used: usize,
    n_skipped: usize,
}

pub(super) fn reclass(a: ReclassArgs) -> Result<()> {
    let samples_dir = resolve_input(&a.samples);
    let (samples, manifest) = read_samples(&samples_dir)?;
    let manifest = manifest.ok_or_else(|| Error::Format(format!("{} has no {SAMPLE_MANIFEST}", samples_dir.display())))?;
    let classifier = resolve_input(&a.classifier);
    let clf = load_classifier(&classifier)?;
    let preds: Vec<FoldPrediction> = clf.classify_batch(&samples)?;
    let targets = vec![manifest.label; preds.len()];
    let out = a.out.as_deref().map(resolve_output).unwrap_or_else(|| samples_dir.join("reclass"));
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("reclass.csv"))?;
    for level in Level::ALL {
        let r = reclassification_probability(&preds, &targets, level)?;
        let row = ReclassRow {
            level: level_tag(level).into(),
            mean_probability: r.mean_probability,
            n_used: r.n_used,
            n_skipped: r.n_skipped,
        };
        println!("{}\t{}\t(used {}, skipped {})", row.level, row.mean_probability, row.n_used, row.n_skipped);
        w.serialize(row)?;
    }
    w.flush()?;
    write_run_config(
        &out,
        &EvalRunConfig {
            samples: samples_dir,
            reference: None,
            classifier: Some(classifier),
            tm_threshold: 0.0,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivRunConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub n_mc: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
}

pub(super) fn equiv(a: EquivArgs) -> Result<()> {
    let cfg = EquivRunConfig {
        checkpoint: resolve_input(&a.checkpoint),
        data: resolve_input(&a.data),
        n_mc: a.n_mc,
        t_grid: a.t_grid.unwrap_or_else(|| (0..10).map(|i| i as f64 / 10.0).collect()),
        seed: a.seed,
    };
    let (model, _) = load_checkpoint(&cfg.checkpoint)?;
    let (records, _, _) = load_records(&cfg.data)?;
    let data: Vec<Backbone> = records.into_iter().map(|r| r.backbone).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = equivariance_analysis(&model, &data, &cfg.t_grid, cfg.n_mc, &mut rng)?;
    let out = resolve_output(&a.out);
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("equivariance.csv"))?;
    w.write_record(["t", "E", "E_r", "E_u"])?;
    for i in 0..report.t.len() {
        w.write_record([report.t[i], report.e[i], report.e_r[i], report.e_u[i]].map(|v| v.to_string()))?;
        println!("t={:.2}\tE={:.4}\tE_r={:.4}\tE_u={:.4}", report.t[i], report.e[i], report.e_r[i], report.e_u[i]);
    }
    w.flush()?;
    fs::write(out.join("equivariance.json"), serde_json::to_string_pretty(&report)?)?;
    write_run_config(&out, &cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyRunConfig {
    /// Defaults from the dataset vocabulary when absent.
    pub classifier: Option<ClassifierConfig>,
    pub train: ClassifierTrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifyReport {
    epoch_losses: Vec<f64>,
    train_accuracy: Vec<(String, f64)>,
}

pub(super) fn classify_train(a: ClassifyTrainArgs) -> Result<()> {
    let mut cfg: ClassifyRunConfig = load_config_file(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let (records, manifest, id) = load_records(&a.data)?;
    let model_cfg = cfg
        .classifier
        .take()
        .unwrap_or_else(|| ClassifierConfig::new(manifest.vocab.vocab()));
    model_cfg.validate()?;
    if model_cfg.vocab != manifest.vocab.vocab() {
        return Err(Error::Config("classifier vocabulary does not match the dataset".into()));
    }
    cfg.classifier = Some(model_cfg.clone());
    let out = resolve_output(&a.out);
    write_run_config(&out, &cfg)?;
    let (clf, rep) = train_classifier(&records, model_cfg, &cfg.train)?;
    save_classifier(&clf, &out, cfg.train.epochs as u64, &id)?;
    let mut w = csv::Writer::from_path(out.join("losses.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in rep.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    let mut acc = Vec::new();
    for level in Level::ALL {
        if let Ok(v) = accuracy(&clf, &records, level, &rep.missing) {
            println!("train accuracy {}: {:.3}", level_tag(level), v);
            acc.push((level_tag(level).to_string(), v));
        }
    }
    let report = ClassifyReport {
        epoch_losses: rep.epoch_losses,
        train_accuracy: acc,
    };
    fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
