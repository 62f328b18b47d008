//! Fine-tune low-rank adapters on a shifted distribution and merge them.

use backbone_flow::data::toy::{generate_toy_dataset, toy_vocab, ToySpec};
use backbone_flow::data::ClusterBalancedIterator;
use backbone_flow::geom::FoldLabel;
use backbone_flow::model::{Denoiser, LoraConfig, ModelConfig, ModelInput};
use backbone_flow::objective::training::{TrainConfig, Trainer};
use candle_core::DType;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let helical = ToySpec { topologies: vec![0, 1, 2, 3], ..ToySpec::with_length(48) };
    let sheets = ToySpec { topologies: vec![4, 5], ..ToySpec::with_length(48) };
    let base_data = generate_toy_dataset(64, &helical, &mut rng)?;
    let new_data = generate_toy_dataset(64, &sheets, &mut rng)?;
    let clusters = ClusterBalancedIterator::from_clusters((0..64).map(|i| vec![i]).collect())?;
    let cfg = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };

    let mut trainer = Trainer::new(Denoiser::new(ModelConfig::tiny(toy_vocab()), DType::F32, 0)?, cfg.clone())?;
    trainer.fit(&base_data, &clusters, 80, &mut rng, |_, _| Ok(()))?;
    let mut model = trainer.into_model();
    let base_sum = model.base_checksum()?;
    let total = model.parameter_count();

    model.apply_lora(LoraConfig { rank: 4, alpha: 8.0 })?;
    let adapter_params: usize = model.trainable_vars().iter().map(|v| v.elem_count()).sum();
    println!("adapters: {adapter_params} trainable of {total} base parameters");

    let mut trainer = Trainer::new(model, cfg)?;
    let reports = trainer.fit(&new_data, &clusters, 80, &mut rng, |_, _| Ok(()))?;
    println!("adapter loss {:.3} -> {:.3}", reports[0].cfm, reports.last().unwrap().cfm);
    let adapted = trainer.into_model();
    println!("base weights untouched: {}", adapted.base_checksum()? == base_sum);

    let x = Array3::from_shape_simple_fn((1, 48, 3), || rng.sample::<f64, _>(StandardNormal));
    let labels = [FoldLabel::null()];
    let input = ModelInput::new(&x, &[0.7], &labels);
    let before = adapted.predict_velocity(&input)?;
    let mut merged = adapted.deep_clone()?;
    merged.merge_lora()?;
    let after = merged.predict_velocity(&input)?;
    let diff = before.iter().zip(after.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("merged vs adapted max |dv| = {diff:.2e}");
    Ok(())
}
