//! Train the tiny denoiser on toy data and save a checkpoint.
//!
//! cargo run --release --example train_denoiser -- /tmp/ckpt 300

use backbone_flow::data::toy::{generate_toy_dataset, toy_vocab, ToySpec};
use backbone_flow::data::ClusterBalancedIterator;
use backbone_flow::model::{load_checkpoint, save_checkpoint, Denoiser, ModelConfig};
use backbone_flow::objective::training::{TrainConfig, Trainer};
use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("tiny_checkpoint").display().to_string());
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let records = generate_toy_dataset(256, &ToySpec::with_length(48), &mut rng)?;
    // One cluster per record here; real datasets group by similarity.
    let clusters = ClusterBalancedIterator::from_clusters((0..records.len()).map(|i| vec![i]).collect())?;

    let model = Denoiser::new(ModelConfig::tiny(toy_vocab()), DType::F32, 1)?;
    println!("{} parameters", model.parameter_count());
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg)?;
    let reports = trainer.fit(&records, &clusters, steps, &mut rng, |r, _| {
        if r.step % 50 == 0 {
            println!("step {:>5}  loss {:.4}  cfm {:.4}  distogram {:.4}", r.step, r.loss, r.cfm, r.distogram);
        }
        Ok(())
    })?;
    let head: f64 = reports.iter().take(20).map(|r| r.cfm).sum::<f64>() / 20.0;
    let tail: f64 = reports.iter().rev().take(20).map(|r| r.cfm).sum::<f64>() / 20.0;
    println!("cfm loss {head:.3} -> {tail:.3}");

    let model = trainer.into_model();
    save_checkpoint(&model, out.as_ref(), steps, "toy")?;
    let (reloaded, meta) = load_checkpoint(out.as_ref())?;
    assert_eq!(reloaded.base_checksum()?, model.base_checksum()?);
    println!("saved {out} (step {}, seed {})", meta.step, meta.seed);
    Ok(())
}
