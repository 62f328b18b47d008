//! How close a trained (non-equivariant) denoiser is to rotation equivariance.

use backbone_flow::data::toy::{generate_toy_dataset, toy_vocab, ToySpec};
use backbone_flow::data::ClusterBalancedIterator;
use backbone_flow::geom::Backbone;
use backbone_flow::metrics::equivariance_analysis;
use backbone_flow::model::{Denoiser, ModelConfig};
use backbone_flow::objective::training::{TrainConfig, Trainer};
use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let records = generate_toy_dataset(128, &ToySpec::with_length(48), &mut rng)?;
    let clusters = ClusterBalancedIterator::from_clusters((0..records.len()).map(|i| vec![i]).collect())?;
    let model = Denoiser::new(ModelConfig::tiny(toy_vocab()), DType::F32, 0)?;
    let mut trainer = Trainer::new(model, TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() })?;

    let data: Vec<Backbone> = records.iter().take(16).map(|r| r.backbone.clone()).collect();
    let grid = [0.1, 0.5, 0.9];
    for round in 0..3 {
        let r = equivariance_analysis(trainer.model(), &data, &grid, 8, &mut rng)?;
        println!("after {:>3} steps", trainer.step_count());
        for i in 0..grid.len() {
            println!("  t={:.1}  E={:6.2}  E_r={:6.2}  E_u={:6.2} A", r.t[i], r.e[i], r.e_r[i], r.e_u[i]);
        }
        if round < 2 {
            trainer.fit(&records, &clusters, 150, &mut rng, |_, _| Ok(()))?;
        }
    }
    Ok(())
}
