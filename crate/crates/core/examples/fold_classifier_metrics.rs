//! Train the fold classifier, then score structure sets with FPSD, fold score and fJSD.

use backbone_flow::classifier::{accuracy, train_classifier, ClassifierConfig, ClassifierTrainConfig};
use backbone_flow::data::toy::{generate_toy_dataset, random_coil, toy_vocab, ToySpec};
use backbone_flow::geom::{Backbone, Level};
use backbone_flow::metrics::{fjsd_mean, fold_score_at, fpsd, FeatureSetStats};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train = generate_toy_dataset(240, &ToySpec::default(), &mut rng)?;
    let test = generate_toy_dataset(120, &ToySpec::default(), &mut rng)?;
    let cfg = ClassifierTrainConfig { epochs: 10, ..ClassifierTrainConfig::default() };
    let (clf, report) = train_classifier(&train, ClassifierConfig::new(toy_vocab()), &cfg)?;
    println!("epoch losses {:.3?}", report.epoch_losses);
    for level in Level::ALL {
        println!("{level} accuracy {:.3}", accuracy(&clf, &test, level, &report.missing)?);
    }

    let reference: Vec<Backbone> = test.iter().map(|r| r.backbone.clone()).collect();
    let ref_preds = clf.classify_batch(&reference)?;
    let ref_stats = FeatureSetStats::from_predictions(&ref_preds)?;

    let fresh: Vec<Backbone> = generate_toy_dataset(120, &ToySpec::default(), &mut rng)?
        .into_iter()
        .map(|r| r.backbone)
        .collect();
    let only_helical: Vec<Backbone> = generate_toy_dataset(120, &ToySpec { topologies: vec![2, 3], ..ToySpec::default() }, &mut rng)?
        .into_iter()
        .map(|r| r.backbone)
        .collect();
    let coils: Vec<Backbone> = (0..120).map(|_| random_coil(64, &mut rng)).collect();

    println!("{:<14} {:>8} {:>8} {:>8}", "set", "FPSD", "fS(T)", "fJSD");
    for (name, set) in [("fresh toy", &fresh), ("helical only", &only_helical), ("random coils", &coils)] {
        let preds = clf.classify_batch(set)?;
        let d = fpsd(&FeatureSetStats::from_predictions(&preds)?, &ref_stats)?;
        let fs = fold_score_at(&preds, Level::Topology)?;
        let js = fjsd_mean(&preds, &ref_preds)?;
        println!("{name:<14} {d:>8.3} {fs:>8.3} {js:>8.3}");
    }
    Ok(())
}
