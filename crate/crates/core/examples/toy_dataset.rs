//! Generate a labeled toy dataset, filter it and write it to disk.
//!
//! cargo run --example toy_dataset -- /tmp/toy

use backbone_flow::data::toy::{generate_toy_dataset, toy_cluster_key, ToySpec, TOPOLOGY_NAMES};
use backbone_flow::data::{apply_filters, load_dataset, save_dataset, DatasetManifest, FilterConfig, VocabTables};
use backbone_flow::geom::radius_of_gyration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("toy_dataset").display().to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let records = generate_toy_dataset(120, &ToySpec::default(), &mut rng)?;

    let outcome = apply_filters(records, &FilterConfig::default());
    println!("kept {} / rejected {}", outcome.kept.len(), outcome.rejected.len());
    for r in outcome.rejected.iter().take(3) {
        println!("  {} rejected: {:?}", r.record.source_id, r.reasons);
    }

    for r in outcome.kept.iter().take(5) {
        let t = r.labels[0].topology.unwrap() as usize;
        println!("{}  {:<28} L={} Rg={:.1} A", r.source_id, TOPOLOGY_NAMES[t], r.len(), radius_of_gyration(&r.backbone));
    }

    let keys: Vec<String> = outcome.kept.iter().map(toy_cluster_key).collect();
    let manifest = DatasetManifest::build(&outcome.kept, &keys, VocabTables::toy())?;
    save_dataset(&outcome.kept, &manifest, out.as_ref())?;
    let (back, m) = load_dataset(out.as_ref())?;
    println!("wrote {} records in {} clusters to {out}", back.len(), m.cluster_members().len());
    Ok(())
}
