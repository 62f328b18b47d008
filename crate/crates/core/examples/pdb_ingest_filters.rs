//! Round-trip a Cα chain through PDB text, detect chain breaks and apply the structural filters.
//!
//! cargo run --example pdb_ingest_filters -- [file.pdb]

use backbone_flow::data::pdb::{format_calpha_pdb, list_chains, parse_calpha};
use backbone_flow::data::toy::{generate_structure, random_coil, ToySpec};
use backbone_flow::data::{apply_filters, FilterConfig};
use backbone_flow::geom::{Backbone, StructureRecord};
use backbone_flow::metrics::secondary_structure;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => {
            let bb = generate_structure(8, &ToySpec::default(), &mut rng)?;
            let plddt: Vec<f64> = (0..bb.len()).map(|i| 88.0 + 10.0 * ((i as f64) / 9.0).cos().abs()).collect();
            format_calpha_pdb(&bb, Some(&plddt), &["toy beta-alpha-beta".into()])
        }
    };

    for chain in list_chains(&text)? {
        let ing = parse_calpha(&text, Some(chain), "input")?;
        let sse = secondary_structure(&ing.record.backbone)?;
        let codes: String = sse.states.iter().map(|s| s.code()).collect();
        println!("chain {chain}: {} residues, breaks at {:?}", ing.record.len(), ing.breaks);
        println!("  {codes}");
        println!(
            "  helix {:.2} strand {:.2} coil {:.2}",
            sse.fractions.helix, sse.fractions.strand, sse.fractions.coil
        );
    }

    // A small batch with one failure per filter.
    let ok = parse_calpha(&text, None, "ok")?.record;
    let short = StructureRecord::new(Backbone::new(ok.backbone.coords().slice(ndarray::s![..20, ..]).to_owned())?, vec![], "short", None)?;
    let coil = StructureRecord::new(random_coil(80, &mut rng), vec![], "coil", None)?;
    let unsure = StructureRecord::new(ok.backbone.clone(), vec![], "low-plddt", Some(vec![60.0; ok.len()]))?;
    let out = apply_filters(vec![ok, short, coil, unsure], &FilterConfig::default());
    for r in &out.kept {
        println!("kept     {}", r.source_id);
    }
    for r in &out.rejected {
        println!("rejected {:<10} {:?}", r.record.source_id, r.reasons);
    }
    Ok(())
}
