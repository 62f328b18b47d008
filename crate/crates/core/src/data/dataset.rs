//! Dataset container: `coords.bin` (little-endian f64) plus `manifest.json`.
//!
//! Each record occupies `3·len` coordinate values followed by `len` confidence
//! values when it has them. The manifest stores element offsets so a truncated
//! or mislabeled file fails to load instead of silently shifting records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Backbone, FoldLabel, LabelVocab, StructureRecord};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Human-readable names for each label id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VocabTables {
    pub class: Vec<String>,
    pub architecture: Vec<String>,
    pub topology: Vec<String>,
}

impl VocabTables {
    pub fn vocab(&self) -> LabelVocab {
        LabelVocab::new(self.class.len(), self.architecture.len(), self.topology.len())
    }

    /// Tables for the toy generator.
    pub fn toy() -> Self {
        use crate::data::toy::{ARCHITECTURE_NAMES, CLASS_NAMES, TOPOLOGY_NAMES};
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            class: own(&CLASS_NAMES),
            architecture: own(&ARCHITECTURE_NAMES),
            topology: own(&TOPOLOGY_NAMES),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub len: usize,
    /// Element (not byte) offset into `coords.bin`.
    pub offset: usize,
    pub has_confidence: bool,
    pub labels: Vec<FoldLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub records: Vec<RecordEntry>,
    /// Record id → cluster key.
    pub clusters: BTreeMap<String, String>,
    pub vocab: VocabTables,
}

impl DatasetManifest {
    /// Manifest for `records` with the given per-record cluster keys.
    pub fn build(records: &[StructureRecord], cluster_keys: &[String], vocab: VocabTables) -> Result<Self> {
        if cluster_keys.len() != records.len() {
            return Err(Error::Shape(format!(
                "{} cluster keys for {} records",
                cluster_keys.len(),
                records.len()
            )));
        }
        let mut entries = Vec::with_capacity(records.len());
        let mut clusters = BTreeMap::new();
        let mut offset = 0;
        for (r, key) in records.iter().zip(cluster_keys) {
            if clusters.insert(r.source_id.clone(), key.clone()).is_some() {
                return Err(Error::Format(format!("duplicate record id {}", r.source_id)));
            }
            let has_confidence = r.confidence.is_some();
            entries.push(RecordEntry {
                id: r.source_id.clone(),
                len: r.len(),
                offset,
                has_confidence,
                labels: r.labels.clone(),
            });
            offset += r.len() * if has_confidence { 4 } else { 3 };
        }
        Ok(Self {
            format_version: DATASET_FORMAT_VERSION,
            records: entries,
            clusters,
            vocab,
        })
    }

    /// Every record in exactly one cluster and offsets contiguous.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset version {} not supported (expected {})",
                self.format_version, DATASET_FORMAT_VERSION
            )));
        }
        if self.clusters.len() != self.records.len() {
            return Err(Error::Format("cluster table does not match record index".into()));
        }
        let mut offset = 0;
        for e in &self.records {
            if !self.clusters.contains_key(&e.id) {
                return Err(Error::Format(format!("record {} has no cluster", e.id)));
            }
            if e.offset != offset {
                return Err(Error::Format(format!("record {} offset {} != {offset}", e.id, e.offset)));
            }
            if e.len < 2 {
                return Err(Error::Format(format!("record {} has length {}", e.id, e.len)));
            }
            offset += e.len * if e.has_confidence { 4 } else { 3 };
        }
        Ok(())
    }

    fn total_elements(&self) -> usize {
        self.records
            .iter()
            .map(|e| e.len * if e.has_confidence { 4 } else { 3 })
            .sum()
    }

    /// Cluster key → record indices, keys sorted.
    pub fn cluster_members(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.records.iter().enumerate() {
            out.entry(self.clusters[&e.id].clone()).or_default().push(i);
        }
        out
    }
}

pub fn save_dataset(records: &[StructureRecord], manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    manifest.validate()?;
    if manifest.records.len() != records.len() {
        return Err(Error::Format("manifest does not describe these records".into()));
    }
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(manifest.total_elements() * 8);
    for (r, e) in records.iter().zip(&manifest.records) {
        if r.source_id != e.id || r.len() != e.len || r.confidence.is_some() != e.has_confidence {
            return Err(Error::Format(format!("record {} does not match manifest entry", r.source_id)));
        }
        for v in r.backbone.coords().iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(c) = &r.confidence {
            for v in c {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(dir.join("coords.bin"), blob)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<StructureRecord>, DatasetManifest)> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Format(format!("missing {}", manifest_path.display())));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    manifest.validate()?;
    let blob = fs::read(dir.join("coords.bin"))?;
    if blob.len() % 8 != 0 || blob.len() / 8 != manifest.total_elements() {
        return Err(Error::Format(format!(
            "coords.bin holds {} bytes, manifest expects {}",
            blob.len(),
            manifest.total_elements() * 8
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut records = Vec::with_capacity(manifest.records.len());
    for e in &manifest.records {
        let coords = values[e.offset..e.offset + 3 * e.len].to_vec();
        let bb = Backbone::new(Array2::from_shape_vec((e.len, 3), coords).map_err(|err| Error::Format(err.to_string()))?)?;
        let conf = e
            .has_confidence
            .then(|| values[e.offset + 3 * e.len..e.offset + 4 * e.len].to_vec());
        records.push(StructureRecord::new(bb, e.labels.clone(), e.id.clone(), conf)?);
    }
    Ok((records, manifest))
}

/// Epochs that visit every cluster once, in shuffled order, with one uniformly
/// chosen member per cluster.
#[derive(Debug, Clone)]
pub struct ClusterBalancedIterator {
    clusters: Vec<Vec<usize>>,
}

impl ClusterBalancedIterator {
    pub fn new(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        Ok(Self {
            clusters: manifest.cluster_members().into_values().collect(),
        })
    }

    pub fn from_clusters(clusters: Vec<Vec<usize>>) -> Result<Self> {
        if clusters.iter().any(|c| c.is_empty()) {
            return Err(Error::InvalidArgument("empty cluster".into()));
        }
        Ok(Self { clusters })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Record indices for one epoch.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.clusters.len()).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .map(|c| *self.clusters[c].choose(rng).expect("non-empty cluster"))
            .collect()
    }

    /// Endless stream of record indices, epoch after epoch.
    pub fn stream<'a, R: Rng + ?Sized>(&'a self, rng: &'a mut R) -> impl Iterator<Item = usize> + 'a {
        let mut buf: Vec<usize> = Vec::new();
        std::iter::from_fn(move || {
            if buf.is_empty() {
                if self.clusters.is_empty() {
                    return None;
                }
                buf = self.epoch(rng);
                buf.reverse();
            }
            buf.pop()
        })
    }
}

/// Contiguous random crops of every record to the shortest length in `records`,
/// so mixed-length draws can share one training batch.
pub fn crop_to_common_length<R: Rng + ?Sized>(records: &[&StructureRecord], rng: &mut R) -> Result<Vec<StructureRecord>> {
    let Some(l) = records.iter().map(|r| r.len()).min() else {
        return Ok(Vec::new());
    };
    records
        .iter()
        .map(|r| {
            if r.len() == l {
                return Ok((*r).clone());
            }
            let start = rng.gen_range(0..=r.len() - l);
            let coords = r.backbone.coords().slice(ndarray::s![start..start + l, ..]).to_owned();
            let conf = r.confidence.as_ref().map(|c| c[start..start + l].to_vec());
            StructureRecord::new(Backbone::new(coords)?, r.labels.clone(), r.source_id.clone(), conf)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{generate_toy_dataset, toy_cluster_key, ToySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_records(n: usize, rng: &mut ChaCha8Rng) -> Vec<StructureRecord> {
        (0..n)
            .map(|i| {
                let len = rng.gen_range(2..40);
                let pts: Vec<[f64; 3]> = (0..len)
                    .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample::<f64, _>(StandardNormal) * 1e3])
                    .collect();
                let conf = (i % 2 == 0).then(|| (0..len).map(|_| rng.gen_range(0.0..100.0)).collect());
                let labels = if i % 3 == 0 { vec![] } else { vec![FoldLabel::cat(1, 2, 3), FoldLabel::new(Some(0), None, None).unwrap()] };
                StructureRecord::new(Backbone::from_points(&pts).unwrap(), labels, format!("rec{i}"), conf).unwrap()
            })
            .collect()
    }

    fn manifest_for(records: &[StructureRecord]) -> DatasetManifest {
        let keys: Vec<String> = (0..records.len()).map(|i| format!("c{}", i % 7)).collect();
        DatasetManifest::build(records, &keys, VocabTables::toy()).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let records = random_records(100, &mut rng);
        let manifest = manifest_for(&records);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&records, &manifest, dir.path()).unwrap();
        let (back, m2) = load_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a, b);
            for (x, y) in a.backbone.coords().iter().zip(b.backbone.coords().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_length_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records = random_records(5, &mut rng);
        let manifest = manifest_for(&records);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&records, &manifest, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap();
        let mut m: DatasetManifest = serde_json::from_str(&text).unwrap();
        m.records[4].len += 1;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));

        // Truncated coordinate file.
        fs::write(&path, text).unwrap();
        let bin = dir.path().join("coords.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_for(&[]);
        save_dataset(&[], &m, dir.path()).unwrap();
        m.format_version = 99;
        fs::write(dir.path().join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_for(&[]);
        save_dataset(&[], &m, dir.path()).unwrap();
        let (r, m2) = load_dataset(dir.path()).unwrap();
        assert!(r.is_empty());
        assert_eq!(m2, m);
    }

    #[test]
    fn toy_manifest_clusters_cover_every_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records = generate_toy_dataset(40, &ToySpec::default(), &mut rng).unwrap();
        let keys: Vec<String> = records.iter().map(toy_cluster_key).collect();
        let m = DatasetManifest::build(&records, &keys, VocabTables::toy()).unwrap();
        let total: usize = m.cluster_members().values().map(|v| v.len()).sum();
        assert_eq!(total, 40);
        assert_eq!(m.vocab.vocab(), crate::data::toy::toy_vocab());
    }

    fn sized_clusters(sizes: &[usize]) -> ClusterBalancedIterator {
        let mut next = 0;
        let clusters = sizes
            .iter()
            .map(|&s| {
                let c: Vec<usize> = (next..next + s).collect();
                next += s;
                c
            })
            .collect();
        ClusterBalancedIterator::from_clusters(clusters).unwrap()
    }

    #[test]
    fn one_pick_per_cluster_per_epoch() {
        let it = sized_clusters(&[1, 10, 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let e = it.epoch(&mut rng);
            assert_eq!(e.len(), 3);
            assert_eq!(e.iter().filter(|&&i| i == 0).count(), 1);
            assert_eq!(e.iter().filter(|&&i| (1..11).contains(&i)).count(), 1);
            assert_eq!(e.iter().filter(|&&i| i >= 11).count(), 1);
        }
    }

    #[test]
    fn members_drawn_uniformly() {
        // 10^4 epochs, size-10 cluster: Binomial(10^4, 0.1) has std 30.
        let it = sized_clusters(&[1, 10, 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            for i in it.epoch(&mut rng) {
                if (1..11).contains(&i) {
                    counts[i - 1] += 1;
                }
            }
        }
        for c in counts {
            assert!((900..=1100).contains(&c), "{counts:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn epoch_length_is_cluster_count(sizes in proptest::collection::vec(1usize..20, 1..30), seed in 0u64..1000) {
            let it = sized_clusters(&sizes);
            let e = it.epoch(&mut ChaCha8Rng::seed_from_u64(seed));
            proptest::prop_assert_eq!(e.len(), sizes.len());
        }
    }

    #[test]
    fn fixed_seed_fixes_order_and_stream_spans_epochs() {
        let it = sized_clusters(&[3, 3, 3, 3]);
        let a = it.epoch(&mut ChaCha8Rng::seed_from_u64(5));
        let b = it.epoch(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s: Vec<usize> = it.stream(&mut rng).take(12).collect();
        for chunk in s.chunks(4) {
            let mut clusters: Vec<usize> = chunk.iter().map(|i| i / 3).collect();
            clusters.sort();
            assert_eq!(clusters, vec![0, 1, 2, 3]);
        }
    }
    #[test]
    fn crop_keeps_contiguous_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs = random_records(6, &mut rng);
        let refs: Vec<&StructureRecord> = recs.iter().collect();
        let min = recs.iter().map(|r| r.len()).min().unwrap();
        let out = crop_to_common_length(&refs, &mut rng).unwrap();
        for (o, r) in out.iter().zip(&recs) {
            assert_eq!(o.len(), min);
            let found = (0..=r.len() - min).any(|s| (0..min).all(|i| o.backbone.point(i) == r.backbone.point(s + i)));
            assert!(found);
            assert_eq!(o.labels, r.labels);
        }
    }
}
