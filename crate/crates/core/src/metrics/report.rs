//! Evaluation summary written as `report.json` plus `metrics.csv` and `length_buckets.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{radius_of_gyration, Backbone};
use crate::metrics::sse::secondary_structure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub length: usize,
    pub n: usize,
    pub helix: f64,
    pub strand: f64,
    pub coil: f64,
    /// Å
    pub mean_rgyr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StructureSetReport {
    pub n_samples: usize,
    /// Metric name to value, in insertion-independent order.
    pub metrics: BTreeMap<String, f64>,
    pub buckets: Vec<LengthBucket>,
}

impl StructureSetReport {
    /// Per-length secondary structure and compactness summary of `set`.
    pub fn from_structures(set: &[Backbone]) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<&Backbone>> = BTreeMap::new();
        for b in set {
            groups.entry(b.len()).or_default().push(b);
        }
        let mut buckets = Vec::new();
        for (length, members) in groups {
            let n = members.len() as f64;
            let (mut h, mut e, mut c, mut rg) = (0.0, 0.0, 0.0, 0.0);
            for b in &members {
                let f = secondary_structure(b)?.fractions;
                h += f.helix;
                e += f.strand;
                c += f.coil;
                rg += radius_of_gyration(b);
            }
            buckets.push(LengthBucket {
                length,
                n: members.len(),
                helix: h / n,
                strand: e / n,
                coil: c / n,
                mean_rgyr: rg / n,
            });
        }
        let mut report = Self {
            n_samples: set.len(),
            metrics: BTreeMap::new(),
            buckets,
        };
        if !set.is_empty() {
            let total = set.len() as f64;
            for (name, get) in [
                ("helix_fraction", (|b: &LengthBucket| b.helix) as fn(&LengthBucket) -> f64),
                ("strand_fraction", |b| b.strand),
                ("coil_fraction", |b| b.coil),
                ("mean_rgyr", |b| b.mean_rgyr),
            ] {
                let v = report.buckets.iter().map(|b| get(b) * b.n as f64).sum::<f64>() / total;
                report.insert(name, v);
            }
        }
        Ok(report)
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        w.write_record(["metric", "value"])?;
        for (k, v) in &self.metrics {
            w.write_record([k.clone(), v.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("length_buckets.csv"))?;
        for b in &self.buckets {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?)
    }
}
