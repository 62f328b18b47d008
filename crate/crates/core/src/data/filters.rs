//! Structural and confidence filters.
//!
//! Checks run in the order length, structure (coil fraction, radius of gyration),
//! confidence; every failing check is reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{radius_of_gyration, StructureRecord};
use crate::metrics::secondary_structure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_coil_fraction: f64,
    /// Å
    pub max_rgyr: f64,
    pub min_mean_confidence: f64,
    pub max_confidence_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_len: 32,
            max_len: 256,
            max_coil_fraction: 0.5,
            max_rgyr: 30.0,
            min_mean_confidence: 85.0,
            max_confidence_std: 15.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len >= self.max_len {
            return Err(Error::Config(format!(
                "filter lengths must satisfy 0 < min_len < max_len, got {} / {}",
                self.min_len, self.max_len
            )));
        }
        for (name, v) in [
            ("max_coil_fraction", self.max_coil_fraction),
            ("max_rgyr", self.max_rgyr),
            ("min_mean_confidence", self.min_mean_confidence),
            ("max_confidence_std", self.max_confidence_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    TooShort,
    TooLong,
    CoilFraction,
    RadiusOfGyration,
    LowMeanConfidence,
    HighConfidenceStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub record: StructureRecord,
    pub reasons: Vec<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<StructureRecord>,
    pub rejected: Vec<Rejected>,
}

/// Reasons `record` fails `cfg`; empty when it passes.
pub fn check_record(record: &StructureRecord, cfg: &FilterConfig) -> Vec<RejectReason> {
    let mut reasons = Vec::new();
    let l = record.len();
    if l < cfg.min_len {
        reasons.push(RejectReason::TooShort);
    }
    if l > cfg.max_len {
        reasons.push(RejectReason::TooLong);
    }
    if l >= 5 {
        let coil = secondary_structure(&record.backbone)
            .map(|a| a.fractions.coil)
            .unwrap_or(1.0);
        if coil > cfg.max_coil_fraction {
            reasons.push(RejectReason::CoilFraction);
        }
    }
    if radius_of_gyration(&record.backbone) > cfg.max_rgyr {
        reasons.push(RejectReason::RadiusOfGyration);
    }
    if let Some(conf) = &record.confidence {
        let n = conf.len() as f64;
        let mean = conf.iter().sum::<f64>() / n;
        let std = (conf.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
        if mean < cfg.min_mean_confidence {
            reasons.push(RejectReason::LowMeanConfidence);
        }
        if std > cfg.max_confidence_std {
            reasons.push(RejectReason::HighConfidenceStd);
        }
    }
    reasons
}

pub fn apply_filters(records: Vec<StructureRecord>, cfg: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for record in records {
        let reasons = check_record(&record, cfg);
        if reasons.is_empty() {
            out.kept.push(record);
        } else {
            out.rejected.push(Rejected { record, reasons });
        }
    }
    out
}
