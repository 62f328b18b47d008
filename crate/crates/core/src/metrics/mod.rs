//! Evaluation metrics for generated structure sets.

pub mod distribution;
pub mod equivariance;
pub mod report;
pub mod sse;
pub mod structure;

pub use distribution::{
    fjsd, fjsd_at, fjsd_mean, fold_score, fold_score_at, fpsd, reclassification_probability, FeatureSetStats,
    Reclassification,
};
pub use equivariance::{equivariance_analysis, EquivarianceReport};
pub use report::{LengthBucket, StructureSetReport};
pub use sse::{secondary_structure, SecondaryStructure, SseAssignment, SseFractions};
pub use structure::{cluster_diversity, designability, novelty, Diversity, Novelty};
