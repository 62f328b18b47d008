//! Structure data: procedural toy sets, PDB ingestion, filters, dataset files and
//! cluster-balanced sampling.

pub mod dataset;
pub mod filters;
pub mod pdb;
pub mod toy;

pub use dataset::{crop_to_common_length, load_dataset, save_dataset, ClusterBalancedIterator, DatasetManifest, VocabTables};
pub use filters::{apply_filters, FilterConfig, FilterOutcome, RejectReason};
pub use pdb::{ingest_calpha, parse_calpha, write_calpha_pdb, IngestedChain};
pub use toy::{generate_toy_dataset, random_coil, toy_cluster_key, toy_vocab, ToySpec};
