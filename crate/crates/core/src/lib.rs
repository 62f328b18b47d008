//! Flow-matching generation of protein Cα backbones.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geom`]: backbones, fold labels, rotations, Kabsch superposition, distance bins.
//! - [`objective`]: interpolant, time sampling, label dropout, CFM and distogram losses, training step.
//! - [`model`]: the pair-biased conditioned transformer denoiser, LoRA adapters, checkpoints.
//! - [`sampler`]: time grid, stochasticity schedules, guidance and the Euler–Maruyama integrator.
//! - [`classifier`]: rotation-invariant relational graph network for fold classes.
//! - [`metrics`]: FPSD, fold score, fJSD, re-classification, secondary structure, diversity,
//!   novelty and equivariance analysis.
//! - [`data`]: toy structure generator, PDB ingestion, filters, cluster sampling, dataset files.
//! - [`cli`]: the `bbflow` command-line driver.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod sampler;

pub use error::{Error, Result};
