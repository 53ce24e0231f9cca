//! Dynamic metric learning on hierarchical label spaces.
//!
//! A single embedding space is trained to discriminate classes at several
//! nested semantic scales at once (fine, middle, coarse, ...). The crate
//! provides:
//!
//! - [`taxonomy`]: hierarchical label spaces, datasets and a synthetic
//!   nested-cluster generator,
//! - [`geometry`]: unit embeddings, cosine similarity and a small embedding
//!   network with analytic gradients,
//! - [`proxies`]: fine-scale class proxies shared by every coarser scale,
//! - [`losses`]: the cross-scale loss (classification, pair and joint forms)
//!   and six baseline losses under multi-scale supervision,
//! - [`trainer`]: hierarchical batch sampling, SGD with momentum, training
//!   diagnostics and checkpoints,
//! - [`evaluator`]: level-blind retrieval evaluation (CMC, mAP, ASI) per scale,
//! - [`experiment`]: config files and the `gen` / `train` / `eval` / `study`
//!   commands behind the `dyml` binary.
//!
//! Scale indices are zero-based and run from the finest scale (`0`) to the
//! coarsest (`M - 1`).

pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod proxies;
pub mod taxonomy;
pub mod trainer;

pub use error::{DymlError, Result};
