//! Waterbody-aware semantic segmentation.
//!
//! A two-path network whose aquatic and non-aquatic branches are refined by
//! feature modulation, trained on a small reverse-mode tape (`graph`) in
//! double precision. Around it sit the pieces needed to study such a model:
//! confusion-matrix metrics with aquatic-only scores, label and annotator
//! statistics, mode-of-segmentation maps, the texture patch benchmark
//! (`atex`), a procedural scene generator for fixtures and the `aquanet`
//! command line.

pub mod ablation;
pub mod analytics;
pub mod atex;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod mask;
pub mod metrics;
pub mod modulation;
pub mod network;
pub mod params;
pub mod synthgen;
pub mod taxonomy;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
