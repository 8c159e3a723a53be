//! Spatial-commonsense probing harness.
//!
//! The crate builds the object-scale and person/object positional benchmarks
//! from versioned data files, renders probe prompts, drives external model
//! adapters through a batch file-exchange contract, judges generated images
//! from detector boxes and depth maps, and scores predictions for accuracy,
//! macro-F1 and logical consistency.
//!
//! Module map:
//!
//! * [`benchmark`] - dataset builders (scale pairs, positional scenarios,
//!   generalized scenarios, yes/no questions).
//! * [`prompts`] - templates, candidate pools, object-disjoint folds and
//!   cross-validated candidate selection.
//! * [`probing`] - the adapter contract and the probe runners built on it.
//! * [`geometry`] - box selection, depth-compensated scale scores and
//!   angle-window relation rules.
//! * [`metrics`] - accuracy/F1 with imputation, symmetry and transitivity,
//!   per-object ratios, annotator aggregation, text tables.
//! * [`cli`] - the `spatialprobe` command-line front end.

pub mod benchmark;
pub mod cli;
pub mod data;
pub mod geometry;
pub mod metrics;
pub mod probing;
pub mod prompts;
pub mod synthetic;
pub mod text;

pub use benchmark::{
    Dimension, GeneralizedScenario, ObjectEntity, PositionScenario, QaInstance, ScaleGold,
    ScaleInstance, SubtermLexicon,
};
pub use geometry::{BoundingBox, DepthMap, DetectionRecord, ScaleJudgment, SpatialRelation};
pub use metrics::{ConsistencyReport, EvalReport};
pub use probing::{AdapterRequest, AdapterResponse, Prediction};

/// Version string recorded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
