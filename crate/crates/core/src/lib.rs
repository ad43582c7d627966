//! Saliency-guided pseudo label generation and evaluation.
//!
//! The pipeline turns per-class activation maps and class-agnostic saliency
//! maps into pseudo segmentation labels, scores them against ground truth,
//! and runs the usual study protocols on top: threshold sweeps, method x
//! saliency cross matrices and class-subset saliency conversion.
//!
//! Every dataset-level result is deterministic and independent of the
//! number of worker threads.

pub mod cam_math;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod metrics;
pub mod synthetic;
pub mod types;

pub use cam_math::{bce_loss, global_average_pool, normalize_cam, FeatureStack};
pub use error::{Error, Result};
pub use experiments::{
    cross_matrix, evaluate_dataset, evaluate_predictions, fuse_dataset, sweep, write_report,
    CrossMatrix, CsvReport, DirSource, Jobs, Sample, SampleSource, SweepGrid, SweepResult,
    SweepRow,
};
pub use fusion::{binarize_saliency, generate_pseudo_label, FusionConfig};
pub use metrics::{accumulate, finalize, saliency_error, MetricReport, SaliencyError};
pub use types::{
    validate_pair, ActivationStack, ConfusionMatrix, ImageLabelVector, LabelMask, LogitVector,
    SaliencyMap, IGNORE_LABEL,
};
