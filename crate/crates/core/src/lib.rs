//! Multi-scale out-of-distribution detection over per-layer activations.
//!
//! The crate reads activations from a portable [feature archive](feature_io),
//! fits a rectified one-class SVM on every early layer and a Gram deviation
//! detector on the last one, picks the layer whose detector best rejects a
//! tuning OOD set, and turns that layer's raw score into a calibrated
//! normality score.

pub mod activation;
pub mod error;
pub mod feature_io;
pub mod gram;
pub mod metrics;
pub mod ocsvm;
pub mod pipeline;
pub mod synth;

pub use activation::{rectify, reduce_spatial, ChannelVector};
pub use error::{Error, Result};
pub use feature_io::{
    read_layer_tensors, read_manifest, validate_archive, write_archive, Archive, Finding, Label,
    LayerDescriptor, LayerTensor, Manifest, SampleRecord, Shape, Split, ValidationReport,
};
pub use gram::{deviation, fit_gram_stats, gram_row_sums, GramStats};
pub use metrics::{
    auroc, detection_accuracy, evaluate, evaluate_oriented, tnr_at_tpr, MetricReport, ScoreSet,
};
pub use ocsvm::{default_gamma, fit_ocsvm, rbf_kernel, Gamma, OcsvmConfig, OcsvmFit, OcsvmModel};
pub use pipeline::{
    calibrate_threshold, decide, fit_bundle, layer_tnr, load_bundle, normality_score, save_bundle,
    score_archive, select_layer, Decision, DetectorBundle, DetectorKind, LayerDetectorReport,
    Orientation, PipelineConfig, ScoredSample,
};
pub use synth::{generate_archive, SynthConfig, SynthMode};
