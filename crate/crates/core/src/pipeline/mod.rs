//! Multi-scale detection: one detector per layer, TNR-driven layer
//! selection and rank-calibrated normality scores.
//!
//! Every layer but the last declared one gets a one-class SVM on rectified,
//! spatially reduced features; the last layer gets the Gram deviation
//! detector. Each detector is calibrated on ID validation data at the TPR
//! target, and the layer whose calibrated detector rejects the most tuning
//! OOD samples produces the final normality score.

mod bundle;
mod scores;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::svm_features;
use crate::error::{Error, Result};
use crate::feature_io::{Archive, Label, LayerDescriptor, LayerTensor, SampleRecord, Split};
use crate::gram::{self, GramStats};
use crate::metrics::required_count;
use crate::ocsvm::{fit_ocsvm, OcsvmConfig, OcsvmModel, SolverReport};

pub use bundle::{load_bundle, save_bundle, BUNDLE_FILE};
pub use scores::{read_scores_csv, write_scores_csv, SCORE_CSV_HEADER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Decision threshold: a sample is ID when its normality exceeds `1 − theta`.
    pub theta: f64,
    pub svm_rectify_c: f64,
    pub gram_rectify_c: f64,
    pub ocsvm: OcsvmConfig,
    pub gram_p: u32,
    /// Use this layer without OOD-driven selection.
    pub forced_layer: Option<u32>,
    pub tpr_target: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 0.95,
            svm_rectify_c: 1.0,
            gram_rectify_c: 1.0,
            ocsvm: OcsvmConfig::default(),
            gram_p: 1,
            forced_layer: None,
            tpr_target: 0.95,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be in (0, 1), got {v}"
                )))
            }
        };
        open_unit("theta", self.theta)?;
        open_unit("tpr_target", self.tpr_target)?;
        for (name, c) in [
            ("svm_rectify_c", self.svm_rectify_c),
            ("gram_rectify_c", self.gram_rectify_c),
        ] {
            if !c.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite, got {c}"
                )));
            }
        }
        if self.gram_p < 1 {
            return Err(Error::InvalidConfig("gram_p must be at least 1".into()));
        }
        self.ocsvm.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Ocsvm,
    Gram,
}

impl DetectorKind {
    pub fn orientation(self) -> Orientation {
        match self {
            DetectorKind::Ocsvm => Orientation::HigherIsId,
            DetectorKind::Gram => Orientation::HigherIsOod,
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Gram => "gram",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsId,
    HigherIsOod,
}

impl Orientation {
    /// True if `score` falls on the ID side of threshold `t` (inclusive).
    pub fn accepts(self, score: f64, t: f64) -> bool {
        match self {
            Orientation::HigherIsId => score >= t,
            Orientation::HigherIsOod => score <= t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Id => "ID",
            Decision::Ood => "OOD",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerDetector {
    Ocsvm(OcsvmModel),
    Gram(GramStats),
}

impl LayerDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            LayerDetector::Ocsvm(_) => DetectorKind::Ocsvm,
            LayerDetector::Gram(_) => DetectorKind::Gram,
        }
    }
}

/// Calibration data for one layer: the TPR-target threshold and the sorted
/// raw scores of the ID validation samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub layer_index: u32,
    pub kind: DetectorKind,
    pub threshold: f64,
    pub validation_scores: Vec<f64>,
}

impl LayerCalibration {
    /// Fraction of validation scores strictly more OOD-like than `raw`.
    pub fn normality(&self, raw: f64) -> f64 {
        let scores = &self.validation_scores;
        let more_ood = match self.kind.orientation() {
            Orientation::HigherIsId => scores.partition_point(|&v| v < raw),
            Orientation::HigherIsOod => scores.len() - scores.partition_point(|&v| v <= raw),
        };
        more_ood as f64 / scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDetectorReport {
    pub layer_index: u32,
    pub detector_kind: DetectorKind,
    pub calibration_threshold: f64,
    pub tnr_on_tune: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub raw_score: f64,
    pub normality: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBundle {
    pub model_id: String,
    pub layers: Vec<LayerDescriptor>,
    pub config: PipelineConfig,
    /// One detector per layer, indexed by layer.
    pub detectors: Vec<LayerDetector>,
    pub calibration: Vec<LayerCalibration>,
    /// Solver diagnostics for the SVM layers, indexed by layer.
    pub solver_reports: Vec<SolverReport>,
    pub layer_reports: Vec<LayerDetectorReport>,
    pub selected_layer: Option<u32>,
}

impl DetectorBundle {
    pub fn selected_kind(&self) -> Option<DetectorKind> {
        self.selected_layer
            .and_then(|l| self.detectors.get(l as usize))
            .map(LayerDetector::kind)
    }

    pub fn detector(&self, layer_index: u32) -> Result<&LayerDetector> {
        self.detectors
            .get(layer_index as usize)
            .ok_or(Error::UnknownLayer(layer_index))
    }

    /// Raw score of `tensor` under its layer's detector.
    pub fn raw_score(&self, tensor: &LayerTensor) -> Result<f64> {
        tensor.ensure_finite()?;
        match self.detector(tensor.layer_index)? {
            LayerDetector::Ocsvm(model) => {
                model.decision(&svm_features(tensor, self.config.svm_rectify_c)?.values)
            }
            LayerDetector::Gram(stats) => {
                gram::deviation(stats, tensor, self.config.gram_rectify_c)
            }
        }
    }

    fn check_layers(&self, archive: &Archive, what: &str) -> Result<()> {
        check_same_layers(&self.layers, &archive.manifest().layers, what)
    }
}

fn check_same_layers(
    expected: &[LayerDescriptor],
    actual: &[LayerDescriptor],
    what: &str,
) -> Result<()> {
    if expected.len() != actual.len() {
        return Err(Error::LayerMismatch(format!(
            "{what} declares {} layers, expected {}",
            actual.len(),
            expected.len()
        )));
    }
    for (e, a) in expected.iter().zip(actual) {
        if e != a {
            return Err(Error::LayerMismatch(format!(
                "{what} layer {}: {a:?} differs from {e:?}",
                a.index
            )));
        }
    }
    Ok(())
}

fn require_id_only(archive: &Archive) -> Result<()> {
    match archive
        .manifest()
        .samples
        .iter()
        .find(|s| s.label != Label::Id)
    {
        Some(s) => Err(Error::LabelViolation {
            sample_id: s.id.clone(),
            label: s.label.to_string(),
        }),
        None => Ok(()),
    }
}

fn read_split(
    archive: &Archive,
    layer: u32,
    split: Split,
    what: &'static str,
) -> Result<Vec<LayerTensor>> {
    let tensors = archive.read_layer_tensors(layer, |s: &SampleRecord| s.split == split)?;
    if tensors.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    for t in &tensors {
        t.ensure_finite()?;
    }
    Ok(tensors)
}

/// Raw-score threshold whose ID side holds the smallest fraction of
/// validation scores that is still at least `tpr_target`. The ID side
/// includes equality.
pub fn calibrate_threshold(
    scores: &[f64],
    orientation: Orientation,
    tpr_target: f64,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("calibration needs at least one score"));
    }
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "TPR target must be in (0, 1], got {tpr_target}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let needed = required_count(n, tpr_target);
    Ok(match orientation {
        Orientation::HigherIsId => sorted[n - needed],
        Orientation::HigherIsOod => sorted[needed - 1],
    })
}

/// `TN / (TN + FP)`.
pub fn true_negative_rate(true_negatives: usize, false_positives: usize) -> Result<f64> {
    let total = true_negatives + false_positives;
    if total == 0 {
        return Err(Error::EmptyInput("TNR is undefined without negatives"));
    }
    Ok(true_negatives as f64 / total as f64)
}

struct FittedLayer {
    detector: LayerDetector,
    calibration: LayerCalibration,
    solver: Option<SolverReport>,
}

fn fit_layer(
    train: &Archive,
    validation: &Archive,
    layer: &LayerDescriptor,
    last: bool,
    config: &PipelineConfig,
) -> Result<FittedLayer> {
    let l = layer.index;
    let train_t = read_split(
        train,
        l,
        Split::Train,
        "no train-split samples in the training archive",
    )?;
    let val_t = read_split(
        validation,
        l,
        Split::Validation,
        "no validation-split samples in the validation archive",
    )?;

    let (detector, mut scores, solver) = if last {
        let stats = gram::fit_gram_stats(&train_t, &val_t, config.gram_p, config.gram_rectify_c)?;
        let scores = val_t
            .iter()
            .map(|t| gram::deviation(&stats, t, config.gram_rectify_c))
            .collect::<Result<Vec<_>>>()?;
        (LayerDetector::Gram(stats), scores, None)
    } else {
        let features = train_t
            .iter()
            .map(|t| svm_features(t, config.svm_rectify_c).map(|c| c.values))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_ocsvm(&features, &config.ocsvm)?;
        let mut model = fit.model;
        model.layer_index = l;
        let scores = val_t
            .iter()
            .map(|t| model.decision(&svm_features(t, config.svm_rectify_c)?.values))
            .collect::<Result<Vec<_>>>()?;
        (LayerDetector::Ocsvm(model), scores, Some(fit.report))
    };

    scores.sort_by(f64::total_cmp);
    let kind = detector.kind();
    let threshold = calibrate_threshold(&scores, kind.orientation(), config.tpr_target)?;
    Ok(FittedLayer {
        detector,
        calibration: LayerCalibration {
            layer_index: l,
            kind,
            threshold,
            validation_scores: scores,
        },
        solver,
    })
}

/// Fits every layer's detector on ID data. Train-split samples of `train`
/// fit the detectors; validation-split samples of `validation` calibrate
/// them. Layers are fitted in parallel and assembled in layer order.
pub fn fit_bundle(
    train: &Archive,
    validation: &Archive,
    config: &PipelineConfig,
) -> Result<DetectorBundle> {
    config.validate()?;
    let layers = train.manifest().layers.clone();
    check_same_layers(&layers, &validation.manifest().layers, "validation archive")?;
    require_id_only(train)?;
    require_id_only(validation)?;
    if layers.is_empty() {
        return Err(Error::EmptyInput("archive declares no layers"));
    }
    if let Some(forced) = config.forced_layer {
        if forced as usize >= layers.len() {
            return Err(Error::InvalidConfig(format!(
                "forced_layer {forced} outside {} declared layers",
                layers.len()
            )));
        }
    }

    let last = layers.len() - 1;
    let fitted = layers
        .par_iter()
        .enumerate()
        .map(|(i, layer)| fit_layer(train, validation, layer, i == last, config))
        .collect::<Result<Vec<_>>>()?;

    let mut detectors = Vec::with_capacity(fitted.len());
    let mut calibration = Vec::with_capacity(fitted.len());
    let mut solver_reports = Vec::new();
    for f in fitted {
        detectors.push(f.detector);
        calibration.push(f.calibration);
        solver_reports.extend(f.solver);
    }

    Ok(DetectorBundle {
        model_id: train.manifest().model_id.clone(),
        layers,
        config: config.clone(),
        detectors,
        calibration,
        solver_reports,
        layer_reports: Vec::new(),
        selected_layer: config.forced_layer,
    })
}

/// True negative rate of one layer's calibrated detector over the OOD
/// samples of `tune`.
pub fn layer_tnr(bundle: &DetectorBundle, layer_index: u32, tune: &Archive) -> Result<f64> {
    bundle.check_layers(tune, "tune archive")?;
    let calibration = bundle
        .calibration
        .get(layer_index as usize)
        .ok_or(Error::UnknownLayer(layer_index))?;
    let ood = tune.read_layer_tensors(layer_index, |s| s.label == Label::Ood)?;
    if ood.is_empty() {
        return Err(Error::EmptyInput("tune archive has no OOD samples"));
    }
    let orientation = calibration.kind.orientation();
    let mut true_negatives = 0;
    for t in &ood {
        if !orientation.accepts(bundle.raw_score(t)?, calibration.threshold) {
            true_negatives += 1;
        }
    }
    true_negative_rate(true_negatives, ood.len() - true_negatives)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores every layer on the tuning OOD samples and selects the layer with
/// the highest TNR (smallest index on ties). A forced layer in the bundle's
/// configuration stays selected; the per-layer reports are still filled in.
pub fn select_layer(mut bundle: DetectorBundle, tune: &Archive) -> Result<DetectorBundle> {
    let tnrs = (0..bundle.layers.len() as u32)
        .into_par_iter()
        .map(|l| layer_tnr(&bundle, l, tune))
        .collect::<Result<Vec<_>>>()?;
    bundle.layer_reports = bundle
        .calibration
        .iter()
        .zip(&tnrs)
        .map(|(c, &tnr)| LayerDetectorReport {
            layer_index: c.layer_index,
            detector_kind: c.kind,
            calibration_threshold: c.threshold,
            tnr_on_tune: tnr,
        })
        .collect();
    bundle.selected_layer = bundle
        .config
        .forced_layer
        .or_else(|| argmax_first(&tnrs).map(|i| i as u32));
    Ok(bundle)
}

/// Normality of one sample given its per-layer tensors; only the selected
/// layer's tensor is used.
pub fn normality_score(bundle: &DetectorBundle, features: &[LayerTensor]) -> Result<f64> {
    let selected = bundle.selected_layer.ok_or(Error::SelectionUnset)?;
    let tensor = features
        .iter()
        .find(|t| t.layer_index == selected)
        .ok_or_else(|| Error::LayerMismatch(format!("no tensor for selected layer {selected}")))?;
    Ok(bundle.calibration[selected as usize].normality(bundle.raw_score(tensor)?))
}

/// ID iff `normality > 1 − theta`.
pub fn decide(normality: f64, config: &PipelineConfig) -> Decision {
    if normality > 1.0 - config.theta {
        Decision::Id
    } else {
        Decision::Ood
    }
}

fn score_tensor(
    bundle: &DetectorBundle,
    calibration: &LayerCalibration,
    tensor: &LayerTensor,
) -> Result<ScoredSample> {
    let raw_score = bundle.raw_score(tensor)?;
    let normality = calibration.normality(raw_score);
    Ok(ScoredSample {
        sample_id: tensor.sample_id.clone(),
        raw_score,
        normality,
        decision: decide(normality, &bundle.config),
    })
}

/// Scores every sample of `archive` on the selected layer, in manifest order.
pub fn score_archive(bundle: &DetectorBundle, archive: &Archive) -> Result<Vec<ScoredSample>> {
    bundle.check_layers(archive, "scored archive")?;
    let selected = bundle.selected_layer.ok_or(Error::SelectionUnset)?;
    let calibration = &bundle.calibration[selected as usize];
    archive
        .read_layer(selected)?
        .par_iter()
        .map(|t| score_tensor(bundle, calibration, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailedScore {
    pub sample: ScoredSample,
    /// Raw score of every layer's detector, indexed by layer.
    pub layer_scores: Vec<f64>,
}

/// Like [`score_archive`], additionally reporting every layer's raw score.
pub fn score_archive_detailed(
    bundle: &DetectorBundle,
    archive: &Archive,
) -> Result<Vec<DetailedScore>> {
    let scored = score_archive(bundle, archive)?;
    let per_layer = (0..bundle.layers.len() as u32)
        .map(|l| {
            archive
                .read_layer(l)?
                .par_iter()
                .map(|t| bundle.raw_score(t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, sample)| DetailedScore {
            sample,
            layer_scores: per_layer.iter().map(|layer| layer[i]).collect(),
        })
        .collect())
}
