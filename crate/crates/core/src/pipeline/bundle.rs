//! Bundle directory: `bundle.json` plus one `svm_layer_<idx>.bin` per SVM
//! layer.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DetectorBundle, DetectorKind, LayerCalibration, LayerDetector, LayerDetectorReport,
    PipelineConfig,
};
use crate::error::{Error, Result};
use crate::feature_io::LayerDescriptor;
use crate::gram::GramStats;
use crate::ocsvm::{read_model, write_model, SolverReport};

pub const BUNDLE_FILE: &str = "bundle.json";
const BUNDLE_VERSION: u32 = 1;

fn svm_file_name(layer: u32) -> String {
    format!("svm_layer_{layer}.bin")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmEntry {
    layer_index: u32,
    file: String,
    solver: SolverReport,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    format_version: u32,
    model_id: String,
    layers: Vec<LayerDescriptor>,
    config: PipelineConfig,
    svm_layers: Vec<SvmEntry>,
    gram: GramStats,
    calibration: Vec<LayerCalibration>,
    layer_reports: Vec<LayerDetectorReport>,
    selected_layer: Option<u32>,
    selected_kind: Option<DetectorKind>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save_bundle(bundle: &DetectorBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut svm_layers = Vec::new();
    let mut gram = None;
    for detector in &bundle.detectors {
        match detector {
            LayerDetector::Ocsvm(model) => {
                let file = svm_file_name(model.layer_index);
                let path = dir.join(&file);
                let out = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut out = BufWriter::new(out);
                write_model(model, &mut out)
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::io(&path, e))?;
                svm_layers.push(SvmEntry {
                    layer_index: model.layer_index,
                    file,
                    solver: bundle.solver_reports[model.layer_index as usize].clone(),
                });
            }
            LayerDetector::Gram(stats) => gram = Some(stats.clone()),
        }
    }
    let gram = gram.ok_or_else(|| Error::LayerMismatch("bundle has no Gram layer".into()))?;

    let file = BundleFile {
        format_version: BUNDLE_VERSION,
        model_id: bundle.model_id.clone(),
        layers: bundle.layers.clone(),
        config: bundle.config.clone(),
        svm_layers,
        gram,
        calibration: bundle.calibration.clone(),
        layer_reports: bundle.layer_reports.clone(),
        selected_layer: bundle.selected_layer,
        selected_kind: bundle.selected_kind(),
    };
    let path = dir.join(BUNDLE_FILE);
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| malformed(&path, e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DetectorBundle> {
    let dir = dir.as_ref();
    let path = dir.join(BUNDLE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: BundleFile =
        serde_json::from_str(&text).map_err(|e| malformed(&path, e.to_string()))?;
    if file.format_version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            path,
            found: file.format_version as u64,
            supported: BUNDLE_VERSION,
        });
    }
    file.config.validate()?;

    let n_layers = file.layers.len();
    if n_layers == 0 || file.svm_layers.len() != n_layers - 1 || file.calibration.len() != n_layers
    {
        return Err(malformed(
            &path,
            format!(
                "{} layers need {} SVM layers and {} calibrations, found {} and {}",
                n_layers,
                n_layers.saturating_sub(1),
                n_layers,
                file.svm_layers.len(),
                file.calibration.len()
            ),
        ));
    }

    let mut detectors = Vec::with_capacity(n_layers);
    let mut solver_reports = Vec::with_capacity(n_layers - 1);
    for (i, entry) in file.svm_layers.into_iter().enumerate() {
        if entry.layer_index as usize != i {
            return Err(malformed(
                &path,
                format!("SVM entry {i} is for layer {}", entry.layer_index),
            ));
        }
        let svm_path = dir.join(&entry.file);
        let f = fs::File::open(&svm_path).map_err(|e| Error::io(&svm_path, e))?;
        let model = read_model(&mut BufReader::new(f), &svm_path)?;
        if model.layer_index != entry.layer_index {
            return Err(malformed(
                &svm_path,
                format!(
                    "model is for layer {}, entry says {}",
                    model.layer_index, entry.layer_index
                ),
            ));
        }
        detectors.push(LayerDetector::Ocsvm(model));
        solver_reports.push(entry.solver);
    }
    if file.gram.layer_index as usize != n_layers - 1 {
        return Err(malformed(
            &path,
            format!(
                "Gram statistics are for layer {}, expected the last layer {}",
                file.gram.layer_index,
                n_layers - 1
            ),
        ));
    }
    detectors.push(LayerDetector::Gram(file.gram));

    for (i, (c, d)) in file.calibration.iter().zip(&detectors).enumerate() {
        if c.layer_index as usize != i || c.kind != d.kind() || c.validation_scores.is_empty() {
            return Err(malformed(
                &path,
                format!("calibration entry {i} is inconsistent"),
            ));
        }
    }

    let bundle = DetectorBundle {
        model_id: file.model_id,
        layers: file.layers,
        config: file.config,
        detectors,
        calibration: file.calibration,
        solver_reports,
        layer_reports: file.layer_reports,
        selected_layer: file.selected_layer,
    };
    if let Some(l) = bundle.selected_layer {
        if l as usize >= n_layers || bundle.selected_kind() != file.selected_kind {
            return Err(malformed(
                &path,
                format!("selected layer {l} is inconsistent"),
            ));
        }
    }
    Ok(bundle)
}
