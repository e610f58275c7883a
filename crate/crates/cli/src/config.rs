//! TOML configuration for the command-line tool.
//!
//! ```toml
//! [pipeline]
//! theta = 0.95
//! svm_rectify_c = 1.0
//! gram_rectify_c = 0.8
//! forced_layer = 2
//!
//! [ocsvm]
//! nu = 0.001
//! gamma = "auto"
//!
//! [synth]
//! seed = 7
//! channels = [8, 16, 32, 64]
//! spatial = [[8, 8], [4, 4], [4, 4], [2, 2]]
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::Path;

use msood_core::{OcsvmConfig, PipelineConfig, SynthConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineTable {
    pub theta: f64,
    pub svm_rectify_c: f64,
    pub gram_rectify_c: f64,
    pub gram_p: u32,
    pub forced_layer: Option<u32>,
    pub tpr_target: f64,
}

impl Default for PipelineTable {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self {
            theta: d.theta,
            svm_rectify_c: d.svm_rectify_c,
            gram_rectify_c: d.gram_rectify_c,
            gram_p: d.gram_p,
            forced_layer: d.forced_layer,
            tpr_target: d.tpr_target,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub pipeline: PipelineTable,
    pub ocsvm: OcsvmConfig,
    pub synth: SynthConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            theta: p.theta,
            svm_rectify_c: p.svm_rectify_c,
            gram_rectify_c: p.gram_rectify_c,
            ocsvm: self.ocsvm.clone(),
            gram_p: p.gram_p,
            forced_layer: p.forced_layer,
            tpr_target: p.tpr_target,
        }
    }
}
