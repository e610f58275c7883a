//! Deterministic synthetic multi-layer activations.
//!
//! Every layer is an independent random projection of a per-sample latent
//! vector followed by a ReLU: `relu(W_l z + b_l)`. Weights depend only on
//! the seed; latents depend on the seed and the sample stream. Out-of-
//! distribution archives add a constant to the projection at and after
//! `shift_layer`, so earlier layers are bit-identical to the ID archive
//! drawn from the same stream.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{
    write_archive, Archive, Label, LayerDescriptor, LayerTensor, Manifest, SampleRecord, Split,
};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const WEIGHT_SALT: u64 = 0x5745_4947_4854_5331;
const STREAM_SALT: u64 = 0x5354_5245_414D_5331;

/// One splitmix64 step: returns the output and the next state.
pub fn prng_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), next)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let (value, next) = prng_next(self.state);
        self.state = next;
        value
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Box-Muller standard normals; both variates of each pair are used.
#[derive(Debug, Clone)]
pub struct Gaussian {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = loop {
            let u = self.rng.next_unit();
            if u != 0.0 {
                break u;
            }
        };
        let u2 = self.rng.next_unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Channels per layer; its length is the layer count.
    pub channels: Vec<u32>,
    /// `(width, height)` per layer.
    pub spatial: Vec<(u32, u32)>,
    pub latent_dim: u32,
    pub n_samples: u32,
    pub mode: SynthMode,
    pub shift_layer: u32,
    pub shift_magnitude: f64,
    /// Selects an independent latent stream under the same weights, so
    /// train, validation and test archives can share a backbone.
    pub stream: u64,
    pub split: Split,
    pub created_utc: Option<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            channels: vec![8, 16, 32, 64],
            spatial: vec![(8, 8), (4, 4), (4, 4), (2, 2)],
            latent_dim: 16,
            n_samples: 64,
            mode: SynthMode::Id,
            shift_layer: 1,
            shift_magnitude: 0.0,
            stream: 0,
            split: Split::Train,
            created_utc: None,
        }
    }
}

impl SynthConfig {
    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.channels.len() < 2 {
            return fail(format!(
                "need at least 2 layers, got {}",
                self.channels.len()
            ));
        }
        if self.spatial.len() != self.channels.len() {
            return fail(format!(
                "{} spatial sizes for {} layers",
                self.spatial.len(),
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) || self.spatial.iter().any(|&(w, h)| w == 0 || h == 0) {
            return fail("layer dimensions must be positive".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        if self.shift_layer as usize >= self.channels.len() {
            return fail(format!(
                "shift_layer {} outside {} layers",
                self.shift_layer,
                self.channels.len()
            ));
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return fail(format!(
                "shift_magnitude must be ≥ 0, got {}",
                self.shift_magnitude
            ));
        }
        Ok(())
    }

    pub fn layer_descriptors(&self) -> Vec<LayerDescriptor> {
        self.channels
            .iter()
            .zip(&self.spatial)
            .enumerate()
            .map(|(i, (&channels, &(width, height)))| LayerDescriptor {
                index: i as u32,
                name: format!("synth_act_{i}"),
                channels,
                width,
                height,
            })
            .collect()
    }

    pub fn model_id(&self) -> String {
        format!("synth-seed{}", self.seed)
    }
}

struct Projection {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn projections(config: &SynthConfig) -> Vec<Projection> {
    let d = config.latent_dim as usize;
    let scale = 1.0 / (d as f64).sqrt();
    let mut normal = Gaussian::new(prng_next(config.seed ^ WEIGHT_SALT).0);
    config
        .layer_descriptors()
        .iter()
        .map(|layer| {
            let units = layer.shape().numel();
            let weights = (0..units * d).map(|_| normal.sample() * scale).collect();
            let bias = (0..units).map(|_| 0.1 * normal.sample()).collect();
            Projection { weights, bias }
        })
        .collect()
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    prng_next(seed ^ STREAM_SALT ^ stream.wrapping_mul(GOLDEN_GAMMA)).0
}

/// Generates the manifest and tensors described by `config`.
pub fn generate(config: &SynthConfig) -> Result<(Manifest, Vec<LayerTensor>)> {
    config.validate()?;
    let layers = config.layer_descriptors();
    let label = match config.mode {
        SynthMode::Id => Label::Id,
        SynthMode::Ood => Label::Ood,
    };
    let samples: Vec<SampleRecord> = (0..config.n_samples)
        .map(|i| SampleRecord {
            id: format!("{}-s{}-{:05}", label, config.stream, i),
            label,
            split: config.split,
        })
        .collect();
    let created = config
        .created_utc
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string());
    let manifest = Manifest::new(config.model_id(), layers.clone(), samples, created);

    let d = config.latent_dim as usize;
    let projections = projections(config);
    let mut normal = Gaussian::new(stream_seed(config.seed, config.stream));
    let mut tensors = Vec::with_capacity(manifest.samples.len() * layers.len());
    for sample in &manifest.samples {
        let z: Vec<f64> = (0..d).map(|_| normal.sample()).collect();
        for (layer, proj) in layers.iter().zip(&projections) {
            let shift = if config.mode == SynthMode::Ood && layer.index >= config.shift_layer {
                config.shift_magnitude
            } else {
                0.0
            };
            let values = proj
                .weights
                .chunks_exact(d)
                .zip(&proj.bias)
                .map(|(row, b)| {
                    let pre: f64 = row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>() + shift + b;
                    pre.max(0.0) as f32
                })
                .collect();
            tensors.push(LayerTensor::new(
                layer.index,
                sample.id.clone(),
                layer.shape(),
                values,
            )?);
        }
    }
    Ok((manifest, tensors))
}

/// Generates and writes an archive to `destination`.
pub fn generate_archive(config: &SynthConfig, destination: impl AsRef<Path>) -> Result<Archive> {
    let (manifest, tensors) = generate(config)?;
    write_archive(&manifest, tensors, destination)
}
