#![allow(dead_code)]

pub mod qp_oracle;

use msood_core::synth::{Gaussian, SplitMix64};
use msood_core::{LayerTensor, Shape};

/// Fraction of ID/OOD pairs ranked correctly, ties counted half.
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in id {
        for b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Best balanced accuracy of `score >= t => ID` over every observed score
/// and a threshold above all of them.
pub fn brute_detection_accuracy(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let tpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
            let tnr = ood.iter().filter(|&&s| s < t).count() as f64 / ood.len() as f64;
            0.5 * tpr + 0.5 * tnr
        })
        .fold(0.0, f64::max)
}

/// Product of the rectified, powered channel matrix with its transpose,
/// summed along rows.
pub fn naive_row_sums(tensor: &LayerTensor, p: u32) -> Vec<f64> {
    let k = tensor.shape.channels;
    let r: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            tensor
                .channel(c)
                .iter()
                .map(|&v| (v as f64).powi(p as i32))
                .collect()
        })
        .collect();
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = r[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum();
        }
    }
    gram.iter().map(|row| row.iter().sum()).collect()
}

/// Small integers scaled by 1/4 so sums and products stay exact in f64.
pub fn dyadic_tensor(
    rng: &mut SplitMix64,
    layer_index: u32,
    id: &str,
    shape: Shape,
) -> LayerTensor {
    let values = (0..shape.numel())
        .map(|_| (rng.next_u64() % 17) as f32 / 4.0)
        .collect();
    LayerTensor::new(layer_index, id, shape, values).unwrap()
}

pub fn gaussian_tensor(g: &mut Gaussian, layer_index: u32, id: &str, shape: Shape) -> LayerTensor {
    let values = (0..shape.numel()).map(|_| g.sample() as f32).collect();
    LayerTensor::new(layer_index, id, shape, values).unwrap()
}

pub fn below(rng: &mut SplitMix64, n: u64) -> u64 {
    rng.next_u64() % n
}

/// Fisher–Yates driven by `rng`.
pub fn permutation(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        p.swap(i, j);
    }
    p
}

/// Same spatial permutation applied to every channel.
pub fn permute_spatial(tensor: &LayerTensor, perm: &[usize]) -> LayerTensor {
    let s = tensor.shape.spatial();
    let mut values = Vec::with_capacity(tensor.values.len());
    for c in 0..tensor.shape.channels {
        let ch = &tensor.values[c * s..(c + 1) * s];
        values.extend(perm.iter().map(|&q| ch[q]));
    }
    LayerTensor::new(
        tensor.layer_index,
        tensor.sample_id.clone(),
        tensor.shape,
        values,
    )
    .unwrap()
}

pub const NUS: [f64; 3] = [0.001, 0.1, 0.5];

/// Random one-class problem: `n` in 2..=12 points of dimension 1..=3.
pub fn ocsvm_instance(seed: u64) -> Vec<Vec<f32>> {
    let mut rng = SplitMix64::new(seed);
    let n = 2 + below(&mut rng, 11) as usize;
    let d = 1 + below(&mut rng, 3) as usize;
    let mut g = Gaussian::new(rng.next_u64());
    (0..n)
        .map(|_| (0..d).map(|_| g.sample() as f32).collect())
        .collect()
}

/// Largest absolute difference between library and oracle over alphas,
/// rho and decision values at the training points plus a few probes.
/// Errors describe a broken feasibility invariant.
pub fn ocsvm_disagreement(points: &[Vec<f32>], nu: f64, probe_seed: u64) -> Result<f64, String> {
    use msood_core::{fit_ocsvm, OcsvmConfig};

    let fit = fit_ocsvm(
        points,
        &OcsvmConfig {
            nu,
            ..OcsvmConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let model = &fit.model;
    let n = points.len();
    let upper = 1.0 / (nu * n as f64);

    // map kept support vectors back onto training positions
    let mut alphas = vec![0.0; n];
    for (a, sv) in model.alphas.iter().zip(&model.support_vectors) {
        let i = points
            .iter()
            .position(|p| p == sv)
            .ok_or("support vector not in training set")?;
        alphas[i] = *a;
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(format!("alphas sum to {sum}"));
    }
    if let Some(a) = alphas.iter().find(|a| **a < 0.0 || **a > upper) {
        return Err(format!("alpha {a} outside [0, {upper}]"));
    }
    let outliers = alphas.iter().filter(|a| **a >= upper).count() as f64;
    if outliers > nu * n as f64 + 1e-9 {
        return Err(format!("{outliers} bounded coefficients exceed nu*n"));
    }

    let gamma = qp_oracle::auto_gamma(points);
    if (gamma - model.gamma).abs() > 1e-12 * gamma {
        return Err(format!("gamma {} vs oracle {gamma}", model.gamma));
    }
    let k = qp_oracle::kernel_matrix(points, gamma);
    let reference = qp_oracle::solve(&k, nu);

    let mut worst = (model.rho - reference.rho).abs();
    for (a, b) in alphas.iter().zip(&reference.alphas) {
        worst = worst.max((a - b).abs());
    }
    let mut g = Gaussian::new(probe_seed);
    let d = points[0].len();
    let probes: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..d).map(|_| (1.5 * g.sample()) as f32).collect())
        .collect();
    for x in points.iter().chain(&probes) {
        let ours = model.decision(x).map_err(|e| e.to_string())?;
        let theirs = qp_oracle::decision(points, &reference, gamma, x);
        worst = worst.max((ours - theirs).abs());
    }
    Ok(worst)
}

pub struct Scenario {
    pub train: msood_core::Archive,
    pub validation: msood_core::Archive,
    pub tune: msood_core::Archive,
    pub held_out: msood_core::Archive,
}

/// Four-layer synthetic backbone with OOD samples shifted from layer 1 on:
/// 64 ID train, 32 ID validation, 64 OOD tune and 64 held-out OOD samples.
pub fn scenario(dir: &std::path::Path) -> Scenario {
    use msood_core::{generate_archive, Split, SynthConfig, SynthMode};
    let base = SynthConfig {
        seed: 7,
        shift_layer: 1,
        shift_magnitude: 4.0,
        created_utc: Some("2026-01-01T00:00:00Z".into()),
        ..SynthConfig::default()
    };
    assert_eq!(base.num_layers(), 4);
    let make = |name: &str, n: u32, stream: u64, split: Split, mode: SynthMode| {
        let config = SynthConfig {
            n_samples: n,
            stream,
            split,
            mode,
            ..base.clone()
        };
        generate_archive(&config, dir.join(name)).unwrap()
    };
    Scenario {
        train: make("train", 64, 0, Split::Train, SynthMode::Id),
        validation: make("validation", 32, 1, Split::Validation, SynthMode::Id),
        tune: make("tune", 64, 2, Split::Tune, SynthMode::Ood),
        held_out: make("held_out", 64, 3, Split::Test, SynthMode::Ood),
    }
}

/// Random manifest with matching tensors whose values are arbitrary bit
/// patterns (NaN payloads and signed zeros included).
pub fn random_archive(seed: u64) -> (msood_core::Manifest, Vec<LayerTensor>) {
    use msood_core::{Label, LayerDescriptor, Manifest, SampleRecord, Split};
    let mut rng = SplitMix64::new(seed);
    let n_layers = 1 + below(&mut rng, 4) as u32;
    let layers: Vec<LayerDescriptor> = (0..n_layers)
        .map(|index| LayerDescriptor {
            index,
            name: format!("block{index}.out"),
            channels: 1 + below(&mut rng, 6) as u32,
            width: 1 + below(&mut rng, 4) as u32,
            height: 1 + below(&mut rng, 4) as u32,
        })
        .collect();
    let labels = [Label::Id, Label::Ood, Label::Unknown];
    let splits = [Split::Train, Split::Validation, Split::Tune, Split::Test];
    let n_samples = below(&mut rng, 7) as usize;
    let samples: Vec<SampleRecord> = (0..n_samples)
        .map(|i| SampleRecord {
            id: format!("img-{seed}-{i}"),
            label: labels[below(&mut rng, 3) as usize],
            split: splits[below(&mut rng, 4) as usize],
        })
        .collect();
    let mut tensors = Vec::new();
    for layer in &layers {
        for s in &samples {
            let shape = layer.shape();
            let values = (0..shape.numel())
                .map(|_| f32::from_bits(rng.next_u64() as u32))
                .collect();
            tensors.push(LayerTensor::new(layer.index, s.id.clone(), shape, values).unwrap());
        }
    }
    let manifest = Manifest::new(
        format!("model-{seed}"),
        layers,
        samples,
        "2026-01-01T00:00:00Z",
    );
    (manifest, tensors)
}

/// Bit-level comparison of two tensor lists.
pub fn same_bits(a: &[LayerTensor], b: &[LayerTensor]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.layer_index == y.layer_index
                && x.sample_id == y.sample_id
                && x.shape == y.shape
                && x.values.len() == y.values.len()
                && x.values
                    .iter()
                    .zip(&y.values)
                    .all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

/// Writes, reads back and writes again; returns a description of the first
/// difference found.
pub fn round_trip(seed: u64, dir: &std::path::Path) -> Result<(), String> {
    use msood_core::{read_manifest, write_archive};
    let (manifest, tensors) = random_archive(seed);
    let first = dir.join(format!("a{seed}"));
    let archive = write_archive(&manifest, tensors.clone(), &first).map_err(|e| e.to_string())?;
    let back = read_manifest(&first).map_err(|e| e.to_string())?;
    if back != manifest {
        return Err("manifest changed".into());
    }
    let mut read = Vec::new();
    for layer in &manifest.layers {
        read.extend(archive.read_layer(layer.index).map_err(|e| e.to_string())?);
    }
    if !same_bits(&read, &tensors) {
        return Err("tensor values changed".into());
    }
    let second = dir.join(format!("b{seed}"));
    write_archive(&back, read, &second).map_err(|e| e.to_string())?;
    for layer in &manifest.layers {
        let name = msood_core::feature_io::layer_file_name(layer.index);
        let x = std::fs::read(first.join(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(second.join(&name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{name} differs after rewrite"));
        }
    }
    let m1 = std::fs::read(first.join("manifest.json")).map_err(|e| e.to_string())?;
    let m2 = std::fs::read(second.join("manifest.json")).map_err(|e| e.to_string())?;
    if m1 != m2 {
        return Err("manifest bytes differ after rewrite".into());
    }
    Ok(())
}

pub struct RunOutput {
    pub bundle: msood_core::DetectorBundle,
    pub validation: Vec<msood_core::ScoredSample>,
    pub held_out: Vec<msood_core::ScoredSample>,
}

/// Fit, select and score, saving the bundle and both score tables under
/// `out`.
pub fn full_run(s: &Scenario, out: &std::path::Path) -> RunOutput {
    use msood_core::pipeline::write_scores_csv;
    use msood_core::{fit_bundle, save_bundle, score_archive, select_layer, PipelineConfig};
    let bundle = fit_bundle(&s.train, &s.validation, &PipelineConfig::default()).unwrap();
    let bundle = select_layer(bundle, &s.tune).unwrap();
    save_bundle(&bundle, out.join("bundle")).unwrap();
    let validation = score_archive(&bundle, &s.validation).unwrap();
    let held_out = score_archive(&bundle, &s.held_out).unwrap();
    write_scores_csv(
        &validation,
        std::fs::File::create(out.join("validation.csv")).unwrap(),
    )
    .unwrap();
    write_scores_csv(
        &held_out,
        std::fs::File::create(out.join("held_out.csv")).unwrap(),
    )
    .unwrap();
    RunOutput {
        bundle,
        validation,
        held_out,
    }
}

/// Relative paths and contents of every file under `root`, sorted.
pub fn tree_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

pub fn id_rate(rows: &[msood_core::ScoredSample]) -> f64 {
    rows.iter()
        .filter(|r| r.decision == msood_core::Decision::Id)
        .count() as f64
        / rows.len() as f64
}
