use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use msood_core::pipeline::{
    read_scores_csv, score_archive_detailed, write_scores_csv, LayerDetector, BUNDLE_FILE,
};
use msood_core::{
    evaluate_oriented, fit_bundle, generate_archive, load_bundle, save_bundle, select_layer,
    validate_archive, Archive, DetectorBundle, Orientation, ScoreSet,
};

use crate::config::ConfigFile;
use crate::{
    CliError, ColumnArg, EvaluateArgs, FitArgs, InspectArgs, OrientationArg, ScoreArgs, SelectArgs,
    SynthArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.config.as_deref())?.synth;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.channels {
        c.channels = v;
    }
    if let Some(v) = a.spatial {
        c.spatial = v;
    }
    if let Some(v) = a.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = a.n_samples {
        c.n_samples = v;
    }
    if let Some(v) = a.mode {
        c.mode = v.into();
    }
    if let Some(v) = a.shift_layer {
        c.shift_layer = v;
    }
    if let Some(v) = a.shift_magnitude {
        c.shift_magnitude = v;
    }
    if let Some(v) = a.stream {
        c.stream = v;
    }
    if let Some(v) = a.split {
        c.split = v;
    }
    if a.created_utc.is_some() {
        c.created_utc = a.created_utc;
    }
    c.validate()?;
    let archive = generate_archive(&c, &a.out)?;
    let m = archive.manifest();
    println!(
        "wrote {} samples x {} layers to {}",
        m.samples.len(),
        m.layers.len(),
        a.out.display()
    );
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let mut config = file.pipeline();
    if let Some(t) = a.tpr_target {
        config.tpr_target = t;
    }
    if a.forced_layer.is_some() {
        config.forced_layer = a.forced_layer;
    }
    config.validate()?;

    let train = Archive::open(&a.train)?;
    let validation = Archive::open(&a.validation)?;
    let mut bundle = fit_bundle(&train, &validation, &config)?;
    print_fit_diagnostics(&bundle);
    if let Some(tune) = &a.tune_ood {
        bundle = select_layer(bundle, &Archive::open(tune)?)?;
        print_tnr_table(&bundle);
    }
    save_bundle(&bundle, &a.out)?;
    println!("bundle written to {}", a.out.display());
    Ok(())
}

fn print_fit_diagnostics(bundle: &DetectorBundle) {
    println!("model {}", bundle.model_id);
    for (layer, detector) in bundle.layers.iter().zip(&bundle.detectors) {
        let cal = &bundle.calibration[layer.index as usize];
        let shape = format!("{}x{}x{}", layer.channels, layer.width, layer.height);
        match detector {
            LayerDetector::Ocsvm(m) => {
                let r = &bundle.solver_reports[layer.index as usize];
                println!(
                    "layer {} {:<16} {:<10} ocsvm  sv={} gamma={:.6} rho={:.6} iters={} converged={} threshold={:.6}",
                    layer.index,
                    layer.name,
                    shape,
                    m.alphas.len(),
                    m.gamma,
                    m.rho,
                    r.iterations,
                    r.converged,
                    cal.threshold
                );
            }
            LayerDetector::Gram(s) => {
                println!(
                    "layer {} {:<16} {:<10} gram   p={} expected_deviation={:.6} threshold={:.6}",
                    layer.index, layer.name, shape, s.order, s.expected_deviation, cal.threshold
                );
            }
        }
    }
}

fn print_tnr_table(bundle: &DetectorBundle) {
    println!(
        "{:>5}  {:<16}  {:<8}  {:>10}  {:>12}",
        "layer", "name", "detector", "tnr", "threshold"
    );
    for r in &bundle.layer_reports {
        let name = &bundle.layers[r.layer_index as usize].name;
        let mark = if bundle.selected_layer == Some(r.layer_index) {
            "  <- selected"
        } else {
            ""
        };
        println!(
            "{:>5}  {:<16}  {:<8}  {:>10.6}  {:>12.6}{mark}",
            r.layer_index,
            name,
            r.detector_kind.to_string(),
            r.tnr_on_tune,
            r.calibration_threshold
        );
    }
}

pub fn select(a: SelectArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let Some(tune) = &a.tune_ood else {
        return match bundle.config.forced_layer {
            Some(layer) => {
                eprintln!("notice: no tune archive given; keeping forced layer {layer}");
                Ok(())
            }
            None => Err(CliError::Invalid(
                "--tune-ood is required unless the bundle was fitted with a forced layer".into(),
            )),
        };
    };
    let bundle = select_layer(bundle, &Archive::open(tune)?)?;
    print_tnr_table(&bundle);
    save_bundle(&bundle, a.out.as_deref().unwrap_or(&a.bundle))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let archive = Archive::open(&a.archive)?;
    let detailed = score_archive_detailed(&bundle, &archive)?;
    let rows: Vec<_> = detailed.iter().map(|d| d.sample.clone()).collect();
    write_scores_csv(&rows, create(&a.out)?)?;

    if let Some(path) = &a.diagnostics {
        let mut w = csv::Writer::from_writer(create(path)?);
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..bundle.layers.len()).map(|l| format!("layer_{l}")));
        let csv_err = |e: csv::Error| CliError::Invalid(format!("{}: {e}", path.display()));
        w.write_record(&header).map_err(csv_err)?;
        for d in &detailed {
            let mut record = vec![d.sample.sample_id.clone()];
            record.extend(d.layer_scores.iter().map(f64::to_string));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }

    let accepted = rows
        .iter()
        .filter(|r| r.decision == msood_core::Decision::Id)
        .count();
    println!(
        "scored {} samples on layer {}: {} ID, {} OOD",
        rows.len(),
        bundle.selected_layer.unwrap_or_default(),
        accepted,
        rows.len() - accepted
    );
    Ok(())
}

fn read_column(path: &Path, column: ColumnArg) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let rows = read_scores_csv(file)?;
    Ok(rows
        .iter()
        .map(|r| match column {
            ColumnArg::Normality => r.normality,
            ColumnArg::RawScore => r.raw_score,
        })
        .collect())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let orientation = match (a.column, a.orientation) {
        (ColumnArg::Normality, Some(OrientationArg::HigherIsOod)) => {
            return Err(CliError::Invalid("normality is always higher-is-id".into()))
        }
        (_, Some(OrientationArg::HigherIsOod)) => Orientation::HigherIsOod,
        _ => Orientation::HigherIsId,
    };
    let set = ScoreSet::new(
        read_column(&a.id, a.column)?,
        read_column(&a.ood, a.column)?,
    );
    let report = evaluate_oriented(&set, orientation, a.tpr_target)?;
    println!("AUROC               {:.6}", report.auroc);
    println!("Detection Accuracy  {:.6}", report.detection_accuracy);
    println!(
        "{:<20}{:.6}",
        format!("TNR@TPR{}", percent(a.tpr_target)),
        report.tnr_at_tpr
    );
    Ok(())
}

fn percent(target: f64) -> String {
    let p = target * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    if a.path.join(BUNDLE_FILE).is_file() {
        return inspect_bundle(&a.path);
    }
    let report = validate_archive(&a.path);
    match Archive::open(&a.path) {
        Ok(archive) => print_archive(&archive),
        Err(e) if report.is_clean() => return Err(e.into()),
        Err(_) => {}
    }
    if report.is_clean() {
        println!("validation: clean");
        return Ok(());
    }
    println!("validation: {} finding(s)", report.findings.len());
    for f in &report.findings {
        println!("  {f}");
    }
    Err(CliError::Invalid(format!(
        "{} failed validation",
        a.path.display()
    )))
}

fn print_archive(archive: &Archive) {
    let m = archive.manifest();
    println!("archive {}", archive.root().display());
    println!("model_id     {}", m.model_id);
    println!("created_utc  {}", m.created_utc);
    println!("layers       {}", m.layers.len());
    for l in &m.layers {
        println!(
            "  {:>3}  {:<20} channels={} width={} height={}",
            l.index, l.name, l.channels, l.width, l.height
        );
    }
    println!("samples      {}", m.samples.len());
    let mut groups: BTreeMap<(String, String), usize> = BTreeMap::new();
    for s in &m.samples {
        *groups
            .entry((s.label.to_string(), s.split.to_string()))
            .or_default() += 1;
    }
    for ((label, split), n) in groups {
        println!("  label={label:<8} split={split:<11} {n}");
    }
}

fn inspect_bundle(dir: &Path) -> Result<()> {
    let bundle = load_bundle(dir)?;
    println!("bundle {}", dir.display());
    println!("model_id        {}", bundle.model_id);
    println!("layers          {}", bundle.layers.len());
    println!("theta           {}", bundle.config.theta);
    println!("tpr_target      {}", bundle.config.tpr_target);
    match bundle.selected_layer {
        Some(l) => println!(
            "selected_layer  {l} ({})",
            bundle.detectors[l as usize].kind()
        ),
        None => println!("selected_layer  none"),
    }
    print_fit_diagnostics(&bundle);
    if !bundle.layer_reports.is_empty() {
        print_tnr_table(&bundle);
    }
    Ok(())
}
