use std::path::Path;
use std::time::Instant;

use deconf::diagnostics::{probe_nuisance, ProbeMetric};
use deconf::trainers::AdvConfig;

use crate::manifest::{FileKind, ManifestWriter};
use crate::output::{fmt_sig, write_csv};
use crate::CliError;

pub fn run(model_path: &Path, data_path: &Path, out: &Path, seed: u64) -> Result<(), CliError> {
    let (model, _hash) = super::load_model(model_path)?;
    let dataset = super::load_dataset(data_path)?;
    let mut manifest = ManifestWriter::open_or_create(out, "", 0, Vec::new())?;

    let start = Instant::now();
    let scores = model.scores(dataset.features_matrix().view())?;
    let kind = dataset.nuisance_kind();
    let spec = AdvConfig::for_kind(kind).adversary_spec;
    let report = probe_nuisance(
        &scores.to_vec(),
        &dataset.nuisance_values().to_vec(),
        kind,
        &spec,
        seed,
    )?;

    let model_id = super::stem(model_path);
    let data_id = super::stem(data_path);
    let kind_str = match kind {
        deconf::synthgen::NuisanceKind::Binary => "binary",
        deconf::synthgen::NuisanceKind::Continuous => "continuous",
    };
    let mut rows = Vec::new();
    match &report.metric {
        ProbeMetric::Binary { auroc, roc } => {
            rows.push(format!(
                "{model_id},{data_id},{kind_str},probe_auroc,{}",
                fmt_sig(*auroc)
            ));
            let roc_rows: Vec<String> = roc
                .points
                .iter()
                .map(|p| format!("{},{}", fmt_sig(p.fpr), fmt_sig(p.tpr)))
                .collect();
            write_csv(&out.join("probe_roc.csv"), "fpr,tpr", &roc_rows)?;
            manifest.record_file("probe_roc.csv", FileKind::Metrics)?;
        }
        ProbeMetric::Continuous { r2, mse } => {
            rows.push(format!(
                "{model_id},{data_id},{kind_str},probe_r2,{}",
                fmt_sig(*r2)
            ));
            rows.push(format!(
                "{model_id},{data_id},{kind_str},probe_mse,{}",
                fmt_sig(*mse)
            ));
        }
    }
    write_csv(
        &out.join("probe.csv"),
        "model,dataset,nuisance_kind,metric,value",
        &rows,
    )?;
    manifest.record_file("probe.csv", FileKind::Metrics)?;
    manifest.record_timing("probe", start.elapsed().as_secs_f64())?;
    manifest.finish()?;
    eprintln!(
        "probe on {} x {}: headline {}",
        model_id,
        data_id,
        fmt_sig(report.headline())
    );
    Ok(())
}
