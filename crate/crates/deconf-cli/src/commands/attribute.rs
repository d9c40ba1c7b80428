use std::path::Path;
use std::time::Instant;

use deconf::diagnostics::{clip_attributions, expected_gradients, EgOptions};

use crate::manifest::{FileKind, ManifestWriter};
use crate::output::{fmt_sig, write_csv};
use crate::CliError;

pub fn run(
    model_path: &Path,
    data_path: &Path,
    index: usize,
    n_samples: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let (model, _hash) = super::load_model(model_path)?;
    let dataset = super::load_dataset(data_path)?;
    if index >= dataset.len() {
        return Err(CliError::config(format!(
            "--index {index} out of range for dataset of {} samples",
            dataset.len()
        )));
    }
    let mut manifest = ManifestWriter::open_or_create(out, "", 0, Vec::new())?;
    let start = Instant::now();

    let x = dataset.samples()[index].features.clone();
    let output_offset = model
        .covariate
        .map(|h| h.weight * h.v_mean)
        .unwrap_or(0.0);
    let attr = expected_gradients(
        &model.spec,
        &model.params,
        &x,
        &dataset,
        &EgOptions {
            n_samples,
            seed,
            output_offset,
        },
    )?;
    let clipped = clip_attributions(&attr.values, 99.9)?;

    let value_rows: Vec<String> = attr
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| format!("{k},{v}"))
        .collect();
    write_csv(&out.join("attributions.csv"), "feature_index,value", &value_rows)?;
    manifest.record_file("attributions.csv", FileKind::Metrics)?;
    let clipped_rows: Vec<String> = clipped
        .iter()
        .enumerate()
        .map(|(k, v)| format!("{k},{v}"))
        .collect();
    write_csv(
        &out.join("attributions_clipped.csv"),
        "feature_index,value",
        &clipped_rows,
    )?;
    manifest.record_file("attributions_clipped.csv", FileKind::Metrics)?;

    // Completeness identity: the attributions should sum to the score of the
    // explained sample minus the mean score over the references.
    let all_scores = model.scores(dataset.features_matrix().view())?;
    let fx = all_scores[index];
    let mean_ref = all_scores.sum() / all_scores.len() as f64;
    let attr_sum: f64 = attr.values.iter().sum();
    let gap = (attr_sum - (fx - mean_ref)).abs();
    let summary = format!(
        "{},{},{index},{n_samples},{},{},{}",
        super::stem(model_path),
        super::stem(data_path),
        fmt_sig(attr_sum),
        fmt_sig(fx - mean_ref),
        fmt_sig(gap)
    );
    write_csv(
        &out.join("attribute_summary.csv"),
        "model,dataset,sample_index,n_samples,sum_attributions,score_minus_mean_reference,completeness_gap",
        &[summary],
    )?;
    manifest.record_file("attribute_summary.csv", FileKind::Metrics)?;
    manifest.record_timing("attribute", start.elapsed().as_secs_f64())?;
    manifest.finish()?;
    eprintln!(
        "attributed sample {index} with {n_samples} draws; completeness gap {}",
        fmt_sig(gap)
    );
    Ok(())
}
