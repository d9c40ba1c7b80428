use std::path::Path;
use std::time::Instant;

use deconf::diagnostics::{auroc, orthogonality, probe_nuisance, ProbeMetric};
use deconf::synthgen::{Dataset, NuisanceKind};
use deconf::trainers::{
    match_subsample, save_model, split_train_val, train_adversarial, train_covariate,
    train_instance_weighted, train_standard, AdvConfig, TrainedModel,
};

use crate::config::{ExperimentConfig, TrainerKind};
use crate::manifest::{FileKind, ManifestWriter};
use crate::output::{fmt_sig, mean_std, write_csv};
use crate::CliError;

pub fn run(
    config_path: &Path,
    out_flag: Option<&Path>,
    seed_override: Option<u64>,
    replicates_override: Option<usize>,
) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load(config_path).map_err(CliError::config)?;
    if let Some(seed) = seed_override {
        config.run.master_seed = seed;
    }
    if let Some(replicates) = replicates_override {
        if replicates == 0 {
            return Err(CliError::config("--replicates must be >= 1"));
        }
        config.run.replicates = replicates;
    }
    let out = super::resolve_out_dir(out_flag, &config)?;
    let replicate_seeds: Vec<u64> = (0..config.run.replicates)
        .map(|i| config.replicate_seed(i))
        .collect();
    let mut manifest = ManifestWriter::open_or_create(
        &out,
        &config.hash(),
        config.run.master_seed,
        replicate_seeds.clone(),
    )?;

    let source_path = out.join("data/source.csv");
    let target_path = out.join("data/target.csv");
    if !source_path.exists() || !target_path.exists() {
        return Err(CliError::runtime(format!(
            "datasets not found under {}; run `deconf generate` first",
            out.display()
        )));
    }
    let source = super::load_dataset(&source_path)?;
    let target = super::load_dataset(&target_path)?;

    let (train_pool, source_test) = split_train_val(
        &source,
        config.run.test_fraction,
        super::test_split_seed(config.run.master_seed),
    )?;
    eprintln!(
        "training {} on {} samples ({} held out as source test, {} target)",
        config.trainer.kind.as_str(),
        train_pool.len(),
        source_test.len(),
        target.len()
    );

    let mut rows: Vec<MetricRow> = Vec::new();
    let models_dir = out.join("models");
    std::fs::create_dir_all(&models_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", models_dir.display())))?;

    for (i, &seed) in replicate_seeds.iter().enumerate() {
        let start = Instant::now();
        let model = train_replicate(&config, &train_pool, seed).map_err(|e| {
            CliError::runtime(format!("replicate {i} failed: {}", e.message))
        })?;
        let model_rel = format!("models/replicate_{i}.json");
        save_model(&model, &config.hash(), &out.join(&model_rel))?;
        manifest.record_file(&model_rel, FileKind::Model)?;

        let source_scores = model.scores(source_test.features_matrix().view())?;
        let target_scores = model.scores(target.features_matrix().view())?;
        let source_auroc = auroc(&source_scores.to_vec(), &source_test.labels().to_vec())?;
        let target_auroc = auroc(&target_scores.to_vec(), &target.labels().to_vec())?;
        rows.push(MetricRow::new(i, "source", "auroc", source_auroc));
        rows.push(MetricRow::new(i, "target", "auroc", target_auroc));
        eprintln!(
            "replicate {i}: source auroc {}, target auroc {} ({:.1}s)",
            fmt_sig(source_auroc),
            fmt_sig(target_auroc),
            start.elapsed().as_secs_f64()
        );

        if config.diagnostics.probe {
            let (metric_name, value) =
                run_probe(&config, &model, &source_test, seed, &source_scores.to_vec())?;
            rows.push(MetricRow::new(i, "source", metric_name, value));
        }
        if config.diagnostics.orthogonality
            && source_test.nuisance_kind() == NuisanceKind::Binary
        {
            let hidden = model.hidden_embedding(source_test.features_matrix().view())?;
            let report = orthogonality(
                hidden.view(),
                &source_test.nuisance_values().to_vec(),
                &source_test.labels().to_vec(),
            )?;
            rows.push(MetricRow::new(
                i,
                "source",
                "weight_correlation",
                report.weight_correlation,
            ));
        }
        if config.diagnostics.export_scores {
            let rel = format!("metrics/scores_replicate_{i}.csv");
            let mut score_rows = Vec::new();
            for (ds, scores) in [(&source_test, &source_scores), (&target, &target_scores)] {
                for (s, sample) in scores.iter().zip(ds.samples()) {
                    score_rows.push(format!(
                        "{},{},{},{}",
                        sample.domain, s, sample.label, sample.nuisance
                    ));
                }
            }
            write_csv(&out.join(&rel), "domain,score,label,nuisance", &score_rows)?;
            manifest.record_file(&rel, FileKind::Metrics)?;
        }
        manifest.record_timing(&format!("train_replicate_{i}"), start.elapsed().as_secs_f64())?;
    }

    let metric_rel = "metrics/train_metrics.csv";
    write_csv(
        &out.join(metric_rel),
        "replicate,domain,metric,value,stddev",
        &render_with_summaries(&rows),
    )?;
    manifest.record_file(metric_rel, FileKind::Metrics)?;
    manifest.finish()?;
    eprintln!("metrics written to {}", out.join(metric_rel).display());
    Ok(())
}

fn train_replicate(
    config: &ExperimentConfig,
    train_pool: &Dataset,
    seed: u64,
) -> Result<TrainedModel, CliError> {
    let train_config = config.train_config(seed);
    let model = match config.trainer.kind {
        TrainerKind::Standard => train_standard(train_pool, &train_config)?,
        TrainerKind::Adversarial => {
            train_adversarial(train_pool, &train_config, &config.adv_config())?
        }
        TrainerKind::InstanceWeighting => train_instance_weighted(train_pool, &train_config)?,
        TrainerKind::Matching => {
            let matched = match_subsample(train_pool, seed)?;
            train_standard(&matched, &train_config)?
        }
        TrainerKind::Covariate => train_covariate(train_pool, &train_config)?,
    };
    Ok(model)
}

fn run_probe(
    config: &ExperimentConfig,
    _model: &TrainedModel,
    source_test: &Dataset,
    seed: u64,
    scores: &[f64],
) -> Result<(&'static str, f64), CliError> {
    let kind = source_test.nuisance_kind();
    let spec = AdvConfig::for_kind(kind).adversary_spec;
    let report = probe_nuisance(
        scores,
        &source_test.nuisance_values().to_vec(),
        kind,
        &spec,
        seed,
    )?;
    let _ = config;
    Ok(match report.metric {
        ProbeMetric::Binary { auroc, .. } => ("probe_auroc", auroc),
        ProbeMetric::Continuous { r2, .. } => ("probe_r2", r2),
    })
}

struct MetricRow {
    replicate: usize,
    domain: &'static str,
    metric: &'static str,
    value: f64,
}

impl MetricRow {
    fn new(replicate: usize, domain: &'static str, metric: &'static str, value: f64) -> Self {
        Self {
            replicate,
            domain,
            metric,
            value,
        }
    }
}

/// Render per-replicate rows grouped by (domain, metric), each group
/// followed by one summary row carrying the mean and sample standard
/// deviation across replicates.
fn render_with_summaries(rows: &[MetricRow]) -> Vec<String> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.domain, r.metric)) {
            keys.push((r.domain, r.metric));
        }
    }
    let mut out = Vec::new();
    for (domain, metric) in keys {
        let group: Vec<&MetricRow> = rows
            .iter()
            .filter(|r| r.domain == domain && r.metric == metric)
            .collect();
        for r in &group {
            out.push(format!(
                "{},{},{},{},",
                r.replicate,
                domain,
                metric,
                fmt_sig(r.value)
            ));
        }
        let values: Vec<f64> = group.iter().map(|r| r.value).collect();
        let (mean, std) = mean_std(&values);
        out.push(format!(
            "summary,{},{},{},{}",
            domain,
            metric,
            fmt_sig(mean),
            fmt_sig(std)
        ));
    }
    out
}
