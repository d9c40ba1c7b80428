use std::path::Path;
use std::time::Instant;

use deconf::diagnostics::{auroc, probe_nuisance, ProbeMetric};
use deconf::synthgen::{engineered_imbalance, generate, realize_counts};
use deconf::trainers::{split_train_val, train_standard, AdvConfig};

use crate::config::ExperimentConfig;
use crate::manifest::{FileKind, ManifestWriter};
use crate::output::{fmt_sig, write_csv};
use crate::CliError;

/// Tolerance for a single adjacent violation in the monotonicity checks.
const MONOTONE_TOLERANCE: f64 = 0.01;

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
    let start = Instant::now();

    // Feasibility of every ratio is a config property; fail before training.
    let sweep = &config.sweep;
    let mut all_counts = Vec::new();
    for &ratio in &sweep.ratios {
        let counts = engineered_imbalance(ratio, sweep.n_per_view, sweep.overall_rate)
            .map_err(|e| CliError::config(format!("ratio {ratio}: {e}")))?;
        all_counts.push((ratio, counts));
    }

    let target = generate(&config.target_gen_config(config.run.master_seed.wrapping_add(1)))
        .map_err(|e| CliError::config(e.to_string()))?;
    let target_x = target.features_matrix();
    let target_y = target.labels().to_vec();

    let mut rows = Vec::new();
    let mut ratio_target_means = Vec::new();
    let mut ratio_probe_means = Vec::new();
    for (ratio_idx, (ratio, counts)) in all_counts.iter().enumerate() {
        let mut target_aurocs = Vec::new();
        let mut probe_aurocs = Vec::new();
        for (i, &seed) in replicate_seeds.iter().enumerate() {
            let gen_seed = seed.wrapping_add(500_009 * (ratio_idx as u64 + 1));
            let source = realize_counts(counts, &config.source_gen_config(gen_seed))?;
            let (train_pool, source_test) =
                split_train_val(&source, config.run.test_fraction, gen_seed)?;
            let model = train_standard(&train_pool, &config.train_config(seed)).map_err(|e| {
                CliError::runtime(format!("ratio {ratio} replicate {i}: {e}"))
            })?;

            let t_scores = model.scores(target_x.view())?;
            let target_auroc = auroc(&t_scores.to_vec(), &target_y)?;

            let s_scores = model.scores(source_test.features_matrix().view())?;
            let probe_spec = AdvConfig::for_kind(source_test.nuisance_kind()).adversary_spec;
            let probe = probe_nuisance(
                &s_scores.to_vec(),
                &source_test.nuisance_values().to_vec(),
                source_test.nuisance_kind(),
                &probe_spec,
                seed,
            )?;
            let probe_auroc = match probe.metric {
                ProbeMetric::Binary { auroc, .. } => auroc,
                ProbeMetric::Continuous { r2, .. } => r2,
            };
            rows.push(format!(
                "{ratio},{},{},{seed}",
                fmt_sig(target_auroc),
                fmt_sig(probe_auroc)
            ));
            eprintln!(
                "ratio {ratio} replicate {i}: target auroc {}, probe auroc {}",
                fmt_sig(target_auroc),
                fmt_sig(probe_auroc)
            );
            target_aurocs.push(target_auroc);
            probe_aurocs.push(probe_auroc);
        }
        ratio_target_means
            .push(target_aurocs.iter().sum::<f64>() / target_aurocs.len() as f64);
        ratio_probe_means.push(probe_aurocs.iter().sum::<f64>() / probe_aurocs.len() as f64);
    }

    let rel = "metrics/sweep_imbalance.csv";
    write_csv(&out.join(rel), "ratio,target_auroc,probe_auroc,seed", &rows)?;
    manifest.record_file(rel, FileKind::Metrics)?;

    let (target_ok, target_detail) = monotone_check(&ratio_target_means, Direction::NonIncreasing);
    manifest.record_check("sweep_target_auroc_monotone", target_ok, target_detail)?;
    let (probe_ok, probe_detail) = monotone_check(&ratio_probe_means, Direction::NonDecreasing);
    manifest.record_check("sweep_probe_auroc_monotone", probe_ok, probe_detail)?;

    manifest.record_timing("sweep_imbalance", start.elapsed().as_secs_f64())?;
    manifest.finish()?;
    eprintln!(
        "sweep finished: target monotone {}, probe monotone {}",
        target_ok, probe_ok
    );
    Ok(())
}

pub enum Direction {
    NonIncreasing,
    NonDecreasing,
}

/// Monotonicity with slack: at most one adjacent pair may go the wrong way,
/// and only by at most `MONOTONE_TOLERANCE`.
pub fn monotone_check(means: &[f64], direction: Direction) -> (bool, String) {
    let mut violations = Vec::new();
    for (k, w) in means.windows(2).enumerate() {
        let delta = match direction {
            Direction::NonIncreasing => w[1] - w[0],
            Direction::NonDecreasing => w[0] - w[1],
        };
        if delta > 0.0 {
            violations.push((k, delta));
        }
    }
    let ok = violations.len() <= 1
        && violations.iter().all(|(_, d)| *d <= MONOTONE_TOLERANCE);
    let detail = format!(
        "means: [{}]; violations: {:?}",
        means
            .iter()
            .map(|m| fmt_sig(*m))
            .collect::<Vec<_>>()
            .join(", "),
        violations
    );
    (ok, detail)
}
