use std::path::Path;
use std::time::Instant;

use deconf::synthgen::{make_source_target_pair, save_csv};

use crate::config::ExperimentConfig;
use crate::manifest::{FileKind, ManifestWriter};
use crate::CliError;

pub fn run(config_path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path).map_err(CliError::config)?;
    let out = super::resolve_out_dir(out_flag, &config)?;
    let seeds: Vec<u64> = (0..config.run.replicates)
        .map(|i| config.replicate_seed(i))
        .collect();
    let mut manifest =
        ManifestWriter::open_or_create(&out, &config.hash(), config.run.master_seed, seeds)?;

    let start = Instant::now();
    let source_cfg = config.source_gen_config(config.run.master_seed);
    let target_cfg = config.target_gen_config(config.run.master_seed.wrapping_add(1));
    let (source, target) = make_source_target_pair(&source_cfg, &target_cfg)
        .map_err(|e| CliError::config(e.to_string()))?;

    let data_dir = out.join("data");
    std::fs::create_dir_all(&data_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", data_dir.display())))?;
    save_csv(&source, &data_dir.join("source.csv"))?;
    manifest.record_file("data/source.csv", FileKind::Dataset)?;
    save_csv(&target, &data_dir.join("target.csv"))?;
    manifest.record_file("data/target.csv", FileKind::Dataset)?;

    manifest.record_timing("generate", start.elapsed().as_secs_f64())?;
    manifest.finish()?;
    eprintln!(
        "generated {} source and {} target samples into {}",
        source.len(),
        target.len(),
        out.display()
    );
    Ok(())
}
