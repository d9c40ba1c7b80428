pub mod attribute;
pub mod generate;
pub mod probe;
pub mod report;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use deconf::synthgen::Dataset;
use deconf::trainers::TrainedModel;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Resolve the run directory: the --out flag wins over run.out_dir.
pub fn resolve_out_dir(
    flag: Option<&Path>,
    config: &ExperimentConfig,
) -> Result<PathBuf, CliError> {
    match (flag, &config.run.out_dir) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(dir)) => Ok(PathBuf::from(dir)),
        (None, None) => Err(CliError::config(
            "no output directory: pass --out or set run.out_dir in the config",
        )),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    deconf::synthgen::load_csv(path)
        .map_err(|e| CliError::runtime(format!("cannot load dataset {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<(TrainedModel, String), CliError> {
    deconf::trainers::load_model(path)
        .map_err(|e| CliError::runtime(format!("cannot load model {}: {e}", path.display())))
}

/// File stem for CSV identity columns (paths themselves may contain commas).
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// The test split of the source data is fixed per run, independent of the
/// replicate seeds.
pub fn test_split_seed(master_seed: u64) -> u64 {
    master_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(1)
}
