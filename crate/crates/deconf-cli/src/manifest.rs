use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Inventory of one run directory: provenance, every file written, wall
/// timings, and recorded pass/fail checks. Persisted after every mutation,
/// so a crashed command leaves a manifest with `complete = false`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub replicate_seeds: Vec<u64>,
    pub complete: bool,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    pub checks: Vec<CheckRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub kind: FileKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Dataset,
    Model,
    Metrics,
    Report,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A manifest bound to its run directory; every mutation is flushed to disk.
pub struct ManifestWriter {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    /// Open the manifest in `dir`, or create a fresh one. An existing
    /// manifest with a different config hash is rejected: one run directory
    /// holds one experiment.
    pub fn open_or_create(
        dir: &Path,
        config_hash: &str,
        master_seed: u64,
        replicate_seeds: Vec<u64>,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST_NAME);
        let manifest = if path.exists() {
            let existing = load_manifest(dir)?;
            if !config_hash.is_empty()
                && !existing.config_hash.is_empty()
                && existing.config_hash != config_hash
            {
                return Err(CliError::config(format!(
                    "run directory {} belongs to a different config (hash {} vs {})",
                    dir.display(),
                    existing.config_hash,
                    config_hash
                )));
            }
            let mut m = existing;
            if m.config_hash.is_empty() {
                m.config_hash = config_hash.to_string();
            }
            if !replicate_seeds.is_empty() {
                m.replicate_seeds = replicate_seeds;
                m.master_seed = master_seed;
            }
            m
        } else {
            RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config_hash.to_string(),
                master_seed,
                replicate_seeds,
                complete: false,
                files: Vec::new(),
                timings: Vec::new(),
                checks: Vec::new(),
            }
        };
        let mut w = Self {
            dir: dir.to_path_buf(),
            manifest,
        };
        w.manifest.complete = false;
        w.save()?;
        Ok(w)
    }

    pub fn record_file(&mut self, rel_path: &str, kind: FileKind) -> Result<(), CliError> {
        if let Some(existing) = self.manifest.files.iter_mut().find(|f| f.path == rel_path) {
            existing.kind = kind;
        } else {
            self.manifest.files.push(FileEntry {
                path: rel_path.to_string(),
                kind,
            });
        }
        self.save()
    }

    pub fn record_timing(&mut self, step: &str, seconds: f64) -> Result<(), CliError> {
        self.manifest.timings.push(Timing {
            step: step.to_string(),
            seconds,
        });
        self.save()
    }

    pub fn record_check(&mut self, name: &str, passed: bool, detail: String) -> Result<(), CliError> {
        if let Some(existing) = self.manifest.checks.iter_mut().find(|c| c.name == name) {
            existing.passed = passed;
            existing.detail = detail;
        } else {
            self.manifest.checks.push(CheckRecord {
                name: name.to_string(),
                passed,
                detail,
            });
        }
        self.save()
    }

    pub fn finish(&mut self) -> Result<(), CliError> {
        self.manifest.complete = true;
        self.save()
    }

    fn save(&self) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::runtime(format!("manifest serialization failed: {e}")))?;
        std::fs::write(self.dir.join(MANIFEST_NAME), json)
            .map_err(|e| CliError::runtime(format!("cannot write manifest: {e}")))
    }
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::runtime(format!("cannot read manifest {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::runtime(format!("corrupt manifest {}: {e}", path.display())))
}
