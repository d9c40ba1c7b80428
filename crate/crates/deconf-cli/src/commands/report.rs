use std::path::Path;

use crate::manifest::{load_manifest, FileKind, ManifestWriter};
use crate::output::write_csv;
use crate::CliError;

/// Join every metrics file of a run into `report/summary.csv`, print a
/// status table, and exit nonzero when any recorded check failed or the run
/// is incomplete. Re-running is idempotent.
pub fn run(run_dir: &Path) -> Result<(), CliError> {
    if !run_dir.join(crate::manifest::MANIFEST_NAME).exists() {
        return Err(CliError::runtime(format!(
            "no manifest found in {}; nothing to report",
            run_dir.display()
        )));
    }
    let manifest = load_manifest(run_dir)?;
    let was_complete = manifest.complete;

    let mut summary_rows = Vec::new();
    let mut file_counts = Vec::new();
    for entry in &manifest.files {
        if entry.kind != FileKind::Metrics {
            continue;
        }
        let path = run_dir.join(&entry.path);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::runtime(format!(
                "metrics file {} listed in manifest is unreadable: {e}",
                path.display()
            ))
        })?;
        let mut count = 0usize;
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            // RFC-4180 quoting keeps the raw row in one summary column.
            summary_rows.push(format!("{},\"{}\"", entry.path, line.replace('"', "\"\"")));
            count += 1;
        }
        file_counts.push((entry.path.clone(), count));
    }

    let mut writer = ManifestWriter::open_or_create(run_dir, "", 0, Vec::new())?;
    let rel = "report/summary.csv";
    write_csv(&run_dir.join(rel), "source_file,row", &summary_rows)?;
    writer.record_file(rel, FileKind::Report)?;
    writer.finish()?;

    println!("run: {}", run_dir.display());
    println!("config hash: {}", manifest.config_hash);
    println!("complete at report time: {was_complete}");
    println!("-- metric files --");
    for (path, count) in &file_counts {
        println!("{path}: {count} rows");
    }
    println!("-- checks --");
    let mut failed = Vec::new();
    for check in &manifest.checks {
        println!(
            "{}: {} ({})",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            check.detail
        );
        if !check.passed {
            failed.push(check.name.clone());
        }
    }
    if manifest.checks.is_empty() {
        println!("(none recorded)");
    }
    println!("summary rows: {}", summary_rows.len());

    if !was_complete {
        return Err(CliError::check_failed(
            "run is marked incomplete; a command aborted before finishing",
        ));
    }
    if !failed.is_empty() {
        return Err(CliError::check_failed(format!(
            "failed checks: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}
