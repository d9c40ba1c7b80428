use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Report values carry 6 significant digits in plain decimal notation.
pub fn fmt_sig(value: f64) -> String {
    const SIG: i32 = 6;
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (SIG - 1 - exponent).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Write CSV rows (header first) to `path`.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}").map_err(|e| CliError::runtime(e.to_string()))?;
    for row in rows {
        writeln!(w, "{row}").map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::runtime(e.to_string()))
}

/// Sample mean and sample standard deviation (n - 1 denominator; 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
