use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

/// Column layout of comparison tables and of external baseline CSVs.
pub const COMPARE_HEADER: [&str; 5] = ["method", "observability", "n_seeds", "final_mean", "final_std"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub observability: String,
    pub n_seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
}

/// One row per report (final checkpoint, across seeds), followed by the
/// rows of each external CSV.
pub fn compare_report(reports: &[EvalReport], external: &[&Path]) -> Result<Vec<CompareRow>> {
    if reports.is_empty() && external.is_empty() {
        return Err(Error::InvalidInput("nothing to compare".into()));
    }
    let mut rows = Vec::new();
    for r in reports {
        let last = r.aggregate.last().ok_or_else(|| {
            Error::Schema(format!(
                "report for {} / {} has no successful seeds",
                r.agent.as_str(),
                r.observability.as_str()
            ))
        })?;
        rows.push(CompareRow {
            method: r.agent.as_str().to_string(),
            observability: r.observability.as_str().to_string(),
            n_seeds: last.n_seeds,
            final_mean: last.mean_return,
            final_std: last.std_return,
        });
    }
    for path in external {
        rows.extend(read_external_csv(path)?);
    }
    Ok(rows)
}

/// Reads baseline results with exactly the [`COMPARE_HEADER`] columns.
pub fn read_external_csv(path: &Path) -> Result<Vec<CompareRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COMPARE_HEADER {
        return Err(Error::Schema(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            COMPARE_HEADER,
            header
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Schema(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes `rows` as CSV to `path` and returns a fixed-width text rendering.
pub fn write_comparison(path: &Path, rows: &[CompareRow]) -> Result<String> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPARE_HEADER)?;
    let mut text = format!("{:<10} {:<13} {:>7}  final return (mean ± std)\n", "method", "observability", "seeds");
    for row in rows {
        w.serialize(row)?;
        text.push_str(&format!(
            "{:<10} {:<13} {:>7}  {:.1} ± {:.1}\n",
            row.method, row.observability, row.n_seeds, row.final_mean, row.final_std
        ));
    }
    w.flush()?;
    Ok(text)
}
