//! Observation ingestion: single-column (or first-column) numeric CSV with
//! optional header, plus the price-to-log-returns transform.

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};
use smc2::Dataset;
use std::path::Path;

/// How raw CSV values map to observations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Values are used as observations directly.
    #[default]
    None,
    /// Values are prices p_t; observations are 100 * (ln p_{t+1} - ln p_t),
    /// one fewer than the number of rows.
    LogReturns100,
}

pub fn ingest_returns(path: &Path, transform: Transform) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!("cannot read data file {}: {e}", path.display()))?;
    parse_returns(&text, transform).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Parses the first comma-separated field of every non-empty line. A first
/// line that does not parse as a number is treated as a header and skipped;
/// any later non-numeric row is an error carrying its 1-based line number.
pub fn parse_returns(text: &str, transform: Transform) -> Result<Dataset> {
    let mut rows: Vec<(usize, f64)> = Vec::new();
    let mut seen_first = false;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let field = trimmed.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                rows.push((idx + 1, v));
                seen_first = true;
            }
            Ok(_) => bail!("row {}: non-finite value `{field}`", idx + 1),
            Err(_) if !seen_first => {
                // Header line.
                seen_first = true;
            }
            Err(_) => bail!("row {}: cannot parse `{field}` as a number", idx + 1),
        }
    }
    let obs: Vec<f64> = match transform {
        Transform::None => rows.iter().map(|&(_, v)| v).collect(),
        Transform::LogReturns100 => {
            if let Some(&(row, p)) = rows.iter().find(|&&(_, p)| p <= 0.0) {
                bail!("row {row}: price {p} is not positive, cannot take log returns");
            }
            rows.windows(2)
                .map(|w| 100.0 * (w[1].1.ln() - w[0].1.ln()))
                .collect()
        }
    };
    Dataset::new(obs).map_err(|e| anyhow!("{e}"))
}
