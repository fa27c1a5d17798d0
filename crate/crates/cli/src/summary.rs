//! Digest of the figure tables: per-variant medians and interquartile
//! ranges, machine-readable for CI assertions.

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SUMMARY_SCHEMA: &str = "smc2-summary-v1";
pub const FIGTABLE_SCHEMA: &str = "# smc2-figtable-v1";
pub const FIGTABLE_HEADER: &str = "variant,seed,t,metric,value";

/// One long-format figure row.
#[derive(Clone, Debug, PartialEq)]
pub struct FigRow {
    pub variant: String,
    pub seed: u64,
    pub t: usize,
    pub metric: String,
    pub value: f64,
}

pub fn figtable_to_csv(rows: &[FigRow], value_note: Option<&str>) -> String {
    let mut out = String::from(FIGTABLE_SCHEMA);
    out.push('\n');
    if let Some(note) = value_note {
        out.push_str("# ");
        out.push_str(note);
        out.push('\n');
    }
    out.push_str(FIGTABLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.seed, r.t, r.metric, r.value
        ));
    }
    out
}

pub fn figtable_from_csv(text: &str) -> Result<Vec<FigRow>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != FIGTABLE_HEADER {
                bail!("line {}: expected header `{FIGTABLE_HEADER}`, got `{line}`", idx + 1);
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("line {}: expected 5 fields, got {}", idx + 1, fields.len());
        }
        rows.push(FigRow {
            variant: fields[0].to_string(),
            seed: fields[1]
                .parse()
                .map_err(|e| anyhow!("line {}: seed: {e}", idx + 1))?,
            t: fields[2]
                .parse()
                .map_err(|e| anyhow!("line {}: t: {e}", idx + 1))?,
            metric: fields[3].to_string(),
            value: fields[4]
                .parse()
                .map_err(|e| anyhow!("line {}: value: {e}", idx + 1))?,
        });
    }
    if !header_seen {
        bail!("no header line found");
    }
    Ok(rows)
}

/// Linear-interpolation quantile (the common spreadsheet/statistics default)
/// on an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

pub fn summarize_values(values: &[f64]) -> MetricSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    MetricSummary {
        median: quantile_sorted(&sorted, 0.5),
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        n: sorted.len(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSummary {
    /// Inner particle count at the final time, across seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_n_x: Option<MetricSummary>,
    /// Across-seed variance of the log evidence times mean per-step CPU at
    /// the final time (one value per variant, so the IQR is zero).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_var_x_cpu: Option<MetricSummary>,
    /// Metropolis acceptance rates over all moves and seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmmh_acceptance: Option<MetricSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub variants: BTreeMap<String, VariantSummary>,
}

/// Reads the figure tables written by an experiment and digests them.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let read = |name: &str| -> Result<Vec<FigRow>> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow!("cannot read figure table {}: {e}", path.display()))?;
        figtable_from_csv(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    };
    let nx_rows = read("fig2_nx_vs_t.csv")?;
    let var_cpu_rows = read("fig3_evidence_var_cpu.csv")?;
    let acceptance_rows = read("fig4_pmmh_acceptance.csv")?;

    let mut variants: BTreeMap<String, VariantSummary> = BTreeMap::new();
    let entry = |map: &mut BTreeMap<String, VariantSummary>, label: &str| {
        map.entry(label.to_string()).or_insert(VariantSummary {
            final_n_x: None,
            evidence_var_x_cpu: None,
            pmmh_acceptance: None,
        });
    };

    // Final particle count: the value at the largest t per (variant, seed).
    let mut finals: BTreeMap<(String, u64), (usize, f64)> = BTreeMap::new();
    for r in &nx_rows {
        let key = (r.variant.clone(), r.seed);
        match finals.get(&key) {
            Some(&(t, _)) if t >= r.t => {}
            _ => {
                finals.insert(key, (r.t, r.value));
            }
        }
    }
    let mut by_variant: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((variant, _), (_, value)) in finals {
        by_variant.entry(variant).or_default().push(value);
    }
    for (variant, values) in by_variant {
        entry(&mut variants, &variant);
        variants.get_mut(&variant).unwrap().final_n_x = Some(summarize_values(&values));
    }

    // Variance x CPU: the final-time value per variant.
    let mut var_cpu_final: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in &var_cpu_rows {
        match var_cpu_final.get(&r.variant) {
            Some(&(t, _)) if t >= r.t => {}
            _ => {
                var_cpu_final.insert(r.variant.clone(), (r.t, r.value));
            }
        }
    }
    for (variant, (_, value)) in var_cpu_final {
        entry(&mut variants, &variant);
        variants.get_mut(&variant).unwrap().evidence_var_x_cpu =
            Some(summarize_values(&[value]));
    }

    // Acceptance: all move rows per variant.
    let mut acc_by_variant: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &acceptance_rows {
        acc_by_variant.entry(r.variant.clone()).or_default().push(r.value);
    }
    for (variant, values) in acc_by_variant {
        entry(&mut variants, &variant);
        variants.get_mut(&variant).unwrap().pmmh_acceptance = Some(summarize_values(&values));
    }

    Ok(Summary { schema: SUMMARY_SCHEMA.to_string(), variants })
}
