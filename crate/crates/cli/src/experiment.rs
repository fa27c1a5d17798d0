//! Multi-seed experiment orchestration: the run plan, parallel execution,
//! trace emission, figure tables, and the manifest that accounts for every
//! output file.

use crate::config::ExperimentConfig;
use crate::summary::{figtable_to_csv, FigRow};
use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smc2::{trace_to_csv, Dataset, Smc2Config, TraceRow, Variant};
use std::path::Path;

pub const MANIFEST_SCHEMA: &str = "smc2-manifest-v1";

/// One planned engine run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub variant: Variant,
    pub tau: f64,
    pub seed: u64,
    /// Run family: the variant name, with the calibration target appended
    /// for sweep runs. Used in file names and figure rows.
    pub label: String,
    /// True for calibration-target sweep runs (excluded from the variance
    /// figure, which compares the main variants).
    pub sweep: bool,
}

impl RunSpec {
    pub fn trace_file(&self) -> String {
        format!("trace_{}_seed{}.csv", self.label, self.seed)
    }
}

/// Main runs for every (variant, seed), then sweep runs pairing each extra
/// calibration target with the full-Gibbs variant.
pub fn build_plan(config: &ExperimentConfig) -> Vec<RunSpec> {
    let mut plan = Vec::new();
    for variant in config.resolved_variants() {
        for &seed in &config.seeds {
            plan.push(RunSpec {
                variant,
                tau: config.engine.tau,
                seed,
                label: variant.name().to_string(),
                sweep: false,
            });
        }
    }
    for &tau in &config.tau_sweep {
        for &seed in &config.seeds {
            plan.push(RunSpec {
                variant: Variant::FullGibbs,
                tau,
                seed,
                label: format!("full_gibbs_tau{tau}"),
                sweep: true,
            });
        }
    }
    plan
}

/// Outcome of one run, as recorded in the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub variant: String,
    pub tau: f64,
    pub seed: u64,
    pub trace: Option<String>,
    /// "ok", "degenerate: ...", or "error: ...". Degenerate runs still carry
    /// their partial trace.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_n_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior_mean: Option<Vec<f64>>,
}

/// The experiment's full accounting: config echo, seeds, and every output
/// file, in plan order. Deliberately free of timestamps so reruns of the
/// same config are byte-identical (when per-step timing is off).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub build: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub figures: Vec<String>,
}

pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub degenerate: usize,
    pub errored: usize,
}

struct RunResult {
    record: RunRecord,
    trace_rows: Option<Vec<TraceRow>>,
    sweep: bool,
}

pub fn run_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| anyhow!("cannot create output directory {}: {e}", out_dir.display()))?;
    let model = config.build_model()?;
    let plan = build_plan(config);

    let results: Vec<RunResult> = plan
        .par_iter()
        .map(|spec| {
            let run_config = Smc2Config {
                variant: spec.variant,
                tau: spec.tau,
                seed: spec.seed,
                ..config.engine.clone()
            };
            let base = RunRecord {
                label: spec.label.clone(),
                variant: spec.variant.name().to_string(),
                tau: spec.tau,
                seed: spec.seed,
                trace: None,
                status: String::new(),
                log_evidence: None,
                final_n_x: None,
                posterior_mean: None,
            };
            match smc2::run(&run_config, model.as_ref(), data) {
                Ok(out) => {
                    let ok = out.failure.is_none();
                    let record = RunRecord {
                        trace: Some(spec.trace_file()),
                        status: match &out.failure {
                            None => "ok".to_string(),
                            Some(e) => format!("degenerate: {e}"),
                        },
                        log_evidence: ok
                            .then_some(out.state.log_evidence)
                            .filter(|z| z.is_finite()),
                        final_n_x: Some(out.state.current_n_x),
                        posterior_mean: ok.then(|| out.state.posterior_mean()),
                        ..base
                    };
                    RunResult { record, trace_rows: Some(out.state.trace), sweep: spec.sweep }
                }
                Err(e) => RunResult {
                    record: RunRecord { status: format!("error: {e}"), ..base },
                    trace_rows: None,
                    sweep: spec.sweep,
                },
            }
        })
        .collect();

    for result in &results {
        if let (Some(name), Some(rows)) = (&result.record.trace, &result.trace_rows) {
            std::fs::write(out_dir.join(name), trace_to_csv(rows))
                .map_err(|e| anyhow!("cannot write {name}: {e}"))?;
        }
    }
    let figures = write_figures(out_dir, &results)?;

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        build: format!("smc2-cli {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        seeds: config.seeds.clone(),
        runs: results.iter().map(|r| r.record.clone()).collect(),
        figures,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), manifest_json + "\n")?;

    let degenerate = manifest.runs.iter().filter(|r| r.status.starts_with("degenerate")).count();
    let errored = manifest.runs.iter().filter(|r| r.status.starts_with("error")).count();
    Ok(ExperimentOutcome { manifest, degenerate, errored })
}

/// Projects the collected traces into the four long-format figure tables.
/// Every emitted number is recomputable from the trace CSVs alone.
fn write_figures(out_dir: &Path, results: &[RunResult]) -> Result<Vec<String>> {
    let mut nx_rows = Vec::new();
    let mut acceptance_rows = Vec::new();
    let mut posterior_rows = Vec::new();
    for result in results {
        let Some(rows) = &result.trace_rows else { continue };
        let label = &result.record.label;
        let seed = result.record.seed;
        for row in rows {
            nx_rows.push(FigRow {
                variant: label.clone(),
                seed,
                t: row.t,
                metric: "n_x".to_string(),
                value: row.n_x as f64,
            });
            if row.pmmh_attempts > 0 {
                acceptance_rows.push(FigRow {
                    variant: label.clone(),
                    seed,
                    t: row.t,
                    metric: "pmmh_acceptance".to_string(),
                    value: row.pmmh_accepts as f64 / row.pmmh_attempts as f64,
                });
            }
        }
        if let (Some(mean), Some(last)) = (&result.record.posterior_mean, rows.last()) {
            for (k, &value) in mean.iter().enumerate() {
                posterior_rows.push(FigRow {
                    variant: label.clone(),
                    seed,
                    t: last.t,
                    metric: format!("posterior_mean_theta{k}"),
                    value,
                });
            }
        }
    }

    // Across-seed variance of the log evidence times across-seed mean
    // per-step wall time, per main variant and time step. Sweep runs and
    // incomplete (degenerate) traces do not enter.
    let mut variance_rows = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for r in results {
        if !r.sweep && !labels.contains(&r.record.label) {
            labels.push(r.record.label.clone());
        }
    }
    for label in &labels {
        let series: Vec<&Vec<TraceRow>> = results
            .iter()
            .filter(|r| !r.sweep && &r.record.label == label && r.record.status == "ok")
            .filter_map(|r| r.trace_rows.as_ref())
            .collect();
        if series.is_empty() {
            continue;
        }
        let t_len = series.iter().map(|s| s.len()).min().unwrap();
        for t in 0..t_len {
            let logz: Vec<f64> = series.iter().map(|s| s[t].log_evidence).collect();
            if logz.iter().any(|z| !z.is_finite()) {
                continue;
            }
            let cpu: Vec<f64> = series.iter().map(|s| s[t].elapsed_s).collect();
            let n = logz.len() as f64;
            let mean = logz.iter().sum::<f64>() / n;
            let variance = if logz.len() < 2 {
                0.0
            } else {
                logz.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)
            };
            let mean_cpu = cpu.iter().sum::<f64>() / n;
            variance_rows.push(FigRow {
                variant: label.clone(),
                seed: 0,
                t: series[0][t].t,
                metric: "logz_var_x_mean_cpu".to_string(),
                value: variance * mean_cpu,
            });
        }
    }

    let tables: [(&str, &[FigRow], Option<&str>); 4] = [
        ("fig2_nx_vs_t.csv", &nx_rows, None),
        (
            "fig3_evidence_var_cpu.csv",
            &variance_rows,
            Some(
                "value: across-seed sample variance (n-1) of log_evidence times \
                 across-seed mean elapsed_s, from the trace CSVs; seed column is 0",
            ),
        ),
        ("fig4_pmmh_acceptance.csv", &acceptance_rows, None),
        ("fig5_posterior_estimates.csv", &posterior_rows, None),
    ];
    let mut names = Vec::new();
    for (name, rows, note) in tables {
        std::fs::write(out_dir.join(name), figtable_to_csv(rows, note))
            .map_err(|e| anyhow!("cannot write {name}: {e}"))?;
        names.push(name.to_string());
    }
    Ok(names)
}
