//! Output records and file writers.
//!
//! Every record embeds the schema version and the config hash. Metric
//! records are fully deterministic for a given (config, seed); wall-clock
//! measurements are kept out of them and written to their own files
//! (`timings.json`, `unlearn_log.csv`) instead.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use unlearn_core::eval::MetricsReport;
use unlearn_core::outer::EpochLog;
use unlearn_core::RelabeledForgetSet;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub f_acc: f64,
    pub r_acc: f64,
    pub fr_ratio: Option<f64>,
    pub mia_mean: f64,
    pub mia_std: f64,
    #[serde(skip)]
    pub t_inner_s: f64,
    #[serde(skip)]
    pub t_outer_s: f64,
    #[serde(skip)]
    pub t_total_s: f64,
    #[serde(skip_serializing_if = "is_false")]
    pub mia_folds_reduced: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl MethodMetrics {
    pub fn from_report(method: &str, report: &MetricsReport, mia_folds_reduced: bool) -> Self {
        MethodMetrics {
            method: method.to_string(),
            f_acc: report.f_acc,
            r_acc: report.r_acc,
            fr_ratio: report.fr_ratio,
            mia_mean: report.mia_mean,
            mia_std: report.mia_std,
            t_inner_s: report.t_inner_s,
            t_outer_s: report.t_outer_s,
            t_total_s: report.t_total_s,
            mia_folds_reduced,
        }
    }
}

/// The deterministic per-run record behind `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub reports: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, Serialize)]
struct MethodTiming {
    method: String,
    t_inner_s: f64,
    t_outer_s: f64,
    t_total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TimingRecord {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    timings: Vec<MethodTiming>,
}

/// Refuses to overwrite a record written under a different config hash.
fn guard_hash(path: &Path, config_hash: &str) -> CliResult<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let existing: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => return Ok(()), // unreadable leftovers may be replaced
    };
    if let Some(found) = existing.get("config_hash").and_then(|v| v.as_str()) {
        if found != config_hash {
            return Err(CliError::Config(format!(
                "{} was written by a different config ({found}); refusing to overwrite",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, record: &T, config_hash: &str) -> CliResult<()> {
    guard_hash(path, config_hash)?;
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_metrics(dir: &Path, record: &RunRecord) -> CliResult<()> {
    write_json(&dir.join("metrics.json"), record, &record.config_hash)?;

    let timing = TimingRecord {
        schema_version: record.schema_version,
        config_hash: record.config_hash.clone(),
        seed: record.seed,
        timings: record
            .reports
            .iter()
            .map(|r| MethodTiming {
                method: r.method.clone(),
                t_inner_s: r.t_inner_s,
                t_outer_s: r.t_outer_s,
                t_total_s: r.t_total_s,
            })
            .collect(),
    };
    write_json(&dir.join("timings.json"), &timing, &record.config_hash)?;

    let mut csv = String::from(
        "schema_version,config_hash,seed,method,f_acc,r_acc,fr_ratio,mia_mean,mia_std,t_inner_s,t_outer_s,t_total_s\n",
    );
    for r in &record.reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            record.schema_version,
            record.config_hash,
            record.seed,
            r.method,
            r.f_acc,
            r.r_acc,
            r.fr_ratio.map_or(String::new(), |v| v.to_string()),
            r.mia_mean,
            r.mia_std,
            r.t_inner_s,
            r.t_outer_s,
            r.t_total_s,
        );
    }
    fs::write(dir.join("metrics.csv"), csv)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub fraction: Option<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub f_acc: f64,
    pub r_acc: f64,
    pub fr_ratio: Option<f64>,
    pub mia_mean: f64,
    pub mia_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
}

pub fn write_sweep(dir: &Path, record: &SweepRecord) -> CliResult<()> {
    write_json(&dir.join("sweep.json"), record, &record.config_hash)?;
    let mut csv = String::from(
        "schema_version,config_hash,seed,fraction,gamma,lambda,f_acc,r_acc,fr_ratio,mia_mean,mia_std\n",
    );
    for c in &record.cells {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            record.schema_version,
            record.config_hash,
            record.seed,
            c.fraction.map_or(String::new(), |v| v.to_string()),
            c.gamma,
            c.lambda,
            c.f_acc,
            c.r_acc,
            c.fr_ratio.map_or(String::new(), |v| v.to_string()),
            c.mia_mean,
            c.mia_std,
        );
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct AuditSample {
    row: usize,
    true_class: usize,
    y_boundary: usize,
    crossed: bool,
    steps_used: usize,
    delta_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AuditRecord {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    fraction_crossed: f64,
    samples: Vec<AuditSample>,
}

/// Per-sample boundary-search audit dump.
pub fn write_boundary_audit(
    dir: &Path,
    relabeled: &RelabeledForgetSet,
    config_hash: &str,
    seed: u64,
) -> CliResult<()> {
    let record = AuditRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        seed,
        fraction_crossed: relabeled.fraction_crossed,
        samples: relabeled
            .samples
            .iter()
            .map(|s| AuditSample {
                row: s.row,
                true_class: s.true_class,
                y_boundary: s.boundary.y_boundary,
                crossed: s.boundary.crossed,
                steps_used: s.boundary.steps_used,
                delta_l2: s.boundary.delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
            })
            .collect(),
    };
    write_json(&dir.join("boundary_audit.json"), &record, config_hash)
}

/// Per-epoch outer-loop training log.
pub fn write_unlearn_log(dir: &Path, logs: &[EpochLog]) -> CliResult<()> {
    let mut csv = String::from("epoch,forget_loss,remain_loss,wall_s\n");
    for l in logs {
        let _ = writeln!(csv, "{},{},{},{}", l.epoch, l.forget_loss, l.remain_loss, l.wall_s);
    }
    fs::write(dir.join("unlearn_log.csv"), csv)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<VerifyCheck>,
}

pub fn write_verify(dir: &Path, record: &VerifyRecord) -> CliResult<()> {
    write_json(&dir.join("verify.json"), record, &record.config_hash)
}
