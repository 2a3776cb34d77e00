//! Metrics CSV format and reward-curve smoothing.
//!
//! The CSV is a pure function of the step reports: fixed header, fixed
//! decimal places, one row per step. Two runs with the same config and seed
//! therefore produce byte-identical files.

use crate::trainer::StepReport;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const CSV_HEADER: &str =
    "step,mean_reward,objective,grad_norm,groups_sampled,groups_accepted,eval_reward,wall_ms";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics parse error at line {0}: {1}")]
    Parse(usize, String),
}

pub fn metrics_to_string(reports: &[StepReport]) -> String {
    assert!(!reports.is_empty(), "no reports to write");
    let mut out = String::with_capacity(64 * (reports.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let eval = match r.eval_reward {
            Some(v) => format!("{v:.6}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{}\n",
            r.step,
            r.mean_reward,
            r.objective,
            r.grad_norm,
            r.filter.groups_sampled,
            r.filter.groups_accepted,
            eval,
            r.wall_ms
        ));
    }
    out
}

/// Writes the metrics CSV; one row per report after the header.
pub fn write_metrics(reports: &[StepReport], path: &Path) -> Result<(), MetricsError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(metrics_to_string(reports).as_bytes())?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_reward: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub groups_sampled: u64,
    pub groups_accepted: u64,
    pub eval_reward: Option<f64>,
    pub wall_ms: u64,
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(MetricsError::Parse(1, "bad or missing header".into())),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(MetricsError::Parse(lineno + 1, "expected 8 fields".into()));
        }
        let num = |s: &str| -> Result<f64, MetricsError> {
            s.parse()
                .map_err(|_| MetricsError::Parse(lineno + 1, format!("bad number {s:?}")))
        };
        let int = |s: &str| -> Result<u64, MetricsError> {
            s.parse()
                .map_err(|_| MetricsError::Parse(lineno + 1, format!("bad integer {s:?}")))
        };
        rows.push(MetricsRow {
            step: int(fields[0])?,
            mean_reward: num(fields[1])?,
            objective: num(fields[2])?,
            grad_norm: num(fields[3])?,
            groups_sampled: int(fields[4])?,
            groups_accepted: int(fields[5])?,
            eval_reward: if fields[6].is_empty() {
                None
            } else {
                Some(num(fields[6])?)
            },
            wall_ms: int(fields[7])?,
        });
    }
    Ok(rows)
}

/// Trailing moving average: entry t is the mean of the last `window` values
/// up to and including t.
pub fn trailing_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i.min(window - 1) + 1) as f64);
    }
    out
}
