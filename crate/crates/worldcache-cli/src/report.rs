//! Report documents and their writers.
//!
//! `report.json` carries run-level totals plus wall timings; `steps.csv`
//! carries per-step telemetry without wall columns, so byte-identical
//! output across runs of the same seed is guaranteed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Print a status line, ignoring a closed stdout (e.g. piping into
/// `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
pub(crate) use say;

use serde::{Deserialize, Serialize};
use worldcache::engine::{RunMode, RunReport, StepTelemetry};

use crate::config::{runtime_err, CliError};

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub policy: String,
    pub mode: String,
    pub scenario: String,
    pub seed: u64,
    pub total_steps: usize,
    pub hits: usize,
    pub misses: usize,
    pub skip_rate: f64,
    pub total_cost: f64,
    pub full_cost: f64,
    pub simulated_speedup: f64,
    pub final_output_error: Option<f64>,
    pub mean_hit_error: Option<f64>,
    pub mean_gamma: Option<f64>,
    pub mean_gamma_scalar: Option<f64>,
    pub wall: WallDoc,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WallDoc {
    pub total_s: f64,
    pub probe_s: f64,
    pub signals_s: f64,
    pub decide_s: f64,
    pub deep_s: f64,
    pub approx_s: f64,
    pub flow_s: f64,
}

impl ReportDoc {
    pub fn from_run(report: &RunReport, scenario: &str, seed: u64) -> Self {
        let mut wall = WallDoc { total_s: report.wall_total_s, ..WallDoc::default() };
        for step in &report.steps {
            wall.probe_s += step.wall.probe_s;
            wall.signals_s += step.wall.signals_s;
            wall.decide_s += step.wall.decide_s;
            wall.deep_s += step.wall.deep_s;
            wall.approx_s += step.wall.approx_s;
            wall.flow_s += step.wall.flow_s;
        }
        ReportDoc {
            policy: report.policy.as_str().to_string(),
            mode: match report.mode {
                RunMode::ClosedLoop => "closed-loop",
                RunMode::OpenLoop => "open-loop",
            }
            .to_string(),
            scenario: scenario.to_string(),
            seed,
            total_steps: report.total_steps,
            hits: report.hits,
            misses: report.misses,
            skip_rate: report.skip_rate,
            total_cost: report.total_cost,
            full_cost: report.full_cost,
            simulated_speedup: report.simulated_speedup,
            final_output_error: report.final_output_error,
            mean_hit_error: report.mean_hit_error,
            mean_gamma: report.mean_gamma,
            mean_gamma_scalar: report.mean_gamma_scalar,
            wall,
        }
    }
}

fn cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => String::new(),
    }
}

pub const STEPS_HEADER: &str = "step,decision,raw_drift,swd_drift,velocity,threshold,gamma,\
                                gamma_raw,gamma_scalar,warp_used,flow_max_px,cost,oracle_error";

pub fn steps_csv(steps: &[StepTelemetry]) -> String {
    let mut out = String::new();
    out.push_str(STEPS_HEADER);
    out.push('\n');
    for s in steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.decision.kind.as_str(),
            s.raw_drift,
            s.swd_drift,
            cell(&s.velocity),
            s.decision.threshold_used,
            cell(&s.gamma),
            cell(&s.gamma_raw),
            cell(&s.gamma_scalar),
            s.warp_used,
            cell(&s.flow_max_px),
            s.cost_spent,
            cell(&s.oracle_error),
        );
    }
    out
}

/// One row of a threshold or parameter sweep.
#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub hits: usize,
    pub skip_rate: f64,
    pub simulated_speedup: f64,
    pub final_output_error: Option<f64>,
    pub mean_hit_error: Option<f64>,
}

impl SweepRow {
    pub fn from_run(value: f64, report: &RunReport) -> Self {
        SweepRow {
            value,
            hits: report.hits,
            skip_rate: report.skip_rate,
            simulated_speedup: report.simulated_speedup,
            final_output_error: report.final_output_error,
            mean_hit_error: report.mean_hit_error,
        }
    }
}

pub fn sweep_csv(key: &str, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{key},hits,skip_rate,simulated_speedup,final_output_error,mean_hit_error"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.value,
            r.hits,
            r.skip_rate,
            r.simulated_speedup,
            cell(&r.final_output_error),
            cell(&r.mean_hit_error),
        );
    }
    out
}

/// One row of a policy comparison table.
#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub hits: usize,
    pub misses: usize,
    pub skip_rate: f64,
    pub total_cost: f64,
    pub simulated_speedup: f64,
    pub final_output_error: Option<f64>,
    pub mean_hit_error: Option<f64>,
}

impl CompareRow {
    pub fn from_run(label: &str, report: &RunReport) -> Self {
        CompareRow {
            label: label.to_string(),
            hits: report.hits,
            misses: report.misses,
            skip_rate: report.skip_rate,
            total_cost: report.total_cost,
            simulated_speedup: report.simulated_speedup,
            final_output_error: report.final_output_error,
            mean_hit_error: report.mean_hit_error,
        }
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(
        "policy,hits,misses,skip_rate,total_cost,simulated_speedup,final_output_error,mean_hit_error\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.label,
            r.hits,
            r.misses,
            r.skip_rate,
            r.total_cost,
            r.simulated_speedup,
            cell(&r.final_output_error),
            cell(&r.mean_hit_error),
        );
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(runtime_err)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_header_has_thirteen_columns() {
        let header = steps_csv(&[]);
        let line = header.lines().next().unwrap();
        assert_eq!(line.split(',').count(), 13);
        assert!(line.starts_with("step,decision"));
        assert!(line.ends_with("cost,oracle_error"));
    }

    #[test]
    fn empty_optionals_become_empty_cells() {
        assert_eq!(cell::<f64>(&None), "");
        assert_eq!(cell(&Some(1.5)), "1.5");
    }
}
