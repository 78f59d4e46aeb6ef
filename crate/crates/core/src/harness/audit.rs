//! Per-epoch spanner and elimination audit extracted from a run record.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::harness::experiment::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub controller: String,
    pub horizon: usize,
    pub seed: u64,
    pub epoch: usize,
    pub epsilon: f64,
    pub t_r: usize,
    pub start: usize,
    pub end: Option<usize>,
    pub elements: usize,
    pub log_abs_det: Option<f64>,
    pub oracle_calls: Option<usize>,
    pub swaps: Option<usize>,
    pub certified: Option<bool>,
    pub region_min: Option<f64>,
    pub threshold: Option<f64>,
    pub warning: Option<String>,
}

/// The `epochs` array of a controller audit, looking through wrappers.
fn epochs(audit: &Value) -> Option<&Vec<Value>> {
    match audit.get("epochs") {
        Some(Value::Array(e)) => Some(e),
        _ => audit.get("inner").and_then(epochs),
    }
}

/// One row per epoch of every cell whose controller logs epochs, optionally
/// restricted to one controller label.
pub fn spanner_audit(record: &RunRecord, controller: Option<&str>) -> Vec<AuditRow> {
    let mut rows = Vec::new();
    for cell in &record.cells {
        if controller.is_some_and(|c| c != cell.controller) {
            continue;
        }
        let Some(list) = epochs(&cell.audit) else { continue };
        for e in list {
            let uint = |k: &str| e.get(k).and_then(Value::as_u64).map(|v| v as usize);
            let float = |k: &str| e.get(k).and_then(Value::as_f64);
            rows.push(AuditRow {
                controller: cell.controller.clone(),
                horizon: cell.horizon,
                seed: cell.seed,
                epoch: uint("epoch").unwrap_or(0),
                epsilon: float("epsilon").unwrap_or(f64::NAN),
                t_r: uint("t_r").unwrap_or(0),
                start: uint("start").unwrap_or(0),
                end: uint("end"),
                elements: e.get("spanner").and_then(Value::as_array).map_or(0, Vec::len),
                log_abs_det: float("spanner_log_abs_det"),
                oracle_calls: uint("spanner_oracle_calls"),
                swaps: uint("spanner_swaps"),
                certified: e.get("spanner_certified").and_then(Value::as_bool),
                region_min: float("region_min"),
                threshold: float("threshold"),
                warning: e.get("warning").and_then(Value::as_str).map(str::to_string),
            });
        }
    }
    rows
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn opt_f(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn format_audit(rows: &[AuditRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>7} {:>5} {:>3} {:>9} {:>7} {:>7} {:>7} {:>4} {:>9} {:>6} {:>5} {:>5} {:>10} {:>10}",
        "controller", "T", "seed", "r", "eps", "T_r", "start", "end", "d+1", "log|det|", "calls", "swaps", "cert", "min", "threshold"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>5} {:>3} {:>9.5} {:>7} {:>7} {:>7} {:>4} {:>9} {:>6} {:>5} {:>5} {:>10} {:>10}",
            r.controller,
            r.horizon,
            r.seed,
            r.epoch,
            r.epsilon,
            r.t_r,
            r.start,
            opt(&r.end),
            r.elements,
            opt_f(r.log_abs_det, 3),
            opt(&r.oracle_calls),
            opt(&r.swaps),
            opt(&r.certified),
            opt_f(r.region_min, 5),
            opt_f(r.threshold, 5),
        );
        if let Some(w) = &r.warning {
            let _ = writeln!(out, "    warning: {w}");
        }
    }
    out
}
