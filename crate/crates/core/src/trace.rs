//! Per-iteration solve traces and their CSV serialization.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// One recorded iteration. Optional columns are written as empty CSV fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// Objective sample at the end of the iteration.
    pub obj: f64,
    /// Norm of the sampled primal gradient used this iteration.
    pub primal_grad_norm: f64,
    /// `P(w_k) - P*` when oracles are attached.
    pub primal_gap: Option<f64>,
    /// Mean (over blocks) squared moving-average tracking error when an
    /// exact-h oracle is attached.
    pub ma_error: Option<f64>,
    /// Loss part of the objective (RO-TS traces only).
    pub loss_term: Option<f64>,
    /// Alignment-regularizer part of the objective (RO-TS traces only).
    pub reg_term: Option<f64>,
}

impl TraceRow {
    /// A row with only the always-present columns; diagnostics start empty.
    pub fn new(k: usize, obj: f64, primal_grad_norm: f64) -> Self {
        TraceRow {
            k,
            obj,
            primal_grad_norm,
            primal_gap: None,
            ma_error: None,
            loss_term: None,
            reg_term: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    /// Free-form `key=value` annotations (resolved hyperparameters, flags).
    pub notes: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl SolveTrace {
    pub fn new() -> Self {
        SolveTrace::default()
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.notes.push(format!("{key}={value}"));
    }

    /// Render the trace as CSV. Notes become leading `#` comment lines.
    /// Traces that carry loss/regularizer splits get the two extra columns.
    pub fn to_csv(&self) -> String {
        let extended = self.rows.iter().any(|r| r.loss_term.is_some());
        let mut out = String::new();
        for note in &self.notes {
            let _ = writeln!(out, "# {note}");
        }
        if extended {
            out.push_str("k,obj,primal_grad_norm,primal_gap,ma_error,obj_loss_term,obj_reg_term\n");
        } else {
            out.push_str("k,obj,primal_grad_norm,primal_gap,ma_error\n");
        }
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.k,
                r.obj,
                r.primal_grad_norm,
                fmt_opt(r.primal_gap),
                fmt_opt(r.ma_error)
            );
            if extended {
                let _ = write!(out, ",{},{}", fmt_opt(r.loss_term), fmt_opt(r.reg_term));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> crate::Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| crate::CoreError::io(path.display().to_string(), e))
    }

    /// Last recorded value of a column, if any row carries it.
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.primal_gap)
    }

    pub fn final_ma_error(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.ma_error)
    }
}
