//! Run traces: one row per iteration, serializable to CSV.
//!
//! The column set is dynamic. Every trace carries `t`, `max_message_delta`,
//! and the estimate components `x0..x{n-1}`. A `bound_value` column appears
//! when the run was given bound parameters, `grid_m` when a grid engine
//! produced the trace, and `event_vertex` / `lag_max` when an asynchronous
//! schedule drove the run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

/// Parameters of the geometric error bound `K lambda^t / (1 - lambda) * gap`,
/// where `gap` is the initialization gap summed over directed channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub k: f64,
    pub lambda: f64,
    pub gap: f64,
}

impl BoundParams {
    pub fn value(&self, t: usize) -> f64 {
        self.k * self.lambda.powi(t as i32) / (1.0 - self.lambda) * self.gap
    }
}

/// Options shared by every engine run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Maximum number of iterations (trace rows beyond the initial one).
    pub horizon: usize,
    /// Stop early once the largest message change falls to this value.
    pub tol: f64,
    /// When present, each row gains `bound_value = bound.value(t)`.
    pub bound: Option<BoundParams>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { horizon: 100, tol: 1e-12, bound: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// Largest absolute change in any message coefficient this iteration;
    /// NaN on the initial row.
    pub max_message_delta: f64,
    pub estimate: Vec<f64>,
    pub bound_value: Option<f64>,
    /// Vertices whose outgoing messages updated at this event (async runs).
    pub event: Option<Vec<usize>>,
    /// Largest read lag used by this event (async runs).
    pub lag_max: Option<usize>,
}

impl TraceRow {
    pub fn new(t: usize, max_message_delta: f64, estimate: Vec<f64>) -> Self {
        TraceRow {
            t,
            max_message_delta,
            estimate,
            bound_value: None,
            event: None,
            lag_max: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Grid resolution, for traces produced by the piecewise engine.
    pub grid_m: Option<usize>,
    /// True when the run stopped because the message delta reached the
    /// requested tolerance before the horizon.
    pub converged: bool,
    /// True when a divergence guard aborted the run early.
    pub diverged: bool,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn final_estimate(&self) -> &[f64] {
        self.rows.last().map(|r| r.estimate.as_slice()).unwrap_or(&[])
    }

    /// Estimate at iteration `t` (rows are checked, not assumed positional).
    pub fn estimate_at(&self, t: usize) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.t == t).map(|r| r.estimate.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map(|r| r.estimate.len()).unwrap_or(0);
        let with_bound = self.rows.iter().any(|r| r.bound_value.is_some());
        let with_events = self.rows.iter().any(|r| r.event.is_some());
        let mut out = String::new();
        out.push_str("t,max_message_delta");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        if with_bound {
            out.push_str(",bound_value");
        }
        if self.grid_m.is_some() {
            out.push_str(",grid_m");
        }
        if with_events {
            out.push_str(",event_vertex,lag_max");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.t, row.max_message_delta);
            for v in &row.estimate {
                let _ = write!(out, ",{v}");
            }
            if with_bound {
                match row.bound_value {
                    Some(b) => {
                        let _ = write!(out, ",{b}");
                    }
                    None => out.push(','),
                }
            }
            if let Some(m) = self.grid_m {
                let _ = write!(out, ",{m}");
            }
            if with_events {
                match &row.event {
                    Some(vs) => {
                        let joined: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                        let _ = write!(out, ",{}", joined.join(";"));
                    }
                    None => out.push(','),
                }
                match row.lag_max {
                    Some(l) => {
                        let _ = write!(out, ",{l}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
