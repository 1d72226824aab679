//! Round trace emission.
//!
//! One CSV row per round joins the optimization record (losses, update
//! norms) with the timing simulation (bytes on the wire, wall clock).
//! The writer is hand-rolled so the output is byte-exact across runs:
//! integers print plainly, floats print as `{:.16e}` (17 significant
//! digits, which round-trips every f64).
//!
//! Column semantics, fixed by [`TRACE_HEADER`]:
//!
//! * `round` — zero-based round index;
//! * `block_id` — one-based id of the block trained this round;
//! * `train_loss`, `block_grad_norm_sq` — noise-free full-batch values
//!   at the start-of-round server model;
//! * `delta_norm_sq` — squared norm of the aggregate computed this
//!   round (it lands `S` rounds later);
//! * `mean_client_delta_norm_sq` — cohort mean of upload norms;
//! * `bytes_up`, `bytes_down` — wire traffic during this round, which
//!   for the overlapped method is the previous round's exchange;
//! * `compute_time`, `comm_time`, `round_wall`, `cum_wall` — seconds,
//!   from the timing model. Flush traffic appears in the summary only.

use std::fmt::Write as _;

use crate::engine::{FedConfig, RoundRecord, RunResult};
use crate::netsim::{
    dense_payload_bytes, plan_timeline, simulate_timeline, ComputeSpec, LinkSpec, Method,
    RoundTiming, TimelinePlan, TimingTrace,
};
use crate::{Error, Result};

pub const TRACE_HEADER: &str = "round,block_id,train_loss,block_grad_norm_sq,delta_norm_sq,\
mean_client_delta_norm_sq,bytes_up,bytes_down,compute_time,comm_time,round_wall,cum_wall";

/// One emitted row; see the module docs for column semantics.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub block_id: usize,
    pub train_loss: f64,
    pub block_grad_norm_sq: f64,
    pub delta_norm_sq: f64,
    pub mean_client_delta_norm_sq: f64,
    pub bytes_up: f64,
    pub bytes_down: f64,
    pub compute_time: f64,
    pub comm_time: f64,
    pub round_wall: f64,
    pub cum_wall: f64,
}

/// Canonical float rendering: 17 significant digits, `e` notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Communication plan induced by a finished run: realized blocks and
/// cohorts drive the schedule; payload sizes follow the compression
/// settings. With uplink-only compression the broadcast stays dense
/// (the mean of sparse uploads has no guaranteed sparsity); with
/// `compress_downlink` both directions carry the compressed payload.
pub fn plan_for_run(
    method: Method,
    cfg: &FedConfig,
    result: &RunResult,
    full_broadcast: bool,
) -> Result<TimelinePlan> {
    let blocks: Vec<usize> = result.records.iter().map(|r| r.block.index0()).collect();
    let cohorts = result.cohorts();
    let mut up_bytes = Vec::with_capacity(cfg.partition.num_blocks());
    let mut down_bytes = Vec::with_capacity(cfg.partition.num_blocks());
    for b in cfg.partition.block_ids() {
        let d_b = cfg.partition.block_dim(b)?;
        let dense = dense_payload_bytes(d_b);
        match &cfg.compression {
            Some(c) => {
                up_bytes.push(c.payload_bytes(d_b));
                down_bytes.push(if cfg.compress_downlink {
                    c.payload_bytes(d_b)
                } else {
                    dense
                });
            }
            None => {
                up_bytes.push(dense);
                down_bytes.push(dense);
            }
        }
    }
    plan_timeline(
        method,
        &blocks,
        &cohorts,
        &up_bytes,
        &down_bytes,
        dense_payload_bytes(cfg.partition.dim()),
        cfg.staleness,
        full_broadcast,
    )
}

/// Timing simulation for a finished run under the given link and compute
/// specs (one of each per client). `batch_scale` rescales per-step cost
/// for minibatch size, 1.0 at the reference batch.
pub fn timing_for_run(
    method: Method,
    cfg: &FedConfig,
    result: &RunResult,
    links: &[LinkSpec],
    compute: &[ComputeSpec],
    batch_scale: f64,
    full_broadcast: bool,
) -> Result<TimingTrace> {
    let plan = plan_for_run(method, cfg, result, full_broadcast)?;
    simulate_timeline(&plan, links, compute, cfg.local_steps, batch_scale)
}

/// Join optimization records with the timing simulation, one row per
/// round. Both series must cover the same rounds in order.
pub fn merge_rows(records: &[RoundRecord], timing: &TimingTrace) -> Result<Vec<TraceRow>> {
    if records.len() != timing.rounds.len() {
        return Err(Error::Trace(format!(
            "{} optimization records but {} timed rounds",
            records.len(),
            timing.rounds.len()
        )));
    }
    let mut rows = Vec::with_capacity(records.len());
    for (rec, tim) in records.iter().zip(&timing.rounds) {
        rows.push(row_from(rec, tim));
    }
    Ok(rows)
}

fn row_from(rec: &RoundRecord, tim: &RoundTiming) -> TraceRow {
    TraceRow {
        round: rec.round,
        block_id: rec.block.get(),
        train_loss: rec.train_loss,
        block_grad_norm_sq: rec.block_grad_norm_sq,
        delta_norm_sq: rec.delta_norm_sq,
        mean_client_delta_norm_sq: rec.mean_client_delta_norm_sq,
        bytes_up: tim.bytes_up,
        bytes_down: tim.bytes_down,
        compute_time: tim.compute_time,
        comm_time: tim.comm_time,
        round_wall: tim.round_wall,
        cum_wall: tim.cum_wall,
    }
}

/// Render the full CSV (header plus rows, `\n` line endings).
pub fn render_trace(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 256);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.block_id,
            format_float(r.train_loss),
            format_float(r.block_grad_norm_sq),
            format_float(r.delta_norm_sq),
            format_float(r.mean_client_delta_norm_sq),
            format_float(r.bytes_up),
            format_float(r.bytes_down),
            format_float(r.compute_time),
            format_float(r.comm_time),
            format_float(r.round_wall),
            format_float(r.cum_wall),
        );
    }
    out
}

/// Parse a trace rendered by [`render_trace`]. Exact inverse: parsed
/// floats are bit-identical to the originals.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(Error::Trace(format!(
                "unexpected trace header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Trace(format!(
                "trace line {} has {} fields, expected 12",
                lineno + 2,
                fields.len()
            )));
        }
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::Trace(format!("line {}: bad integer {s:?}: {e}", lineno + 2)))
        };
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Trace(format!("line {}: bad float {s:?}: {e}", lineno + 2)))
        };
        rows.push(TraceRow {
            round: int(fields[0])?,
            block_id: int(fields[1])?,
            train_loss: num(fields[2])?,
            block_grad_norm_sq: num(fields[3])?,
            delta_norm_sq: num(fields[4])?,
            mean_client_delta_norm_sq: num(fields[5])?,
            bytes_up: num(fields[6])?,
            bytes_down: num(fields[7])?,
            compute_time: num(fields[8])?,
            comm_time: num(fields[9])?,
            round_wall: num(fields[10])?,
            cum_wall: num(fields[11])?,
        });
    }
    Ok(rows)
}

/// End-of-run summary, rendered as stable `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: String,
    pub rounds: usize,
    pub final_loss: f64,
    /// Wall clock including the finalization flush.
    pub total_wall: f64,
    pub flush_wall: f64,
    pub flush_bytes_up: f64,
    pub flush_bytes_down: f64,
    /// Totals over all rounds plus the flush.
    pub total_bytes_up: f64,
    pub total_bytes_down: f64,
}

impl Summary {
    pub fn new(method: &str, final_loss: f64, timing: &TimingTrace) -> Self {
        let rounds_up: f64 = timing.rounds.iter().map(|r| r.bytes_up).sum();
        let rounds_down: f64 = timing.rounds.iter().map(|r| r.bytes_down).sum();
        Self {
            method: method.to_string(),
            rounds: timing.rounds.len(),
            final_loss,
            total_wall: timing.total_wall,
            flush_wall: timing.flush_wall,
            flush_bytes_up: timing.flush_bytes_up,
            flush_bytes_down: timing.flush_bytes_down,
            total_bytes_up: rounds_up + timing.flush_bytes_up,
            total_bytes_down: rounds_down + timing.flush_bytes_down,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "method={}\nrounds={}\nfinal_loss={}\ntotal_wall={}\nflush_wall={}\n\
             flush_bytes_up={}\nflush_bytes_down={}\ntotal_bytes_up={}\ntotal_bytes_down={}\n",
            self.method,
            self.rounds,
            format_float(self.final_loss),
            format_float(self.total_wall),
            format_float(self.flush_wall),
            format_float(self.flush_bytes_up),
            format_float(self.flush_bytes_down),
            format_float(self.total_bytes_up),
            format_float(self.total_bytes_down),
        )
    }
}
