//! Training-log writers: the metrics CSV and the per-factor E[π] trace.

use std::path::Path;

use crate::error::Result;
use crate::inference::trainer::{RunLog, TrainTrace};
use crate::io::write_atomic;

/// Write the metrics CSV (`iter,eta,mse,mean_card,active_factors,objective`)
/// for a run, atomically. Identical runs produce byte-identical files.
pub fn write_metrics_csv(path: &Path, log: &RunLog) -> Result<()> {
    write_atomic(path, log.metrics_csv().as_bytes())
}

/// Write the E[π] snapshots captured at each log point: header
/// `iter,pi_0,…,pi_{K-1}`, one row per snapshot.
pub fn write_pi_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let k = trace.expected_pi.first().map_or(0, |(_, pis)| pis.len());
    let mut out = String::from("iter");
    for i in 0..k {
        out.push_str(&format!(",pi_{i}"));
    }
    out.push('\n');
    for (iter, pis) in &trace.expected_pi {
        out.push_str(&iter.to_string());
        for p in pis {
            out.push(',');
            out.push_str(&p.to_string());
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
