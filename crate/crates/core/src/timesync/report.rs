use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{NodeId, RunStats, SimTime, TraceRecord};

use super::protocol::ExchangeTimestamps;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub true_time: SimTime,
    pub node: NodeId,
    /// Node clock minus grandmaster clock.
    pub residual_ps: i64,
    pub online: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub true_time: SimTime,
    pub node: NodeId,
    pub seq: u32,
    pub timestamps: ExchangeTimestamps,
    pub sync_correction_ps: i64,
    pub delay_req_correction_ps: i64,
    pub offset_ps: i64,
    pub mean_path_delay_ps: i64,
    /// Slave minus master clock offset when the Sync arrived.
    pub true_offset_ps: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub nodes: usize,
    pub samples: usize,
    pub convergence_time_ps: Option<u64>,
    pub post_convergence_samples: usize,
    pub p50_residual_ps: Option<u64>,
    pub p95_residual_ps: Option<u64>,
    pub p99_residual_ps: Option<u64>,
    pub max_residual_ps: Option<u64>,
    pub mean_residual_ps: Option<f64>,
    pub offline_nodes: usize,
    pub events_processed: u64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Clone, Debug)]
pub struct SyncReport {
    pub samples: Vec<ResidualSample>,
    pub exchanges: Vec<ExchangeRecord>,
    pub lock_times: BTreeMap<NodeId, Option<SimTime>>,
    pub offline: BTreeMap<u32, SimTime>,
    pub last_sent: BTreeMap<NodeId, SimTime>,
    pub stats: RunStats,
    pub trace: Vec<TraceRecord>,
    convergence: Option<SimTime>,
}

impl SyncReport {
    pub fn new(
        samples: Vec<ResidualSample>,
        exchanges: Vec<ExchangeRecord>,
        lock_times: BTreeMap<NodeId, Option<SimTime>>,
        offline: BTreeMap<u32, SimTime>,
        last_sent: BTreeMap<NodeId, SimTime>,
        stats: RunStats,
        trace: Vec<TraceRecord>,
    ) -> Self {
        let ran_offline = |n: &NodeId| match n {
            NodeId::Tile(t) => offline.contains_key(t),
            _ => false,
        };
        let mut convergence = Some(SimTime::ZERO);
        for (node, lock) in &lock_times {
            if ran_offline(node) {
                continue;
            }
            convergence = match (convergence, lock) {
                (Some(c), Some(l)) => Some(c.max(*l)),
                _ => None,
            };
        }
        SyncReport {
            samples,
            exchanges,
            lock_times,
            offline,
            last_sent,
            stats,
            trace,
            convergence,
        }
    }

    /// First time every node that stayed powered had its servo locked.
    pub fn convergence_time(&self) -> Option<SimTime> {
        self.convergence
    }

    /// Online samples taken at or after convergence.
    pub fn post_convergence(&self) -> impl Iterator<Item = &ResidualSample> {
        let from = self.convergence.unwrap_or(SimTime::MAX);
        self.samples
            .iter()
            .filter(move |s| s.online && s.true_time >= from)
    }

    pub fn node_residuals(&self, node: NodeId) -> Vec<i64> {
        self.post_convergence()
            .filter(|s| s.node == node)
            .map(|s| s.residual_ps)
            .collect()
    }

    pub fn node_series(&self, node: NodeId) -> Vec<ResidualSample> {
        self.samples
            .iter()
            .filter(|s| s.node == node)
            .copied()
            .collect()
    }

    pub fn percentile_abs_ps(&self, pct: f64) -> Option<u64> {
        let mut v: Vec<u64> = self
            .post_convergence()
            .map(|s| s.residual_ps.unsigned_abs())
            .collect();
        v.sort_unstable();
        nearest_rank(&v, pct)
    }

    pub fn summary(&self) -> SyncSummary {
        let post: Vec<i64> = self.post_convergence().map(|s| s.residual_ps).collect();
        let mut abs: Vec<u64> = post.iter().map(|r| r.unsigned_abs()).collect();
        abs.sort_unstable();
        SyncSummary {
            nodes: self.lock_times.len(),
            samples: self.samples.len(),
            convergence_time_ps: self.convergence.map(|c| c.as_ps()),
            post_convergence_samples: post.len(),
            p50_residual_ps: nearest_rank(&abs, 50.0),
            p95_residual_ps: nearest_rank(&abs, 95.0),
            p99_residual_ps: nearest_rank(&abs, 99.0),
            max_residual_ps: abs.last().copied(),
            mean_residual_ps: (!post.is_empty())
                .then(|| post.iter().map(|&r| r as f64).sum::<f64>() / post.len() as f64),
            offline_nodes: self.offline.len(),
            events_processed: self.stats.processed,
        }
    }

    pub fn write_residuals_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["true_time_ps", "node_id", "residual_ps"])?;
        for s in &self.samples {
            w.write_record([
                s.true_time.as_ps().to_string(),
                s.node.to_string(),
                s.residual_ps.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_summary_json(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary())?;
        writeln!(f)
    }
}
