use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Analyzer, FilterSpec, Metric, UNATTRIBUTED};
use crate::model::SCHEMA_VERSION;

/// Traffic per MPI function within one non-empty cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixBreakdown {
    pub src: String,
    pub dst: String,
    pub by_mpi_fn: BTreeMap<String, u64>,
}

/// `cells[i][j]` holds traffic from `procs[i]` to `procs[j]`; processes are
/// in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommMatrix {
    pub schema_version: u32,
    pub metric: Metric,
    pub procs: Vec<String>,
    pub cells: Vec<Vec<u64>>,
    pub breakdown: Vec<MatrixBreakdown>,
}

impl CommMatrix {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn cell(&self, src: &str, dst: &str) -> Option<u64> {
        let i = self.procs.iter().position(|p| p == src)?;
        let j = self.procs.iter().position(|p| p == dst)?;
        Some(self.cells[i][j])
    }
}

impl Analyzer {
    pub fn comm_matrix(&self, f: &FilterSpec) -> Result<CommMatrix, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let n = self.trace.processes.len();
        let mut cells = vec![vec![0u64; n]; n];
        let mut breakdown: BTreeMap<(usize, usize), BTreeMap<String, u64>> = BTreeMap::new();
        for c in comms {
            let (i, j) = (self.rank_pos(&c.src_proc), self.rank_pos(&c.dst_proc));
            let v = f.metric.of(c);
            cells[i][j] += v;
            let label = c.mpi_fn.as_deref().unwrap_or(UNATTRIBUTED);
            *breakdown.entry((i, j)).or_default().entry(label.to_string()).or_insert(0) += v;
        }
        let procs: Vec<String> = self.trace.processes.iter().map(|p| p.proc_uid.clone()).collect();
        let breakdown = breakdown
            .into_iter()
            .map(|((i, j), by_mpi_fn)| MatrixBreakdown { src: procs[i].clone(), dst: procs[j].clone(), by_mpi_fn })
            .collect();
        Ok(CommMatrix { schema_version: SCHEMA_VERSION, metric: f.metric, procs, cells, breakdown })
    }
}
