//! Views over a curated trace: communication matrix, process and device
//! graphs, timeline, and top contenders, all under one [`FilterSpec`].
//!
//! Every view is a pure function of the trace and the filter, so an
//! [`Analyzer`] can be shared across threads.

mod filter;
mod graph;
mod matrix;
mod timeline;
mod top;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use filter::{FilterError, FilterSpec, Metric, UNATTRIBUTED};
pub use graph::{DeviceEdge, DeviceGraph, DeviceKind, DevicePath, DeviceVertex, ProcessGraph, ProcessVertex, Shape, WeightedEdge};
pub use matrix::{CommMatrix, MatrixBreakdown};
pub use timeline::{ProcSeries, Span, Timeline, DEFAULT_BIN_COUNT, MAX_TIMELINE_BINS};
pub use top::{TopContenders, TopRow};

use crate::model::{CuratedTrace, Nanos, Transport, UctFn, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("bin width must be positive")]
    ZeroBin,
    #[error("timeline would need {bins} bins (limit {max}); use a wider bin")]
    TooManyBins { bins: u64, max: u64 },
    #[error("curated trace is inconsistent: {0}")]
    InvalidTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Matrix,
    Pgraph,
    Dgraph,
    Timeline,
    Top,
    Summary,
    Options,
}

impl View {
    pub const ALL: [View; 7] =
        [View::Matrix, View::Pgraph, View::Dgraph, View::Timeline, View::Top, View::Summary, View::Options];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Matrix => "matrix",
            View::Pgraph => "pgraph",
            View::Dgraph => "dgraph",
            View::Timeline => "timeline",
            View::Top => "top",
            View::Summary => "summary",
            View::Options => "options",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        View::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = View::ALL.iter().map(|v| v.as_str()).collect();
            format!("unknown view '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub processes: usize,
    pub nodes: usize,
    pub comms: usize,
    pub bytes: u64,
    pub ucp_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<Nanos>,
    /// Comm count per transport.
    pub by_transport: BTreeMap<Transport, u64>,
}

/// Every value a filter field can usefully take on this trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub schema_version: u32,
    pub transports: Vec<Transport>,
    pub uct_fns: Vec<UctFn>,
    pub mpi_fns: Vec<String>,
    pub nodes: Vec<String>,
    pub procs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<Nanos>,
    pub metrics: Vec<Metric>,
}

/// A curated trace with lookup tables for the views.
#[derive(Debug, Clone)]
pub struct Analyzer {
    trace: CuratedTrace,
    /// Process uid to position in rank order.
    proc_index: HashMap<String, usize>,
    /// Node names ordered by their lowest rank.
    node_order: Vec<String>,
    nodes: BTreeSet<String>,
}

impl Analyzer {
    pub fn new(mut trace: CuratedTrace) -> Result<Self, AnalyticsError> {
        trace.validate().map_err(AnalyticsError::InvalidTrace)?;
        trace.processes.sort_by_key(|p| p.rank);
        let proc_index = trace.processes.iter().enumerate().map(|(i, p)| (p.proc_uid.clone(), i)).collect();
        let mut node_order: Vec<String> = Vec::new();
        for p in &trace.processes {
            if !node_order.contains(&p.node) {
                node_order.push(p.node.clone());
            }
        }
        let nodes = node_order.iter().cloned().collect();
        Ok(Self { trace, proc_index, node_order, nodes })
    }

    pub fn trace(&self) -> &CuratedTrace {
        &self.trace
    }

    pub(crate) fn node_of(&self, proc: &str) -> &str {
        self.proc_index.get(proc).map(|&i| self.trace.processes[i].node.as_str()).unwrap_or("")
    }

    pub(crate) fn rank_pos(&self, proc: &str) -> usize {
        self.proc_index.get(proc).copied().unwrap_or(usize::MAX)
    }

    pub(crate) fn node_color(&self, node: &str) -> usize {
        self.node_order.iter().position(|n| n == node).unwrap_or(usize::MAX)
    }

    pub fn summary(&self, f: &FilterSpec) -> Result<Summary, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let mut by_transport = BTreeMap::new();
        for c in &comms {
            *by_transport.entry(c.transport).or_insert(0) += 1;
        }
        Ok(Summary {
            schema_version: SCHEMA_VERSION,
            processes: self.trace.processes.len(),
            nodes: self.nodes.len(),
            comms: comms.len(),
            bytes: comms.iter().map(|c| c.op.length).sum(),
            ucp_pairs: self.trace.ucp_pairs.len(),
            t_min: comms.iter().map(|c| c.op.t_start).min(),
            t_max: comms.iter().map(|c| c.t_end()).max(),
            by_transport,
        })
    }

    pub fn filter_options(&self) -> FilterOptions {
        let comms = &self.trace.comms;
        let transports: BTreeSet<Transport> = comms.iter().map(|c| c.transport).collect();
        let uct_fns: BTreeSet<UctFn> = comms.iter().map(|c| c.op.uct_fn()).collect();
        let mpi_fns: BTreeSet<String> =
            comms.iter().map(|c| c.mpi_fn.clone().unwrap_or_else(|| UNATTRIBUTED.to_string())).collect();
        FilterOptions {
            schema_version: SCHEMA_VERSION,
            transports: transports.into_iter().collect(),
            uct_fns: uct_fns.into_iter().collect(),
            mpi_fns: mpi_fns.into_iter().collect(),
            nodes: self.node_order.clone(),
            procs: self.trace.processes.iter().map(|p| p.proc_uid.clone()).collect(),
            t_min: comms.iter().map(|c| c.op.t_start).min(),
            t_max: comms.iter().map(|c| c.t_end()).max(),
            metrics: vec![Metric::Bytes, Metric::Count],
        }
    }

    /// One view as a compact JSON document. `bin_ns` only affects the
    /// timeline; without it the filtered span is split into
    /// [`DEFAULT_BIN_COUNT`] bins.
    pub fn render(&self, view: View, f: &FilterSpec, bin_ns: Option<u64>) -> Result<Vec<u8>, AnalyticsError> {
        fn json<T: Serialize>(v: &T) -> Vec<u8> {
            serde_json::to_vec(v).expect("views serialize")
        }
        Ok(match view {
            View::Matrix => json(&self.comm_matrix(f)?),
            View::Pgraph => json(&self.process_graph(f)?),
            View::Dgraph => json(&self.device_graph(f)?),
            View::Timeline => {
                let bin = match bin_ns {
                    Some(b) => b,
                    None => self.default_bin_ns(f)?,
                };
                json(&self.timeline(f, bin)?)
            }
            View::Top => json(&self.top_contenders(f)?),
            View::Summary => json(&self.summary(f)?),
            View::Options => {
                self.validate_filter(f)?;
                json(&self.filter_options())
            }
        })
    }
}
