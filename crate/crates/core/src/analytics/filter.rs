use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Analyzer;
use crate::model::{CuratedComm, Nanos, Transport, UctFn};

/// Label used for comms without an MPI function.
pub const UNATTRIBUTED: &str = "unattributed";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Bytes,
    Count,
}

impl Metric {
    pub fn of(self, c: &CuratedComm) -> u64 {
        match self {
            Metric::Bytes => c.op.length,
            Metric::Count => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bytes => "bytes",
            Metric::Count => "count",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bytes" => Ok(Metric::Bytes),
            "count" => Ok(Metric::Count),
            _ => Err(format!("unknown metric '{s}' (expected bytes or count)")),
        }
    }
}

/// Constraints on which curated comms a view considers. Empty sets and
/// absent bounds do not constrain. Node and process sets match a comm when
/// either its source or its target is listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub transports: BTreeSet<Transport>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub uct_fns: BTreeSet<UctFn>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub mpi_fns: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub nodes: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub procs: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<Nanos>,
    #[serde(default)]
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("UnknownProc: no process '{0}' in the trace")]
    UnknownProc(String),
    #[error("UnknownNode: no node '{0}' in the trace")]
    UnknownNode(String),
    #[error("t_min {t_min} is after t_max {t_max}")]
    EmptyTimeRange { t_min: Nanos, t_max: Nanos },
}

impl FilterSpec {
    pub fn is_unconstrained(&self) -> bool {
        self.transports.is_empty()
            && self.uct_fns.is_empty()
            && self.mpi_fns.is_empty()
            && self.nodes.is_empty()
            && self.procs.is_empty()
            && self.t_min.is_none()
            && self.t_max.is_none()
    }
}

impl Analyzer {
    pub fn validate_filter(&self, f: &FilterSpec) -> Result<(), FilterError> {
        if let (Some(t_min), Some(t_max)) = (f.t_min, f.t_max) {
            if t_min > t_max {
                return Err(FilterError::EmptyTimeRange { t_min, t_max });
            }
        }
        if let Some(p) = f.procs.iter().find(|p| !self.proc_index.contains_key(*p)) {
            return Err(FilterError::UnknownProc(p.clone()));
        }
        if let Some(n) = f.nodes.iter().find(|n| !self.nodes.contains(*n)) {
            return Err(FilterError::UnknownNode(n.clone()));
        }
        Ok(())
    }

    pub fn matches(&self, f: &FilterSpec, c: &CuratedComm) -> bool {
        if !f.transports.is_empty() && !f.transports.contains(&c.transport) {
            return false;
        }
        if !f.uct_fns.is_empty() && !f.uct_fns.contains(&c.op.uct_fn()) {
            return false;
        }
        if !f.mpi_fns.is_empty() && !f.mpi_fns.contains(c.mpi_fn.as_deref().unwrap_or(UNATTRIBUTED)) {
            return false;
        }
        if !f.procs.is_empty() && !f.procs.contains(&c.src_proc) && !f.procs.contains(&c.dst_proc) {
            return false;
        }
        if !f.nodes.is_empty() && !f.nodes.contains(self.node_of(&c.src_proc)) && !f.nodes.contains(self.node_of(&c.dst_proc)) {
            return false;
        }
        let t = c.op.t_start;
        f.t_min.is_none_or(|m| t >= m) && f.t_max.is_none_or(|m| t <= m)
    }

    /// The comms `f` keeps, in trace order.
    pub fn apply_filter(&self, f: &FilterSpec) -> Result<Vec<&CuratedComm>, FilterError> {
        self.validate_filter(f)?;
        Ok(self.trace.comms.iter().filter(|c| self.matches(f, c)).collect())
    }
}
