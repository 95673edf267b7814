use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    NoConnection,
    UnresolvedAddress,
    AmbiguousRemote,
    UnmatchedSend,
    UnmatchedRecv,
    AmbiguousMatch,
    OrphanUct,
    AmbiguousAssociation,
}

impl IssueKind {
    pub fn is_ambiguity(self) -> bool {
        matches!(self, IssueKind::AmbiguousRemote | IssueKind::AmbiguousMatch | IssueKind::AmbiguousAssociation)
    }
}

/// One op the correlator could not place; `seq` is the op's sequence number
/// in `proc`'s log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub proc: String,
    pub seq: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub schema_version: u32,
    pub processes: usize,
    pub uct_ops: usize,
    pub linked: usize,
    pub ucp_sends: usize,
    pub ucp_recvs: usize,
    pub ucp_pairs: usize,
    pub associated: usize,
    /// Endpoint sides classified as gpu.
    pub gpu_endpoints: usize,
    /// Processes without an allocation log; their buffers count as host.
    pub missing_alloc_logs: Vec<String>,
    pub issues: Vec<Issue>,
}

impl MatchReport {
    pub fn new(processes: usize) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            processes,
            uct_ops: 0,
            linked: 0,
            ucp_sends: 0,
            ucp_recvs: 0,
            ucp_pairs: 0,
            associated: 0,
            gpu_endpoints: 0,
            missing_alloc_logs: Vec::new(),
            issues: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, kind: IssueKind, proc: &str, seq: u64, detail: String) {
        self.issues.push(Issue { kind, proc: proc.to_string(), seq, detail });
    }

    pub fn count(&self, kind: IssueKind) -> usize {
        self.issues.iter().filter(|i| i.kind == kind).count()
    }

    pub fn ambiguities(&self) -> usize {
        self.issues.iter().filter(|i| i.kind.is_ambiguity()).count()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("report serializes");
        v.push(b'\n');
        v
    }
}
