//! The merged, attributed trace produced by the correlator.

use serde::{Deserialize, Serialize};

use super::records::{ProcessMeta, Transport, UcpOp, UctOp};
use super::topology::ClusterTopology;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Host,
    Gpu,
}

/// Sequence numbers of the matched ucp send and receive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UcpLink {
    pub send_proc: String,
    pub send_seq: u64,
    pub recv_proc: String,
    pub recv_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedComm {
    /// Process whose log recorded the operation.
    pub proc: String,
    #[serde(flatten)]
    pub op: UctOp,
    pub transport: Transport,
    pub src_proc: String,
    pub dst_proc: String,
    pub src_endpoint_kind: EndpointKind,
    pub dst_endpoint_kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_gpu: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_gpu: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_nic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_nic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpi_fn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucp_link: Option<UcpLink>,
}

impl CuratedComm {
    pub fn validate(&self) -> Result<(), String> {
        let id = format!("{}#{}", self.proc, self.op.seq);
        self.op.validate()?;
        if (self.src_endpoint_kind == EndpointKind::Gpu) != self.src_gpu.is_some() {
            return Err(format!("{id}: src_gpu must be present iff source is a gpu"));
        }
        if (self.dst_endpoint_kind == EndpointKind::Gpu) != self.dst_gpu.is_some() {
            return Err(format!("{id}: dst_gpu must be present iff target is a gpu"));
        }
        let ib = self.transport.requires_nic();
        if ib != self.src_nic.is_some() || ib != self.dst_nic.is_some() {
            return Err(format!("{id}: NIC fields must be present iff transport is rc/dc"));
        }
        if self.proc != self.src_proc && self.proc != self.dst_proc {
            return Err(format!("{id}: executing process is neither source nor target"));
        }
        Ok(())
    }

    pub fn t_end(&self) -> u64 {
        self.op.t_end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UcpPair {
    pub send_proc: String,
    pub recv_proc: String,
    pub send: UcpOp,
    pub recv: UcpOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedTrace {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<ClusterTopology>,
    pub processes: Vec<ProcessMeta>,
    pub comms: Vec<CuratedComm>,
    pub ucp_pairs: Vec<UcpPair>,
}

impl Default for CuratedTrace {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            topology: None,
            processes: Vec::new(),
            comms: Vec::new(),
            ucp_pairs: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CuratedError {
    #[error("schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed curated trace: {0}")]
    Malformed(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl CuratedTrace {
    pub fn process(&self, uid: &str) -> Option<&ProcessMeta> {
        self.processes.iter().find(|p| p.proc_uid == uid)
    }

    pub fn validate(&self) -> Result<(), String> {
        let known = |uid: &str| self.processes.iter().any(|p| p.proc_uid == uid);
        for c in &self.comms {
            c.validate()?;
            for p in [&c.proc, &c.src_proc, &c.dst_proc] {
                if !known(p) {
                    return Err(format!("comm references unknown process {p}"));
                }
            }
        }
        Ok(())
    }
}

pub fn write_curated(trace: &CuratedTrace) -> Result<Vec<u8>, CuratedError> {
    if trace.schema_version != SCHEMA_VERSION {
        return Err(CuratedError::InvariantViolation(format!(
            "cannot write schema version {}",
            trace.schema_version
        )));
    }
    trace.validate().map_err(CuratedError::InvariantViolation)?;
    let mut out = serde_json::to_vec(trace).expect("curated trace always serializes");
    out.push(b'\n');
    Ok(out)
}

pub fn read_curated(bytes: &[u8]) -> Result<CuratedTrace, CuratedError> {
    #[derive(Deserialize)]
    struct Header {
        schema_version: u32,
    }
    let header: Header =
        serde_json::from_slice(bytes).map_err(|e| CuratedError::Malformed(e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(CuratedError::VersionMismatch {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let trace: CuratedTrace =
        serde_json::from_slice(bytes).map_err(|e| CuratedError::Malformed(e.to_string()))?;
    trace.validate().map_err(CuratedError::Malformed)?;
    Ok(trace)
}
