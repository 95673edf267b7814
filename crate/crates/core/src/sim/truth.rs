use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::path::OpRole;
use crate::model::{CuratedComm, CuratedTrace, EndpointKind, Transport, UcpDir, UcpLink, UcpPair};

pub const TRUTH_SCHEMA_VERSION: u32 = 1;

/// What the correlator should recover for one emitted transport operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UctTruth {
    pub proc: String,
    pub seq: u64,
    pub transport: Transport,
    pub role: OpRole,
    pub src_proc: String,
    pub dst_proc: String,
    pub src_endpoint_kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_gpu: Option<u32>,
    pub dst_endpoint_kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_gpu: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_nic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_nic: Option<String>,
    pub ucp_link: UcpLink,
    /// Function of the originating send call.
    pub mpi_fn: String,
    /// Innermost MPI frame of the operation's own call stack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpi_fn_own_stack: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UcpTruth {
    pub proc: String,
    pub seq: u64,
    pub dir: UcpDir,
    pub peer_proc: String,
    pub partner_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub uct: Vec<UctTruth>,
    pub ucp: Vec<UcpTruth>,
}

impl Default for GroundTruth {
    fn default() -> Self {
        Self { schema_version: TRUTH_SCHEMA_VERSION, uct: Vec::new(), ucp: Vec::new() }
    }
}

impl GroundTruth {
    /// Differences between this truth and a curated trace, one line each.
    /// `mpi_fn` is compared against the send-call function.
    pub fn diff(&self, trace: &CuratedTrace) -> Vec<String> {
        let mut out = Vec::new();
        let comms: HashMap<(&str, u64), &CuratedComm> =
            trace.comms.iter().map(|c| ((c.proc.as_str(), c.op.seq), c)).collect();
        if comms.len() != self.uct.len() {
            out.push(format!("{} curated comms, {} expected", comms.len(), self.uct.len()));
        }
        for t in &self.uct {
            let id = format!("{}#{}", t.proc, t.seq);
            let Some(c) = comms.get(&(t.proc.as_str(), t.seq)) else {
                out.push(format!("{id}: missing"));
                continue;
            };
            let mut check = |field: &str, ok: bool, got: String, want: String| {
                if !ok {
                    out.push(format!("{id}: {field} is {got}, expected {want}"));
                }
            };
            check("transport", c.transport == t.transport, c.transport.to_string(), t.transport.to_string());
            check("src_proc", c.src_proc == t.src_proc, c.src_proc.clone(), t.src_proc.clone());
            check("dst_proc", c.dst_proc == t.dst_proc, c.dst_proc.clone(), t.dst_proc.clone());
            check(
                "src",
                (c.src_endpoint_kind, c.src_gpu) == (t.src_endpoint_kind, t.src_gpu),
                format!("{:?}/{:?}", c.src_endpoint_kind, c.src_gpu),
                format!("{:?}/{:?}", t.src_endpoint_kind, t.src_gpu),
            );
            check(
                "dst",
                (c.dst_endpoint_kind, c.dst_gpu) == (t.dst_endpoint_kind, t.dst_gpu),
                format!("{:?}/{:?}", c.dst_endpoint_kind, c.dst_gpu),
                format!("{:?}/{:?}", t.dst_endpoint_kind, t.dst_gpu),
            );
            check(
                "nics",
                (&c.src_nic, &c.dst_nic) == (&t.src_nic, &t.dst_nic),
                format!("{:?}/{:?}", c.src_nic, c.dst_nic),
                format!("{:?}/{:?}", t.src_nic, t.dst_nic),
            );
            check(
                "ucp_link",
                c.ucp_link.as_ref() == Some(&t.ucp_link),
                format!("{:?}", c.ucp_link),
                format!("{:?}", t.ucp_link),
            );
            check(
                "mpi_fn",
                c.mpi_fn.as_deref() == Some(t.mpi_fn.as_str()),
                format!("{:?}", c.mpi_fn),
                t.mpi_fn.clone(),
            );
        }
        let pairs: HashMap<(&str, u64), &UcpPair> =
            trace.ucp_pairs.iter().map(|p| ((p.send_proc.as_str(), p.send.seq), p)).collect();
        let sends = self.ucp.iter().filter(|u| u.dir == UcpDir::Send).count();
        if pairs.len() != sends {
            out.push(format!("{} ucp pairs, {} expected", pairs.len(), sends));
        }
        for u in self.ucp.iter().filter(|u| u.dir == UcpDir::Send) {
            match pairs.get(&(u.proc.as_str(), u.seq)) {
                Some(p) if p.recv_proc == u.peer_proc && p.recv.seq == u.partner_seq => {}
                Some(p) => out.push(format!(
                    "ucp {}#{}: paired with {}#{}, expected {}#{}",
                    u.proc, u.seq, p.recv_proc, p.recv.seq, u.peer_proc, u.partner_seq
                )),
                None => out.push(format!("ucp {}#{}: unpaired", u.proc, u.seq)),
            }
        }
        out
    }
}
