//! Rebuilds cross-process communications from independently written
//! per-process logs.
//!
//! The work runs as a fixed sequence of passes over a read-only [`Index`]:
//! link each transport op to its remote process, match ucp sends with
//! receives, associate transport ops with a matched pair, then attribute
//! devices and MPI functions.

mod assoc;
mod device;
mod link;
mod report;
mod ucp;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

pub use assoc::Association;
pub use device::AllocIndex;
pub use link::{Link, LinkFailure};
pub use report::{Issue, IssueKind, MatchReport, REPORT_SCHEMA_VERSION};
pub use ucp::UcpMatching;

use crate::sim::emit::innermost_mpi;
use crate::model::{
    read_alloc_log_file, read_comm_log_file, AllocLog, ClusterTopology, CommLog, ConnectionRecord,
    CuratedComm, CuratedTrace, EndpointKind, EndpointRecord, EpId, IfaceId, InterfaceRecord,
    ProcessMeta, TraceFileError, UcpLink, UcpOp, UcpPair, UctFamily, UctOp, SCHEMA_VERSION,
};

pub const COMM_LOG_SUFFIX: &str = ".comm.log";
pub const ALLOC_LOG_SUFFIX: &str = ".alloc.log";
pub const TOPOLOGY_FILE: &str = "topology.json";

#[derive(Debug, thiserror::Error)]
pub enum CorrelateError {
    #[error(transparent)]
    Log(#[from] TraceFileError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no *{COMM_LOG_SUFFIX} files in {}", .0.display())]
    NoLogs(PathBuf),
    #[error("rank {0} appears in more than one log")]
    DuplicateRank(u32),
    #[error("process {0} appears in more than one log")]
    DuplicateProc(String),
    #[error("{}: {detail}", path.display())]
    Topology { path: PathBuf, detail: String },
}

#[derive(Debug, Clone)]
pub struct ProcessTrace {
    pub comm: CommLog,
    pub alloc: Option<AllocLog>,
}

/// The logs of one run, ordered by rank.
#[derive(Debug, Clone)]
pub struct TraceSet {
    processes: Vec<ProcessTrace>,
    topology: Option<ClusterTopology>,
}

impl TraceSet {
    pub fn new(
        mut processes: Vec<ProcessTrace>,
        topology: Option<ClusterTopology>,
    ) -> Result<Self, CorrelateError> {
        processes.sort_by_key(|p| p.comm.meta().rank);
        let mut uids = BTreeSet::new();
        for w in processes.windows(2) {
            if w[0].comm.meta().rank == w[1].comm.meta().rank {
                return Err(CorrelateError::DuplicateRank(w[0].comm.meta().rank));
            }
        }
        for p in &processes {
            if !uids.insert(p.comm.meta().proc_uid.clone()) {
                return Err(CorrelateError::DuplicateProc(p.comm.meta().proc_uid.clone()));
            }
        }
        Ok(Self { processes, topology })
    }

    /// Reads every `<uid>.comm.log` in `dir`, its `<uid>.alloc.log` when
    /// present, and `topology.json` when present.
    pub fn load_dir(dir: &Path) -> Result<Self, CorrelateError> {
        let io = |source| CorrelateError::Io { path: dir.to_path_buf(), source };
        let mut names = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let name = entry.map_err(io)?.file_name();
            if let Some(name) = name.to_str() {
                if name.ends_with(COMM_LOG_SUFFIX) {
                    names.push(name.to_string());
                }
            }
        }
        if names.is_empty() {
            return Err(CorrelateError::NoLogs(dir.to_path_buf()));
        }
        names.sort();
        let mut processes = Vec::with_capacity(names.len());
        for name in names {
            let comm = read_comm_log_file(&dir.join(&name))?;
            let stem = &name[..name.len() - COMM_LOG_SUFFIX.len()];
            let alloc_path = dir.join(format!("{stem}{ALLOC_LOG_SUFFIX}"));
            let alloc = if alloc_path.is_file() { Some(read_alloc_log_file(&alloc_path)?) } else { None };
            processes.push(ProcessTrace { comm, alloc });
        }
        let topo_path = dir.join(TOPOLOGY_FILE);
        let topology = if topo_path.is_file() {
            let bytes = std::fs::read(&topo_path)
                .map_err(|source| CorrelateError::Io { path: topo_path.clone(), source })?;
            let topo: ClusterTopology = serde_json::from_slice(&bytes)
                .map_err(|e| CorrelateError::Topology { path: topo_path.clone(), detail: e.to_string() })?;
            topo.validate()
                .map_err(|e| CorrelateError::Topology { path: topo_path.clone(), detail: e.to_string() })?;
            Some(topo)
        } else {
            None
        };
        Self::new(processes, topology)
    }

    pub fn from_sim(out: &crate::sim::SimOutput) -> Self {
        let processes = out
            .processes
            .iter()
            .map(|p| ProcessTrace { comm: p.comm.clone(), alloc: Some(p.alloc.clone()) })
            .collect();
        Self::new(processes, Some(out.topology.clone())).expect("simulator ranks are unique")
    }

    pub fn processes(&self) -> &[ProcessTrace] {
        &self.processes
    }

    pub fn topology(&self) -> Option<&ClusterTopology> {
        self.topology.as_ref()
    }

    /// The same set without the process `uid`.
    pub fn without(&self, uid: &str) -> Self {
        let processes =
            self.processes.iter().filter(|p| p.comm.meta().proc_uid != uid).cloned().collect();
        Self { processes, topology: self.topology.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelateOptions {
    /// Match ucp sends with receives and tie transport ops to them.
    pub ucp_attribution: bool,
    /// Classify endpoints as host or gpu from the allocation logs.
    pub device_attribution: bool,
    pub mpi_attribution: bool,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self { ucp_attribution: true, device_attribution: true, mpi_attribution: true }
    }
}

/// Position of an op: process index in the [`TraceSet`] and position among
/// that process's ops of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpRef {
    pub proc: usize,
    pub idx: usize,
}

pub(crate) struct ProcView<'a> {
    pub meta: &'a ProcessMeta,
    pub uct: Vec<&'a UctOp>,
    pub ucp: Vec<&'a UcpOp>,
    pub ifaces: HashMap<IfaceId, &'a InterfaceRecord>,
    pub eps: HashMap<EpId, &'a EndpointRecord>,
    /// Connections per endpoint, in log order.
    pub conns: HashMap<EpId, Vec<&'a ConnectionRecord>>,
    pub allocs: Option<AllocIndex>,
}

/// Read-only lookup tables shared by every pass.
pub(crate) struct Index<'a> {
    pub procs: Vec<ProcView<'a>>,
    pub by_uid: HashMap<&'a str, usize>,
    pub iface_addrs: HashMap<&'a [u8], Vec<(usize, IfaceId)>>,
    pub ep_addrs: HashMap<&'a [u8], Vec<(usize, EpId)>>,
}

impl<'a> Index<'a> {
    pub fn build(traces: &'a TraceSet) -> Self {
        let mut procs = Vec::with_capacity(traces.processes.len());
        let mut by_uid = HashMap::new();
        let mut iface_addrs: HashMap<&[u8], Vec<(usize, IfaceId)>> = HashMap::new();
        let mut ep_addrs: HashMap<&[u8], Vec<(usize, EpId)>> = HashMap::new();
        for (i, p) in traces.processes.iter().enumerate() {
            let log = &p.comm;
            by_uid.insert(log.meta().proc_uid.as_str(), i);
            let mut ifaces = HashMap::new();
            for f in log.ifaces() {
                ifaces.insert(f.iface_id, f);
                if let Some(addr) = &f.iface_addr {
                    iface_addrs.entry(addr.as_bytes()).or_default().push((i, f.iface_id));
                }
            }
            let mut eps = HashMap::new();
            for e in log.eps() {
                eps.insert(e.ep_id, e);
                if let Some(addr) = &e.ep_addr {
                    ep_addrs.entry(addr.as_bytes()).or_default().push((i, e.ep_id));
                }
            }
            let mut conns: HashMap<EpId, Vec<&ConnectionRecord>> = HashMap::new();
            for c in log.conns() {
                conns.entry(c.ep_id).or_default().push(c);
            }
            procs.push(ProcView {
                meta: log.meta(),
                uct: log.uct_ops().collect(),
                ucp: log.ucp_ops().collect(),
                ifaces,
                eps,
                conns,
                allocs: p.alloc.as_ref().map(AllocIndex::from_log),
            });
        }
        Self { procs, by_uid, iface_addrs, ep_addrs }
    }

    pub fn uid(&self, proc: usize) -> &'a str {
        &self.procs[proc].meta.proc_uid
    }

    pub fn ucp(&self, r: OpRef) -> &'a UcpOp {
        self.procs[r.proc].ucp[r.idx]
    }

    pub fn local_iface(&self, proc: usize, op: &UctOp) -> &'a InterfaceRecord {
        let p = &self.procs[proc];
        let ep = p.eps[&op.ep_id];
        p.ifaces[&ep.iface_id]
    }
}

/// Source and target process of an op executed by `exec` and linked to `peer`.
pub(crate) fn direction(op: &UctOp, exec: usize, peer: usize) -> (usize, usize) {
    match op.family {
        UctFamily::Get => (peer, exec),
        _ => (exec, peer),
    }
}

/// Runs every pass and returns the curated trace with its report.
pub fn correlate(traces: &TraceSet, opts: &CorrelateOptions) -> (CuratedTrace, MatchReport) {
    let ix = Index::build(traces);
    let mut report = MatchReport::new(traces.processes.len());
    for p in &traces.processes {
        if p.alloc.is_none() {
            report.missing_alloc_logs.push(p.comm.meta().proc_uid.clone());
        }
    }

    let links = link::link_all(&ix);
    for (proc, per) in links.iter().enumerate() {
        for (idx, l) in per.iter().enumerate() {
            report.uct_ops += 1;
            match l {
                Ok(_) => report.linked += 1,
                Err(f) => {
                    let op = ix.procs[proc].uct[idx];
                    report.push(f.issue_kind(), ix.uid(proc), op.seq, f.describe(&ix));
                }
            }
        }
    }

    let matching = if opts.ucp_attribution { ucp::match_ucp(&ix) } else { UcpMatching::default() };
    for p in &ix.procs {
        for op in &p.ucp {
            match op.dir {
                crate::model::UcpDir::Send => report.ucp_sends += 1,
                crate::model::UcpDir::Recv => report.ucp_recvs += 1,
            }
        }
    }
    report.ucp_pairs = matching.pairs.len();
    matching.report_into(&ix, &mut report);

    let assocs = if opts.ucp_attribution {
        assoc::associate(&ix, &links, &matching.pairs)
    } else {
        links.iter().map(|per| vec![None; per.len()]).collect()
    };

    let mut comms = Vec::new();
    for (proc, per) in links.iter().enumerate() {
        for (idx, l) in per.iter().enumerate() {
            let Ok(link) = l else { continue };
            let op = ix.procs[proc].uct[idx];
            let pair = match &assocs[proc][idx] {
                Some(Association::Pair(i)) => {
                    report.associated += 1;
                    Some(matching.pairs[*i])
                }
                Some(Association::Orphan) => {
                    report.push(IssueKind::OrphanUct, ix.uid(proc), op.seq, "no ucp pair fits".into());
                    None
                }
                Some(Association::Ambiguous(cands)) => {
                    let detail = cands
                        .iter()
                        .map(|&i| {
                            let (s, r) = matching.pairs[i];
                            format!(
                                "{}#{}->{}#{}",
                                ix.uid(s.proc),
                                ix.ucp(s).seq,
                                ix.uid(r.proc),
                                ix.ucp(r).seq
                            )
                        })
                        .collect::<Vec<_>>()
                        .join(", ");
                    report.push(IssueKind::AmbiguousAssociation, ix.uid(proc), op.seq, detail);
                    None
                }
                None => None,
            };
            let comm = curate(&ix, opts, proc, op, link, pair);
            report.gpu_endpoints += [comm.src_endpoint_kind, comm.dst_endpoint_kind]
                .iter()
                .filter(|k| **k == EndpointKind::Gpu)
                .count();
            let (src, _) = direction(op, proc, link.peer);
            comms.push(((src, proc, op.seq), comm));
        }
    }
    comms.sort_by_key(|c| c.0);

    let ucp_pairs = matching
        .pairs
        .iter()
        .map(|&(s, r)| UcpPair {
            send_proc: ix.uid(s.proc).to_string(),
            recv_proc: ix.uid(r.proc).to_string(),
            send: ix.ucp(s).clone(),
            recv: ix.ucp(r).clone(),
        })
        .collect();

    let trace = CuratedTrace {
        schema_version: SCHEMA_VERSION,
        topology: traces.topology.clone(),
        processes: ix.procs.iter().map(|p| p.meta.clone()).collect(),
        comms: comms.into_iter().map(|(_, c)| c).collect(),
        ucp_pairs,
    };
    debug_assert_eq!(trace.validate(), Ok(()));
    (trace, report)
}

fn curate(
    ix: &Index,
    opts: &CorrelateOptions,
    exec: usize,
    op: &UctOp,
    link: &Link,
    pair: Option<(OpRef, OpRef)>,
) -> CuratedComm {
    let local = ix.local_iface(exec, op);
    let (src, dst) = direction(op, exec, link.peer);
    let (src_nic, dst_nic) = if local.transport.requires_nic() {
        let remote_nic = link
            .peer_iface
            .and_then(|id| ix.procs[link.peer].ifaces.get(&id))
            .and_then(|f| f.net_device.clone());
        let local_nic = local.net_device.clone();
        match op.family {
            UctFamily::Get => (remote_nic, local_nic),
            _ => (local_nic, remote_nic),
        }
    } else {
        (None, None)
    };
    let (src_gpu, dst_gpu) = if opts.device_attribution {
        (
            device::side_device(ix, exec, link.peer, op, pair, true),
            device::side_device(ix, exec, link.peer, op, pair, false),
        )
    } else {
        (None, None)
    };
    let mpi_fn = if !opts.mpi_attribution {
        None
    } else {
        let stack = match pair {
            Some((send, _)) => &ix.ucp(send).callstack,
            None => &op.callstack,
        };
        innermost_mpi(stack).map(str::to_string)
    };
    let kind = |g: Option<u32>| if g.is_some() { EndpointKind::Gpu } else { EndpointKind::Host };
    CuratedComm {
        proc: ix.uid(exec).to_string(),
        op: op.clone(),
        transport: local.transport,
        src_proc: ix.uid(src).to_string(),
        dst_proc: ix.uid(dst).to_string(),
        src_endpoint_kind: kind(src_gpu),
        dst_endpoint_kind: kind(dst_gpu),
        src_gpu,
        dst_gpu,
        src_nic,
        dst_nic,
        mpi_fn,
        ucp_link: pair.map(|(s, r)| UcpLink {
            send_proc: ix.uid(s.proc).to_string(),
            send_seq: ix.ucp(s).seq,
            recv_proc: ix.uid(r.proc).to_string(),
            recv_seq: ix.ucp(r).seq,
        }),
    }
}
