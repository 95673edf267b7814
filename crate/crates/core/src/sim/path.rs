//! Protocol expansion: which transport operations carry one logical message.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{BufferKind, ProtocolConfig, RndvScheme, SHORT_MAX};
use super::plan::LogicalMessage;
use super::SimError;
use crate::model::{ClusterTopology, Transport, UctFamily, UctFn, UctMode};

/// A buffer named by its role in the message. Bounce and staging buffers
/// are host memory owned by the given rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufRef {
    SendUser,
    RecvUser,
    Bounce(u32),
    Staging(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpRole {
    /// Rendezvous notification or an empty message.
    Header,
    /// Moves payload towards the receiver.
    Data,
    /// Device/host copy inserted for a rank whose GPU sits on the wrong NUMA domain.
    Staging,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedUctOp {
    pub exec_rank: u32,
    /// Remote end of the endpoint; equals `exec_rank` for loopback copies.
    pub peer_rank: u32,
    pub func: UctFn,
    pub transport: Transport,
    pub length: u64,
    pub role: OpRole,
    pub local_buf: Option<BufRef>,
    pub remote_buf: Option<BufRef>,
    pub local_nic: Option<String>,
    pub remote_nic: Option<String>,
    /// Receiver-side rendezvous read, issued from the receiver's progress loop.
    pub rndv_read: bool,
}

impl PlannedUctOp {
    pub fn is_loopback(&self) -> bool {
        self.exec_rank == self.peer_rank
    }
}

impl fmt::Display for BufRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufRef::SendUser => f.write_str("send"),
            BufRef::RecvUser => f.write_str("recv"),
            BufRef::Bounce(r) => write!(f, "bounce@{r}"),
            BufRef::Staging(r) => write!(f, "staging@{r}"),
        }
    }
}

impl fmt::Display for PlannedUctOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            OpRole::Header => "header",
            OpRole::Data => "data",
            OpRole::Staging => "staging",
        };
        let opt = |b: Option<BufRef>| b.map_or("-".to_string(), |b| b.to_string());
        let nic = |n: &Option<String>| n.clone().unwrap_or_else(|| "-".into());
        write!(
            f,
            "{} {}@{}->{} len={} {} local={} remote={} nic={}/{}",
            self.func,
            self.transport,
            self.exec_rank,
            self.peer_rank,
            self.length,
            role,
            opt(self.local_buf),
            opt(self.remote_buf),
            nic(&self.local_nic),
            nic(&self.remote_nic),
        )
    }
}

const AM_SHORT: UctFn = UctFn::new(UctFamily::Am, UctMode::Short);
const AM_BCOPY: UctFn = UctFn::new(UctFamily::Am, UctMode::Bcopy);
const AM_ZCOPY: UctFn = UctFn::new(UctFamily::Am, UctMode::Zcopy);
const PUT_SHORT: UctFn = UctFn::new(UctFamily::Put, UctMode::Short);
const PUT_ZCOPY: UctFn = UctFn::new(UctFamily::Put, UctMode::Zcopy);
const GET_SHORT: UctFn = UctFn::new(UctFamily::Get, UctMode::Short);
const GET_ZCOPY: UctFn = UctFn::new(UctFamily::Get, UctMode::Zcopy);

/// Per-side facts needed to pick a route.
struct Side {
    rank: u32,
    gpu: bool,
    numa_ok: bool,
    /// NIC used by InfiniBand traffic from this side.
    nic: Option<String>,
}

impl Side {
    fn resolve(rank: u32, kind: BufferKind, topo: &ClusterTopology) -> Result<Self, SimError> {
        let node = topo.node_of(rank).ok_or_else(|| SimError::NoRoute {
            src: rank,
            dst: rank,
            detail: format!("rank {rank} is not in the topology"),
        })?;
        let gpu = match kind {
            BufferKind::Host => None,
            BufferKind::Gpu => Some(topo.gpu_of(rank).ok_or_else(|| SimError::NoRoute {
                src: rank,
                dst: rank,
                detail: format!("rank {rank} has no GPU for a device buffer"),
            })?),
        };
        let numa_ok = topo.numa_correct(rank);
        let nic = match gpu {
            Some(g) if numa_ok => node.nic_for_gpu(g).or(node.first_nic()),
            _ => node.first_nic(),
        };
        Ok(Self { rank, gpu: gpu.is_some(), numa_ok, nic: nic.map(str::to_string) })
    }

    /// A GPU side whose device traffic must pass through host staging.
    fn stages(&self) -> bool {
        self.gpu && !self.numa_ok
    }
}

struct Builder {
    ops: Vec<PlannedUctOp>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        exec: &Side,
        peer: &Side,
        func: UctFn,
        transport: Transport,
        length: u64,
        role: OpRole,
        local_buf: Option<BufRef>,
        remote_buf: Option<BufRef>,
    ) {
        let ib = transport.requires_nic();
        self.ops.push(PlannedUctOp {
            exec_rank: exec.rank,
            peer_rank: peer.rank,
            func,
            transport,
            length,
            role,
            local_buf,
            remote_buf,
            local_nic: if ib { exec.nic.clone() } else { None },
            remote_nic: if ib { peer.nic.clone() } else { None },
            rndv_read: false,
        });
    }

    /// Loopback copy between a rank's own buffers.
    #[allow(clippy::too_many_arguments)]
    fn copy(&mut self, side: &Side, func: UctFn, transport: Transport, length: u64, role: OpRole, local: BufRef, remote: BufRef) {
        self.push(side, side, func, transport, length, role, Some(local), Some(remote));
    }
}

pub fn ib_transport(topo: &ClusterTopology, config: &ProtocolConfig) -> Transport {
    if topo.total_ranks() >= config.dc_task_threshold {
        Transport::DcMlx5
    } else {
        Transport::RcMlx5
    }
}

/// Expands one message into the transport operations that carry it.
pub fn select_path(
    msg: &LogicalMessage,
    kind: BufferKind,
    topo: &ClusterTopology,
    config: &ProtocolConfig,
) -> Result<Vec<PlannedUctOp>, SimError> {
    let src = Side::resolve(msg.src_rank, kind, topo)?;
    let dst = Side::resolve(msg.dst_rank, kind, topo)?;
    let no_route = |detail: &str| SimError::NoRoute { src: msg.src_rank, dst: msg.dst_rank, detail: detail.into() };
    let intra = topo.same_node(src.rank, dst.rank);
    let ib = ib_transport(topo, config);
    let bytes = msg.bytes;
    let eager = config.eager_enabled && bytes < config.rndv_thresh;
    let mut b = Builder { ops: Vec::new() };

    if bytes == 0 {
        let t = if intra { Transport::Sysv } else { ib };
        if t.requires_nic() && (src.nic.is_none() || dst.nic.is_none()) {
            return Err(no_route("no NIC for inter-node traffic"));
        }
        b.push(&src, &dst, AM_SHORT, t, 0, OpRole::Header, None, None);
        return Ok(b.ops);
    }

    let gpu = src.gpu && dst.gpu;
    if intra && !gpu {
        let f = if bytes <= SHORT_MAX { AM_SHORT } else { AM_BCOPY };
        b.push(&src, &dst, f, Transport::Sysv, bytes, OpRole::Data, None, None);
        return Ok(b.ops);
    }
    if intra && eager {
        // GPU -> bounce, shared memory to the peer, bounce -> GPU
        b.copy(&src, GET_SHORT, Transport::GdrCopy, bytes, OpRole::Data, BufRef::Bounce(src.rank), BufRef::SendUser);
        b.push(&src, &dst, AM_BCOPY, Transport::Sysv, bytes, OpRole::Data, None, None);
        b.copy(&dst, PUT_SHORT, Transport::GdrCopy, bytes, OpRole::Data, BufRef::Bounce(dst.rank), BufRef::RecvUser);
        return Ok(b.ops);
    }
    if intra && config.cuda_ipc_enabled {
        match config.rndv_scheme {
            RndvScheme::Put => {
                b.push(&src, &dst, PUT_ZCOPY, Transport::CudaIpc, bytes, OpRole::Data, Some(BufRef::SendUser), Some(BufRef::RecvUser));
            }
            RndvScheme::Get | RndvScheme::Auto => {
                b.push(&dst, &src, GET_ZCOPY, Transport::CudaIpc, bytes, OpRole::Data, Some(BufRef::RecvUser), Some(BufRef::SendUser));
                b.ops[0].rndv_read = true;
            }
        }
        return Ok(b.ops);
    }

    // everything else crosses the InfiniBand fabric
    if src.nic.is_none() || dst.nic.is_none() {
        return Err(no_route("no NIC available"));
    }

    if eager && !gpu {
        let f = if bytes <= SHORT_MAX { AM_SHORT } else { AM_BCOPY };
        b.push(&src, &dst, f, ib, bytes, OpRole::Data, None, None);
        return Ok(b.ops);
    }

    // where IB reads from / writes to on each side
    let src_ib_buf = if src.stages() {
        b.copy(&src, GET_ZCOPY, Transport::CudaCopy, bytes, OpRole::Staging, BufRef::Staging(src.rank), BufRef::SendUser);
        BufRef::Staging(src.rank)
    } else {
        BufRef::SendUser
    };
    let dst_ib_buf = if dst.stages() { BufRef::Staging(dst.rank) } else { BufRef::RecvUser };

    if eager {
        // GPU eager: active message to the peer's bounce buffer, then GDR into the GPU
        b.push(&src, &dst, AM_ZCOPY, ib, bytes, OpRole::Data, Some(src_ib_buf), None);
        b.copy(&dst, PUT_SHORT, Transport::GdrCopy, bytes, OpRole::Data, BufRef::Bounce(dst.rank), BufRef::RecvUser);
        return Ok(b.ops);
    }

    let scheme = match config.rndv_scheme {
        RndvScheme::Auto => {
            let node = topo.node_of(dst.rank).expect("resolved above");
            let idx = dst.nic.as_deref().and_then(|n| node.nic_index(n)).unwrap_or(0);
            if idx % 2 == 0 {
                RndvScheme::Get
            } else {
                RndvScheme::Put
            }
        }
        s => s,
    };
    b.push(&src, &dst, AM_SHORT, ib, 0, OpRole::Header, None, None);
    match scheme {
        RndvScheme::Put => {
            let src_buf = if gpu && !src.stages() {
                b.copy(&src, GET_ZCOPY, Transport::CudaCopy, bytes, OpRole::Data, BufRef::Staging(src.rank), BufRef::SendUser);
                BufRef::Staging(src.rank)
            } else {
                src_ib_buf
            };
            b.push(&src, &dst, PUT_ZCOPY, ib, bytes, OpRole::Data, Some(src_buf), Some(dst_ib_buf));
        }
        _ => {
            b.push(&dst, &src, GET_ZCOPY, ib, bytes, OpRole::Data, Some(dst_ib_buf), Some(src_ib_buf));
            b.ops.last_mut().expect("just pushed").rndv_read = true;
        }
    }
    if dst.stages() {
        b.copy(&dst, PUT_ZCOPY, Transport::CudaCopy, bytes, OpRole::Staging, BufRef::Staging(dst.rank), BufRef::RecvUser);
    }
    Ok(b.ops)
}
