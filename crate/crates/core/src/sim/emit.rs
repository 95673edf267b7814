//! Turns planned messages into timed, per-process log records.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AllreduceAlg, AllreduceStyle, BufferKind, Pattern, ProtocolConfig, Scenario, WorkloadSpec};
use super::path::{select_path, BufRef, PlannedUctOp};
use super::plan::{plan_with_tags, LogicalMessage, TagAllocator};
use super::truth::{GroundTruth, UcpTruth, UctTruth};
use super::SimError;
use crate::completion::{CompletionRegistry, SlotTicket};
use crate::model::{
    AddressBlob, AllocEvent, AllocLog, ClusterTopology, CommLog, CommRecord, ConnectionRecord, EndpointKind,
    EndpointRecord, EpId, IfaceId, InterfaceRecord, ProcessMeta, RemoteKind, Transport, UcpDir, UcpEpId, UcpLink,
    UcpOp, UctFamily, UctMode, UctOp,
};

/// All timestamps are offsets from a trace epoch one second before this.
pub const EPOCH_NS: u64 = 1_000_000_000;
const SETUP_NS: u64 = 1_000_000;
const PHASE_GAP_NS: u64 = 20_000_000;
const POST_WINDOW_NS: u64 = 10_000;
const SEND_GAP_NS: u64 = 2_000;
const ROUND_GAP_NS: u64 = 1_000;
const ISSUE_NS: u64 = 100;

#[derive(Debug, Clone)]
pub struct SimMessage {
    pub msg: LogicalMessage,
    pub kind: BufferKind,
    pub workload: usize,
    pub ops: Vec<PlannedUctOp>,
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub uid: String,
    pub rank: u32,
    pub comm: CommLog,
    pub alloc: AllocLog,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub topology: ClusterTopology,
    pub processes: Vec<ProcessOutput>,
    pub messages: Vec<SimMessage>,
    pub truth: GroundTruth,
}

impl SimOutput {
    pub fn uct_op_count(&self) -> usize {
        self.messages.iter().map(|m| m.ops.len()).sum()
    }

    /// Every output file as (name, bytes), in a fixed order.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        for p in &self.processes {
            files.push((format!("{}.comm.log", p.uid), p.comm.to_bytes()));
            files.push((format!("{}.alloc.log", p.uid), p.alloc.to_bytes()));
        }
        let mut truth = serde_json::to_vec(&self.truth).expect("ground truth serializes");
        truth.push(b'\n');
        files.push(("ground-truth.json".into(), truth));
        let mut topo = serde_json::to_vec_pretty(&self.topology).expect("topology serializes");
        topo.push(b'\n');
        files.push(("topology.json".into(), topo));
        files
    }
}

/// Simulates a single workload.
pub fn emit(workload: &WorkloadSpec, topology: &ClusterTopology, config: &ProtocolConfig) -> Result<SimOutput, SimError> {
    simulate(&Scenario { topology: topology.clone(), protocol: config.clone(), workloads: vec![workload.clone()] })
}

type IfaceKey = (Transport, Option<String>);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct EpKey {
    transport: Transport,
    local_nic: Option<String>,
    peer: u32,
    remote_nic: Option<String>,
}

impl EpKey {
    fn of(op: &PlannedUctOp) -> Self {
        Self {
            transport: op.transport,
            local_nic: op.local_nic.clone(),
            peer: op.peer_rank,
            remote_nic: op.remote_nic.clone(),
        }
    }
}

struct Iface {
    id: IfaceId,
    addr: Option<AddressBlob>,
}

struct Ep {
    id: EpId,
    addr: Option<AddressBlob>,
}

struct Proc {
    rank: u32,
    uid: String,
    node: usize,
    pid: u32,
    rng: ChaCha8Rng,
    handles: HashSet<u64>,
    iface_keys: BTreeSet<IfaceKey>,
    ep_keys: BTreeSet<EpKey>,
    ifaces: BTreeMap<IfaceKey, Iface>,
    eps: BTreeMap<EpKey, Ep>,
    ucp_eps: BTreeMap<u32, UcpEpId>,
    gpu_base: u64,
    host_base: u64,
    bounce_base: u64,
    staging_base: u64,
    cursor: u64,
}

impl Proc {
    fn handle(&mut self, base: u64) -> u64 {
        loop {
            let h = base + (self.rng.random_range(0..1u64 << 28) << 4);
            if self.handles.insert(h) {
                return h;
            }
        }
    }
}

/// Globally unique random address blobs.
struct AddressPool {
    seen: HashSet<Vec<u8>>,
}

impl AddressPool {
    fn fresh(&mut self, rng: &mut ChaCha8Rng, len: usize) -> AddressBlob {
        loop {
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if self.seen.insert(bytes.clone()) {
                return AddressBlob::new(bytes).expect("length within bounds");
            }
        }
    }
}

fn iface_addr_len(t: Transport) -> usize {
    match t {
        Transport::DcMlx5 => 18,
        Transport::CudaIpc => 12,
        Transport::Tcp => 10,
        _ => 8,
    }
}

/// Latency and per-byte cost in picoseconds.
fn cost(t: Transport) -> (u64, u64) {
    match t {
        Transport::RcMlx5 | Transport::DcMlx5 => (1_500, 80),
        Transport::Sysv => (300, 100),
        Transport::CudaIpc => (4_000, 15),
        Transport::CudaCopy => (3_000, 40),
        Transport::GdrCopy => (400, 200),
        Transport::SelfLoop => (100, 50),
        Transport::Tcp => (20_000, 1_000),
    }
}

fn duration(t: Transport, len: u64) -> u64 {
    let (lat, ps) = cost(t);
    lat + len.saturating_mul(ps) / 1000
}

fn align(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

struct Timing {
    send: (u64, u64),
    recv: (u64, u64),
    ops: Vec<(u64, Option<u64>)>,
}

#[derive(Clone, Copy)]
struct Regions {
    send: Option<u64>,
    recv: Option<u64>,
}

pub fn simulate(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let topo = &scenario.topology;
    let config = &scenario.protocol;

    let mut tags = TagAllocator::default();
    let mut messages = Vec::new();
    let mut round = 0;
    for (w, spec) in scenario.workloads.iter().enumerate() {
        let planned = plan_with_tags(spec, topo, &mut tags, round)?;
        if let Some(last) = planned.last() {
            round = last.round + 1;
        }
        for msg in planned {
            let ops = select_path(&msg, spec.buffer_kind, topo, config)?;
            messages.push(SimMessage { msg, kind: spec.buffer_kind, workload: w, ops });
        }
    }

    let ranks = topo.ranks();
    let mut procs: BTreeMap<u32, Proc> = BTreeMap::new();
    for &rank in &ranks {
        let place = topo.place(rank).expect("rank from topology");
        let mut prng = ChaCha8Rng::seed_from_u64(config.seed ^ (u64::from(rank) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let pid = prng.random_range(1_000..60_000);
        let gpu_base = 0x7f00_0000_0000 + (prng.random_range(0..0x100u64) << 32);
        let host_base = 0x5500_0000_0000 + (prng.random_range(0..0x100u64) << 36);
        let bounce_base = 0x7ff0_0000_0000 + (prng.random_range(0..0x100u64) << 24);
        let staging_base = 0x7e00_0000_0000 + (prng.random_range(0..0x100u64) << 36);
        procs.insert(
            rank,
            Proc {
                rank,
                uid: topo.proc_uid(rank).expect("rank from topology"),
                node: place.node,
                pid,
                rng: prng,
                handles: HashSet::new(),
                iface_keys: BTreeSet::new(),
                ep_keys: BTreeSet::new(),
                ifaces: BTreeMap::new(),
                eps: BTreeMap::new(),
                ucp_eps: BTreeMap::new(),
                gpu_base,
                host_base,
                bounce_base,
                staging_base,
                cursor: 0,
            },
        );
    }

    // endpoints and interfaces each process needs, including the far side
    for m in &messages {
        procs.get_mut(&m.msg.src_rank).expect("known rank").ucp_eps.entry(m.msg.dst_rank).or_insert(UcpEpId(0));
        for op in &m.ops {
            let key = EpKey::of(op);
            let exec = procs.get_mut(&op.exec_rank).expect("known rank");
            exec.iface_keys.insert((op.transport, op.local_nic.clone()));
            exec.ep_keys.insert(key);
            if !op.is_loopback() {
                let peer = procs.get_mut(&op.peer_rank).expect("known rank");
                peer.iface_keys.insert((op.transport, op.remote_nic.clone()));
                if op.transport == Transport::RcMlx5 {
                    peer.ep_keys.insert(EpKey {
                        transport: op.transport,
                        local_nic: op.remote_nic.clone(),
                        peer: op.exec_rank,
                        remote_nic: op.local_nic.clone(),
                    });
                }
            }
        }
    }

    let mut pool = AddressPool { seen: HashSet::new() };
    for p in procs.values_mut() {
        let iface_keys: Vec<IfaceKey> = p.iface_keys.iter().cloned().collect();
        for key in iface_keys {
            let id = IfaceId(p.handle(0x55d0_0000_0000));
            let addr = (key.0 != Transport::RcMlx5).then(|| pool.fresh(&mut p.rng, iface_addr_len(key.0)));
            p.ifaces.insert(key, Iface { id, addr });
        }
        let ep_keys: Vec<EpKey> = p.ep_keys.iter().cloned().collect();
        for key in ep_keys {
            let id = EpId(p.handle(0x55e0_0000_0000));
            let addr = (key.transport == Transport::RcMlx5).then(|| pool.fresh(&mut p.rng, 10));
            p.eps.insert(key, Ep { id, addr });
        }
        let peers: Vec<u32> = p.ucp_eps.keys().copied().collect();
        for peer in peers {
            let id = UcpEpId(p.handle(0x55f0_0000_0000));
            p.ucp_eps.insert(peer, id);
        }
    }

    // timing
    let workload_start_0 = EPOCH_NS + 5 * SETUP_NS;
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(config.seed.rotate_left(17) ^ 0x5eed);
    let mut timings: Vec<Timing> = Vec::with_capacity(messages.len());
    let mut alloc_events: BTreeMap<u32, Vec<AllocEvent>> = BTreeMap::new();
    let mut regions: Vec<BTreeMap<u32, Regions>> = Vec::new();
    let mut start = workload_start_0;
    let mut i = 0;
    for (w, spec) in scenario.workloads.iter().enumerate() {
        let begin = i;
        while i < messages.len() && messages[i].workload == w {
            i += 1;
        }
        let msgs = &messages[begin..i];
        let regs = layout_regions(msgs, &procs, w, spec.buffer_kind);
        let t_alloc = start;
        if spec.buffer_kind == BufferKind::Gpu {
            for (&rank, r) in &regs {
                let (send_len, recv_len) = region_sizes(msgs, rank);
                let gpu = topo.gpu_of(rank).expect("gpu workloads resolved a device");
                let ev = alloc_events.entry(rank).or_default();
                if let Some(base) = r.send {
                    ev.push(AllocEvent::Alloc { device_index: gpu, base, length: alloc_len(send_len), t: t_alloc });
                }
                if let Some(base) = r.recv {
                    ev.push(AllocEvent::Alloc { device_index: gpu, base, length: alloc_len(recv_len), t: t_alloc });
                }
            }
        }
        let mut barrier = t_alloc + PHASE_GAP_NS;
        for p in procs.values_mut() {
            p.cursor = p.cursor.max(barrier);
        }
        let mut j = 0;
        while j < msgs.len() {
            let r = msgs[j].msg.round;
            let round_start = barrier;
            let mut round_end = barrier;
            let mut posted: HashMap<u32, u64> = HashMap::new();
            while j < msgs.len() && msgs[j].msg.round == r {
                let m = &msgs[j];
                let k = posted.entry(m.msg.dst_rank).or_insert(0);
                let recv_start = round_start + (*k).min(999) * 10;
                *k += 1;
                let src = procs.get_mut(&m.msg.src_rank).expect("known rank");
                let send_start = src.cursor.max(round_start + POST_WINDOW_NS);
                src.cursor = send_start + 2 * ISSUE_NS;
                let mut t = send_start + 50;
                let mut ops = Vec::with_capacity(m.ops.len());
                for op in &m.ops {
                    let exec = procs.get_mut(&op.exec_rank).expect("known rank");
                    let jitter = if config.jitter_ns > 0 { jitter_rng.random_range(0..=config.jitter_ns) } else { 0 };
                    let op_start = t.max(exec.cursor) + jitter;
                    let dur = duration(op.transport, op.length).max(1);
                    exec.cursor = exec.cursor.max(op_start + ISSUE_NS);
                    let complete = (op.func.mode == UctMode::Zcopy).then_some(op_start + dur);
                    ops.push((op_start, complete));
                    t = op_start + dur + 50;
                }
                let send_end = t + 200;
                let recv_end = t + 300;
                // a process finishes one send before starting the next
                let src = procs.get_mut(&m.msg.src_rank).expect("known rank");
                src.cursor = src.cursor.max(send_end + SEND_GAP_NS);
                round_end = round_end.max(recv_end);
                timings.push(Timing { send: (send_start, send_end), recv: (recv_start, recv_end), ops });
                j += 1;
            }
            let cursors = procs.values().map(|p| p.cursor).max().unwrap_or(0);
            barrier = round_end.max(cursors) + ROUND_GAP_NS;
            for p in procs.values_mut() {
                p.cursor = barrier;
            }
        }
        let t_free = barrier + PHASE_GAP_NS;
        if spec.buffer_kind == BufferKind::Gpu {
            for (&rank, r) in &regs {
                let ev = alloc_events.entry(rank).or_default();
                for base in [r.send, r.recv].into_iter().flatten() {
                    ev.push(AllocEvent::Free { base, t: t_free });
                }
            }
        }
        regions.push(regs);
        start = t_free + PHASE_GAP_NS;
    }

    let slots = completion_sweep(&messages, &timings, &procs, config.completion_pool_size)?;

    // sequence numbers follow start time within each process
    let mut entries: BTreeMap<u32, Vec<(u64, usize, Entry)>> = BTreeMap::new();
    for (mi, (m, tm)) in messages.iter().zip(&timings).enumerate() {
        let push = |entries: &mut BTreeMap<u32, Vec<(u64, usize, Entry)>>, rank: u32, t: u64, e: Entry| {
            let v = entries.entry(rank).or_default();
            let n = v.len();
            v.push((t, n, e));
        };
        push(&mut entries, m.msg.dst_rank, tm.recv.0, Entry::Recv(mi));
        push(&mut entries, m.msg.src_rank, tm.send.0, Entry::Send(mi));
        for (oi, op) in m.ops.iter().enumerate() {
            push(&mut entries, op.exec_rank, tm.ops[oi].0, Entry::Uct(mi, oi));
        }
    }
    let mut send_seq = vec![0u64; messages.len()];
    let mut recv_seq = vec![0u64; messages.len()];
    let mut uct_seq: HashMap<(usize, usize), u64> = HashMap::new();
    for list in entries.values_mut() {
        list.sort_by_key(|&(t, n, _)| (t, n));
        for (seq, &(_, _, e)) in list.iter().enumerate() {
            let seq = seq as u64;
            match e {
                Entry::Send(mi) => send_seq[mi] = seq,
                Entry::Recv(mi) => recv_seq[mi] = seq,
                Entry::Uct(mi, oi) => {
                    uct_seq.insert((mi, oi), seq);
                }
            }
        }
    }

    let drift = |rank: u32| -> i64 {
        let node = &topo.nodes[procs[&rank].node].name;
        config.clock_drift_ns.get(node).copied().unwrap_or(0)
    };
    let shift = |t: u64, d: i64| -> u64 { (t as i64 + d) as u64 };

    let mut truth = GroundTruth::default();
    let mut processes = Vec::new();
    for (&rank, p) in &procs {
        let d = drift(rank);
        let mut records = vec![CommRecord::Meta(ProcessMeta {
            proc_uid: p.uid.clone(),
            rank,
            node: topo.nodes[p.node].name.clone(),
            pid: p.pid,
        })];
        let mut t_setup = EPOCH_NS + SETUP_NS;
        let mut tick = || {
            t_setup += 100;
            shift(t_setup, d)
        };
        for ((transport, nic), iface) in &p.ifaces {
            records.push(CommRecord::Iface(InterfaceRecord {
                iface_id: iface.id,
                transport: *transport,
                memory_domain: transport.memory_domain(nic.as_deref()),
                net_device: nic.clone(),
                iface_addr: iface.addr.clone(),
                t_create: tick(),
            }));
        }
        for (key, ep) in &p.eps {
            records.push(CommRecord::Ep(EndpointRecord {
                ep_id: ep.id,
                iface_id: p.ifaces[&(key.transport, key.local_nic.clone())].id,
                ep_addr: ep.addr.clone(),
                t_create: tick(),
            }));
        }
        for (key, ep) in &p.eps {
            let (remote_addr, hint) = connection_target(&procs, p, key);
            records.push(CommRecord::Conn(ConnectionRecord {
                ep_id: ep.id,
                remote_addr,
                remote_kind_hint: Some(hint),
                t_connect: tick(),
            }));
        }

        let list = entries.remove(&rank).unwrap_or_default();
        for (seq, (_, _, e)) in list.into_iter().enumerate() {
            let seq = seq as u64;
            match e {
                Entry::Send(mi) | Entry::Recv(mi) => {
                    let m = &messages[mi];
                    let tm = &timings[mi];
                    let spec = &scenario.workloads[m.workload];
                    let regs = &regions[m.workload];
                    let is_send = matches!(e, Entry::Send(_));
                    let (dir, peer, (t0, t1)) = if is_send {
                        (UcpDir::Send, m.msg.dst_rank, tm.send)
                    } else {
                        (UcpDir::Recv, m.msg.src_rank, tm.recv)
                    };
                    let buffer = if is_send {
                        regs[&m.msg.src_rank].send.expect("sender region") + m.msg.send_offset
                    } else {
                        regs[&m.msg.dst_rank].recv.expect("receiver region") + m.msg.recv_offset
                    };
                    records.push(CommRecord::Ucp(UcpOp {
                        seq,
                        dir,
                        tag: m.msg.tag,
                        buffer,
                        length: m.msg.bytes,
                        ucp_ep_id: is_send.then(|| p.ucp_eps[&peer]),
                        managed_uct_eps: is_send.then(|| managed_eps(p, peer)),
                        peer_proc_id: Some(procs[&peer].uid.clone()),
                        t_start: shift(t0, d),
                        t_end: shift(t1, d),
                        callstack: ucp_stack(spec, &m.msg, is_send),
                    }));
                    truth.ucp.push(UcpTruth {
                        proc: p.uid.clone(),
                        seq,
                        dir,
                        peer_proc: procs[&peer].uid.clone(),
                        partner_seq: if is_send { recv_seq[mi] } else { send_seq[mi] },
                    });
                }
                Entry::Uct(mi, oi) => {
                    let m = &messages[mi];
                    let op = &m.ops[oi];
                    let spec = &scenario.workloads[m.workload];
                    let regs = &regions[m.workload];
                    let (t0, tc) = timings[mi].ops[oi];
                    let addr = |b: BufRef| -> u64 {
                        match b {
                            BufRef::SendUser => regs[&m.msg.src_rank].send.expect("sender region") + m.msg.send_offset,
                            BufRef::RecvUser => regs[&m.msg.dst_rank].recv.expect("receiver region") + m.msg.recv_offset,
                            BufRef::Bounce(r) => procs[&r].bounce_base + (mi as u64 % 64) * 0x1_0000,
                            BufRef::Staging(r) => procs[&r].staging_base + ((mi as u64 % 64) << 28),
                        }
                    };
                    let callstack = uct_stack(spec, &m.msg, op);
                    let uct = UctOp {
                        seq,
                        family: op.func.family,
                        mode: op.func.mode,
                        ep_id: p.eps[&EpKey::of(op)].id,
                        length: op.length,
                        local_buf: op.local_buf.map(addr),
                        remote_buf: op.remote_buf.map(addr),
                        am_id: (op.func.family == UctFamily::Am).then_some(am_id(op)),
                        completion_slot: slots.get(&(mi, oi)).copied(),
                        t_start: shift(t0, d),
                        t_complete: tc.map(|t| shift(t, d)),
                        callstack,
                    };
                    truth.uct.push(op_truth(topo, &procs, m, op, &uct, send_seq[mi], recv_seq[mi]));
                    records.push(CommRecord::Uct(uct));
                }
            }
        }
        let comm = CommLog::from_records(records)?;
        let events = alloc_events
            .remove(&rank)
            .unwrap_or_default()
            .into_iter()
            .map(|e| match e {
                AllocEvent::Alloc { device_index, base, length, t } => {
                    AllocEvent::Alloc { device_index, base, length, t: shift(t, d) }
                }
                AllocEvent::Free { base, t } => AllocEvent::Free { base, t: shift(t, d) },
            })
            .collect();
        let alloc = AllocLog::from_events(events)?;
        processes.push(ProcessOutput { uid: p.uid.clone(), rank, comm, alloc });
    }

    Ok(SimOutput { topology: topo.clone(), processes, messages, truth })
}

#[derive(Debug, Clone, Copy)]
enum Entry {
    Send(usize),
    Recv(usize),
    Uct(usize, usize),
}

fn region_sizes(msgs: &[SimMessage], rank: u32) -> (u64, u64) {
    let mut send = 0;
    let mut recv = 0;
    // an empty message still points at a byte inside its region
    for m in msgs {
        if m.msg.src_rank == rank {
            send = u64::max(send, m.msg.send_offset + m.msg.bytes.max(1));
        }
        if m.msg.dst_rank == rank {
            recv = u64::max(recv, m.msg.recv_offset + m.msg.bytes.max(1));
        }
    }
    (send, recv)
}

fn alloc_len(used: u64) -> u64 {
    align(used.max(1), 256)
}

/// User buffers of one workload. GPU regions start at the same base in
/// every workload, so device addresses are reused after each free.
fn layout_regions(msgs: &[SimMessage], procs: &BTreeMap<u32, Proc>, w: usize, kind: BufferKind) -> BTreeMap<u32, Regions> {
    let mut out = BTreeMap::new();
    for (&rank, p) in procs {
        let sends = msgs.iter().any(|m| m.msg.src_rank == rank);
        let recvs = msgs.iter().any(|m| m.msg.dst_rank == rank);
        if !sends && !recvs {
            continue;
        }
        let (send_len, _) = region_sizes(msgs, rank);
        let base = match kind {
            BufferKind::Gpu => p.gpu_base,
            BufferKind::Host => p.host_base + ((w as u64) << 34),
        };
        let recv_base = base + align(alloc_len(send_len), 2 << 20);
        out.insert(rank, Regions { send: sends.then_some(base), recv: recvs.then_some(recv_base) });
    }
    out
}

fn connection_target(procs: &BTreeMap<u32, Proc>, owner: &Proc, key: &EpKey) -> (AddressBlob, RemoteKind) {
    let peer = &procs[&key.peer];
    match key.transport {
        Transport::RcMlx5 => {
            let mirror = EpKey {
                transport: key.transport,
                local_nic: key.remote_nic.clone(),
                peer: owner.rank,
                remote_nic: key.local_nic.clone(),
            };
            (peer.eps[&mirror].addr.clone().expect("rc endpoints carry addresses"), RemoteKind::Ep)
        }
        t => {
            let iface = &peer.ifaces[&(t, key.remote_nic.clone())];
            let hint = if t == Transport::CudaIpc { RemoteKind::Device } else { RemoteKind::Iface };
            (iface.addr.clone().expect("non-rc interfaces carry addresses"), hint)
        }
    }
}

/// uct endpoints owned by the ucp endpoint towards `peer`: every endpoint
/// to that peer plus the process's local copy endpoints.
fn managed_eps(p: &Proc, peer: u32) -> Vec<EpId> {
    let mut eps: Vec<EpId> = p
        .eps
        .iter()
        .filter(|(k, _)| k.peer == peer || k.peer == p.rank)
        .map(|(_, e)| e.id)
        .collect();
    eps.sort_unstable();
    eps
}

fn am_id(op: &PlannedUctOp) -> u32 {
    match op.func.mode {
        UctMode::Short if op.length == 0 => 9,
        UctMode::Short => 2,
        UctMode::Bcopy => 3,
        UctMode::Zcopy => 4,
    }
}

fn coll_frame(spec: &WorkloadSpec) -> Option<&'static str> {
    if spec.pattern != Pattern::Allreduce {
        return None;
    }
    Some(match (spec.allreduce_style, spec.allreduce_alg) {
        (Some(AllreduceStyle::NodeLeader), _) => "mca_coll_han_allreduce_intra",
        (_, Some(AllreduceAlg::Ring)) => "ompi_coll_base_allreduce_intra_ring",
        (_, Some(AllreduceAlg::RecursiveDoubling)) => "ompi_coll_base_allreduce_intra_recursivedoubling",
        _ => "ompi_coll_base_allreduce_intra_redscat_allgather",
    })
}

fn frames(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn ucp_stack(spec: &WorkloadSpec, msg: &LogicalMessage, send: bool) -> Vec<String> {
    let mut s = if send {
        frames(&["ucp_tag_send_nbx", "mca_pml_ucx_isend"])
    } else {
        frames(&["ucp_tag_recv_nbx", "mca_pml_ucx_irecv"])
    };
    match coll_frame(spec) {
        Some(c) => s.extend(frames(&[c, &msg.mpi_fn])),
        None if send => s.push(msg.mpi_fn.clone()),
        None => s.push("MPI_Irecv".into()),
    }
    s.push("main".into());
    s
}

fn uct_stack(spec: &WorkloadSpec, msg: &LogicalMessage, op: &PlannedUctOp) -> Vec<String> {
    let top = format!("uct_ep_{}", op.func);
    if op.rndv_read {
        let mut s = vec![top];
        s.extend(frames(&[
            "ucp_rndv_progress_rma_get_zcopy",
            "ucp_worker_progress",
            "mca_pml_ucx_progress",
            "opal_progress",
            "ompi_request_default_wait",
            "MPI_Wait",
            "main",
        ]));
        return s;
    }
    let mut s = vec![top];
    if op.exec_rank == msg.src_rank {
        s.extend(ucp_stack(spec, msg, true));
    } else {
        s.extend(frames(&["ucp_eager_tagged_handler", "ucp_worker_progress", "mca_pml_ucx_progress", "opal_progress"]));
        if let Some(c) = coll_frame(spec) {
            s.push(c.into());
        }
        s.push(msg.mpi_fn.clone());
        s.push("main".into());
    }
    s
}

pub(crate) fn innermost_mpi(stack: &[String]) -> Option<&str> {
    stack.iter().map(String::as_str).find(|f| f.starts_with("MPI_"))
}

fn op_truth(
    topo: &ClusterTopology,
    procs: &BTreeMap<u32, Proc>,
    m: &SimMessage,
    op: &PlannedUctOp,
    uct: &UctOp,
    send_seq: u64,
    recv_seq: u64,
) -> UctTruth {
    let is_get = op.func.family == UctFamily::Get;
    let (src_rank, dst_rank) = if is_get { (op.peer_rank, op.exec_rank) } else { (op.exec_rank, op.peer_rank) };
    let (src_buf, dst_buf) = if is_get { (op.remote_buf, op.local_buf) } else { (op.local_buf, op.remote_buf) };
    let (src_nic, dst_nic) =
        if is_get { (op.remote_nic.clone(), op.local_nic.clone()) } else { (op.local_nic.clone(), op.remote_nic.clone()) };
    let device = |b: BufRef| -> Option<u32> {
        match (b, m.kind) {
            (BufRef::SendUser, BufferKind::Gpu) => topo.gpu_of(m.msg.src_rank),
            (BufRef::RecvUser, BufferKind::Gpu) => topo.gpu_of(m.msg.dst_rank),
            _ => None,
        }
    };
    let src_gpu = device(src_buf.unwrap_or(BufRef::SendUser));
    let dst_gpu = device(dst_buf.unwrap_or(BufRef::RecvUser));
    let kind = |g: Option<u32>| if g.is_some() { EndpointKind::Gpu } else { EndpointKind::Host };
    UctTruth {
        proc: procs[&op.exec_rank].uid.clone(),
        seq: uct.seq,
        transport: op.transport,
        role: op.role,
        src_proc: procs[&src_rank].uid.clone(),
        dst_proc: procs[&dst_rank].uid.clone(),
        src_endpoint_kind: kind(src_gpu),
        src_gpu,
        dst_endpoint_kind: kind(dst_gpu),
        dst_gpu,
        src_nic,
        dst_nic,
        ucp_link: UcpLink {
            send_proc: procs[&m.msg.src_rank].uid.clone(),
            send_seq,
            recv_proc: procs[&m.msg.dst_rank].uid.clone(),
            recv_seq,
        },
        mpi_fn: m.msg.mpi_fn.clone(),
        mpi_fn_own_stack: innermost_mpi(&uct.callstack).map(str::to_string),
    }
}

/// Replays every zero-copy operation of each process through a proxy
/// completion pool and returns the slot each one held.
fn completion_sweep(
    messages: &[SimMessage],
    timings: &[Timing],
    procs: &BTreeMap<u32, Proc>,
    pool_size: usize,
) -> Result<HashMap<(usize, usize), u32>, SimError> {
    // (time, completion-before-acquire, message, op)
    let mut events: BTreeMap<u32, Vec<(u64, u8, usize, usize)>> = BTreeMap::new();
    let mut group_sizes: HashMap<(u32, usize), u32> = HashMap::new();
    for (mi, m) in messages.iter().enumerate() {
        for (oi, op) in m.ops.iter().enumerate() {
            if let (start, Some(done)) = timings[mi].ops[oi] {
                let ev = events.entry(op.exec_rank).or_default();
                ev.push((start, 1, mi, oi));
                ev.push((done, 0, mi, oi));
                *group_sizes.entry((op.exec_rank, mi)).or_insert(0) += 1;
            }
        }
    }
    let mut slots = HashMap::new();
    for (rank, mut ev) in events {
        debug_assert!(procs.contains_key(&rank));
        ev.sort_unstable();
        let registry = CompletionRegistry::new(pool_size)?;
        let mut groups = HashMap::new();
        let mut tickets: HashMap<(usize, usize), SlotTicket> = HashMap::new();
        for (t, kind, mi, oi) in ev {
            if kind == 1 {
                let group = *groups
                    .entry(mi)
                    .or_insert_with(|| registry.register_group(group_sizes[&(rank, mi)], mi as u64));
                let ticket = registry.acquire(group)?;
                // the operation is recorded as soon as it is issued
                registry.release(ticket)?;
                slots.insert((mi, oi), ticket.slot);
                tickets.insert((mi, oi), ticket);
            } else {
                registry.on_complete(tickets[&(mi, oi)], 0, t)?;
            }
        }
        if !registry.pending().is_empty() {
            return Err(SimError::Internal(format!("rank {rank} leaked completions")));
        }
        for (mi, g) in groups {
            if registry.group_fired(g) != Some(true) {
                return Err(SimError::Internal(format!("message {mi} never completed on rank {rank}")));
            }
        }
    }
    Ok(slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_comm_log;

    fn two_node_rndv() -> SimOutput {
        let topo = ClusterTopology::uniform(2, 1, 1, 1);
        let w = WorkloadSpec::all_to_all(1 << 20, 1, BufferKind::Gpu);
        let mut out = emit(&w, &topo, &ProtocolConfig::default()).unwrap();
        // keep only the 0 -> 1 direction for inspection
        out.messages.retain(|m| m.msg.src_rank == 0);
        out
    }

    #[test]
    fn rendezvous_get_shape_in_logs() {
        let out = two_node_rndv();
        let sender = &out.processes[0].comm;
        let receiver = &out.processes[1].comm;
        let to_receiver: Vec<_> = sender.ucp_ops().filter(|u| u.dir == UcpDir::Send).collect();
        assert_eq!(to_receiver.len(), 1);
        assert!(sender.uct_ops().any(|u| u.family == UctFamily::Am && u.mode == UctMode::Short));
        let read = receiver
            .uct_ops()
            .find(|u| u.family == UctFamily::Get && u.mode == UctMode::Zcopy)
            .expect("receiver issues the read");
        assert!(read.callstack.iter().any(|f| f == "MPI_Wait"));
        assert!(read.completion_slot.is_some());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = two_node_rndv().files();
        let b = two_node_rndv().files();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_shifts_only_that_node() {
        let topo = ClusterTopology::uniform(2, 1, 1, 1);
        let w = WorkloadSpec::all_to_all(1 << 20, 1, BufferKind::Gpu);
        let base = emit(&w, &topo, &ProtocolConfig::default()).unwrap();
        let mut cfg = ProtocolConfig::default();
        cfg.clock_drift_ns.insert("n1".into(), 3_000_000);
        let shifted = emit(&w, &topo, &cfg).unwrap();
        assert_eq!(base.processes[0].comm, shifted.processes[0].comm);
        let a: Vec<_> = base.processes[1].comm.uct_ops().map(|o| o.t_start).collect();
        let b: Vec<_> = shifted.processes[1].comm.uct_ops().map(|o| o.t_start).collect();
        assert!(a.iter().zip(&b).all(|(x, y)| y - x == 3_000_000));
        let mut stripped = shifted.processes[1].comm.clone().into_records();
        for r in &mut stripped {
            if let CommRecord::Uct(u) = r {
                u.t_start -= 3_000_000;
                u.t_complete = u.t_complete.map(|t| t - 3_000_000);
            }
        }
        let orig: Vec<_> = base.processes[1].comm.uct_ops().cloned().collect();
        let back: Vec<_> = stripped.iter().filter_map(|r| if let CommRecord::Uct(u) = r { Some(u.clone()) } else { None }).collect();
        assert_eq!(orig, back);
    }

    #[test]
    fn logs_reparse_to_same_records() {
        let out = two_node_rndv();
        for p in &out.processes {
            let bytes = p.comm.to_bytes();
            assert_eq!(parse_comm_log(&bytes).unwrap(), p.comm);
        }
    }

    #[test]
    fn every_planned_op_has_one_truth_entry() {
        let topo = ClusterTopology::uniform(2, 2, 2, 2);
        let w = WorkloadSpec::all_to_all(1024, 2, BufferKind::Gpu);
        let out = emit(&w, &topo, &ProtocolConfig::default()).unwrap();
        let logged: usize = out.processes.iter().map(|p| p.comm.uct_ops().count()).sum();
        assert_eq!(logged, out.uct_op_count());
        assert_eq!(out.truth.uct.len(), logged);
        let keys: HashSet<_> = out.truth.uct.iter().map(|t| (t.proc.clone(), t.seq)).collect();
        assert_eq!(keys.len(), logged);
    }

    #[test]
    fn tiny_pool_is_exhausted() {
        // the node leader pulls from three local ranks at once
        let topo = ClusterTopology::uniform(2, 4, 4, 4);
        let w = WorkloadSpec::allreduce(
            AllreduceAlg::RecursiveDoubling,
            AllreduceStyle::NodeLeader,
            1 << 20,
            1,
            BufferKind::Gpu,
        );
        let cfg = ProtocolConfig { completion_pool_size: 1, ..Default::default() };
        assert!(matches!(emit(&w, &topo, &cfg), Err(SimError::Completion(_))));
    }
}
