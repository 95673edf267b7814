#![allow(dead_code)]

use commtrace_core::model::ClusterTopology;
use commtrace_core::sim::{
    select_path, BufferKind, LogicalMessage, ProtocolConfig, RndvScheme, P2P_SEND_FN,
};

pub const GRID_SIZES: [u64; 2] = [1024, 1 << 20];

/// Every select_path expansion of the pattern grid, one block per case.
pub fn render_pattern_grid() -> String {
    let topo = ClusterTopology::uniform(2, 2, 2, 2);
    let mut out = String::new();
    for kind in [BufferKind::Gpu, BufferKind::Host] {
        for (locality, dst) in [("intra", 1), ("inter", 3)] {
            for size in GRID_SIZES {
                for scheme in [RndvScheme::Get, RndvScheme::Put, RndvScheme::Auto] {
                    let cfg = ProtocolConfig { rndv_scheme: scheme, ..Default::default() };
                    let msg = LogicalMessage {
                        src_rank: 0,
                        dst_rank: dst,
                        bytes: size,
                        mpi_fn: P2P_SEND_FN.into(),
                        tag: 0,
                        round: 0,
                        send_offset: 0,
                        recv_offset: 0,
                    };
                    let ops = select_path(&msg, kind, &topo, &cfg).expect("grid cases route");
                    out.push_str(&format!("[{kind:?} {locality} {size} {scheme:?}]\n").to_lowercase());
                    for op in ops {
                        out.push_str(&format!("{op}\n"));
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}

use std::collections::HashSet;

use commtrace_core::completion::{CompletionError, CompletionRegistry, GroupId, SlotState, SlotTicket};
use commtrace_core::sim::{AllreduceAlg, AllreduceStyle, MsgSize, Scenario, WorkloadSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random but valid scenario. Allreduce algorithms that need a
/// power-of-two participant count fall back to ring when the draw does not
/// give one.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.random_range(1..=4usize);
    let rpn = rng.random_range(1..=4usize);
    let gpus = rng.random_range(1..=4u32);
    let nics = rng.random_range(1..=2usize);
    let mut topology = ClusterTopology::uniform(nodes, rpn, gpus, nics);
    for rank in topology.ranks() {
        if rng.random_range(0..5) == 0 {
            let node = rank as usize / rpn;
            topology.nodes[node].numa_correct.insert(rank, false);
        }
    }
    let ranks = nodes * rpn;
    let sizes = [0u64, 8, 64, 100, 4096, 9000, 65536, 1 << 20];
    let mut workloads = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let kind = if rng.random() { BufferKind::Gpu } else { BufferKind::Host };
        let size = sizes[rng.random_range(0..sizes.len())];
        let iterations = rng.random_range(1..=2);
        let w = match rng.random_range(0..4) {
            0 => WorkloadSpec::all_to_all(size, iterations, kind),
            1 => {
                let m: Vec<Vec<u64>> = (0..ranks)
                    .map(|i| {
                        (0..ranks)
                            .map(|j| {
                                if i != j && rng.random_range(0..3) == 0 {
                                    sizes[rng.random_range(0..sizes.len())]
                                } else {
                                    0
                                }
                            })
                            .collect()
                    })
                    .collect();
                let mut w = WorkloadSpec::all_to_all(0, iterations, kind);
                w.msg_size = Some(MsgSize::Matrix(m));
                w
            }
            2 => {
                let demand: Vec<Vec<u64>> = (0..ranks)
                    .map(|i| (0..ranks).map(|j| if i.abs_diff(j) == 1 { size } else { 0 }).collect())
                    .collect();
                WorkloadSpec::halo(demand, iterations, kind)
            }
            _ => {
                let style = if rng.random() { AllreduceStyle::PerRank } else { AllreduceStyle::NodeLeader };
                let participants = if style == AllreduceStyle::PerRank { ranks } else { nodes };
                let algs = [AllreduceAlg::Ring, AllreduceAlg::RecursiveDoubling, AllreduceAlg::ReduceScatterAllgather];
                let mut alg = algs[rng.random_range(0..3)];
                if alg != AllreduceAlg::Ring && !participants.is_power_of_two() {
                    alg = AllreduceAlg::Ring;
                }
                WorkloadSpec::allreduce(alg, style, size.max(64), iterations, kind)
            }
        };
        workloads.push(w);
    }
    let schemes = [RndvScheme::Get, RndvScheme::Put, RndvScheme::Auto];
    let protocol = ProtocolConfig {
        rndv_thresh: [1024, 8192, 65536][rng.random_range(0..3)],
        rndv_scheme: schemes[rng.random_range(0..3)],
        eager_enabled: rng.random_range(0..4) != 0,
        cuda_ipc_enabled: rng.random_range(0..4) != 0,
        dc_task_threshold: [4, 8, 64][rng.random_range(0..3)],
        jitter_ns: [0, 500, 5_000][rng.random_range(0..3)],
        seed,
        ..Default::default()
    };
    Scenario { topology, protocol, workloads }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum OpState {
    Idle,
    Armed,
    /// Recorded in the trace, completion outstanding.
    Recorded,
    /// Completed, not yet recorded.
    Completed,
    Done,
}

pub const MAX_EXPLORE_GROUPS: usize = 4;
pub const MAX_EXPLORE_OPS: usize = 4;

#[derive(Clone, Copy)]
struct Group {
    id: GroupId,
    size: usize,
    ops: [(OpState, Option<SlotTicket>); MAX_EXPLORE_OPS],
    fired: u32,
}

#[derive(Clone)]
struct Node {
    reg: CompletionRegistry,
    groups: [Option<Group>; MAX_EXPLORE_GROUPS],
    /// Slots the model considers taken, bit `s` for slot `s`.
    taken: u128,
}

impl Node {
    /// Ops of one group in the same state are interchangeable, and so are
    /// groups of equal size with equal state counts; slot numbers are not
    /// part of the key.
    fn key(&self) -> u128 {
        let mut per_group = [0u32; MAX_EXPLORE_GROUPS];
        for (k, g) in self.groups.iter().flatten().enumerate() {
            let mut c = 0u32;
            for (s, _) in &g.ops[..g.size] {
                c += 1 << (3 * *s as u32);
            }
            per_group[k] = c | (g.size as u32) << 15;
        }
        per_group.sort_unstable();
        per_group.iter().fold(0u128, |acc, &c| acc << 18 | c as u128)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ExploreStats {
    pub states: usize,
    pub transitions: usize,
    pub terminal: usize,
    pub exhausted: usize,
}

/// Walks every ordering of acquire, completion and release for groups of
/// the given sizes (completion and release of one op in either order),
/// checking at each step that
/// - acquire takes the lowest free slot and fails with PoolExhausted exactly
///   when every slot is occupied,
/// - a slot returns to the pool exactly when both completion and release happened,
/// - a group's callback fires exactly once, on its last completion,
/// - at the end nothing is pending and every group fired.
pub fn explore_registry(sizes: &[u32], pool: usize) -> ExploreStats {
    assert!(sizes.len() <= MAX_EXPLORE_GROUPS && sizes.iter().all(|&n| n as usize <= MAX_EXPLORE_OPS));
    assert!(pool < 128);
    let reg = CompletionRegistry::new(pool).unwrap();
    let mut groups = [None; MAX_EXPLORE_GROUPS];
    for (i, &n) in sizes.iter().enumerate() {
        let id = reg.register_group(n, i as u64 + 100);
        groups[i] = Some(Group { id, size: n as usize, ops: [(OpState::Idle, None); MAX_EXPLORE_OPS], fired: 0 });
    }
    let mut seen = HashSet::new();
    let mut stats = ExploreStats::default();
    let mut stack = vec![Node { reg, groups, taken: 0 }];
    while let Some(node) = stack.pop() {
        if !seen.insert(node.key()) {
            continue;
        }
        stats.states += 1;
        let mut moves = Vec::with_capacity(MAX_EXPLORE_GROUPS * 2);
        for g in 0..sizes.len() {
            let group = node.groups[g].unwrap();
            let mut tried = [false; 5];
            for o in 0..group.size {
                let state = group.ops[o].0;
                if std::mem::replace(&mut tried[state as usize], true) {
                    continue;
                }
                let nexts: &[OpState] = match state {
                    OpState::Idle => &[OpState::Armed],
                    OpState::Armed => &[OpState::Recorded, OpState::Completed],
                    OpState::Recorded | OpState::Completed => &[OpState::Done],
                    OpState::Done => &[],
                };
                for &next in nexts {
                    if state == OpState::Idle && node.taken.count_ones() as usize == pool {
                        // the model says the pool is full: acquire must fail
                        assert_eq!(node.reg.acquire(group.id), Err(CompletionError::PoolExhausted(pool)));
                        stats.exhausted += 1;
                        continue;
                    }
                    moves.push((g, o, next));
                }
            }
        }
        stats.transitions += moves.len();
        if let Some(&(g, o, next)) = moves.last() {
            for &(g, o, next) in &moves[..moves.len() - 1] {
                let mut n = node.clone();
                step(&mut n, g, o, next);
                stack.push(n);
            }
            // the last child takes over the parent's registry
            let mut n = node;
            step(&mut n, g, o, next);
            stack.push(n);
        } else {
            stats.terminal += 1;
            assert!(node.reg.pending().is_empty(), "terminal state has pending slots");
            for g in node.groups.iter().flatten() {
                assert!(g.ops[..g.size].iter().all(|(s, _)| *s == OpState::Done), "terminal state with unfinished ops");
                assert_eq!(g.fired, 1, "group fired {} times", g.fired);
                assert_eq!(node.reg.group_fired(g.id), Some(true));
                assert_eq!(node.reg.group_remaining(g.id), Some(0));
            }
            for s in 1..=pool as u32 {
                assert_eq!(node.reg.slot_state(s), Some(SlotState::Free));
            }
        }
    }
    stats
}

fn step(n: &mut Node, g: usize, o: usize, next: OpState) {
    let group = n.groups[g].as_mut().unwrap();
    let (state, ticket) = group.ops[o];
    match (state, next) {
        (OpState::Idle, OpState::Armed) => {
            let lowest = (!n.taken >> 1).trailing_zeros() + 1;
            let t = n.reg.acquire(group.id).expect("the model has a free slot");
            assert_eq!(t.slot, lowest, "acquire did not take the lowest free slot");
            n.taken |= 1 << t.slot;
            group.ops[o] = (OpState::Armed, Some(t));
        }
        (OpState::Armed, OpState::Recorded) | (OpState::Completed, OpState::Done) => {
            let t = ticket.unwrap();
            n.reg.release(t).unwrap();
            let expect = if state == OpState::Completed { SlotState::Free } else { SlotState::Armed };
            assert_eq!(n.reg.slot_state(t.slot), Some(expect));
            assert!(n.reg.release(t).is_err(), "second release accepted");
            if expect == SlotState::Free {
                n.taken &= !(1 << t.slot);
            }
            group.ops[o].0 = next;
        }
        (OpState::Armed, OpState::Completed) | (OpState::Recorded, OpState::Done) => {
            let t = ticket.unwrap();
            let completed_before =
                group.ops[..group.size].iter().filter(|(s, _)| matches!(s, OpState::Completed | OpState::Done)).count();
            let d = n.reg.on_complete(t, 0, 7).unwrap();
            let last = completed_before + 1 == group.size;
            assert_eq!(d.fired_original, last, "fired before or after the last completion");
            assert_eq!(d.token, last.then_some(g as u64 + 100));
            if last {
                group.fired += 1;
            }
            let expect = if state == OpState::Recorded { SlotState::Free } else { SlotState::Completed };
            assert_eq!(n.reg.slot_state(t.slot), Some(expect));
            assert!(n.reg.on_complete(t, 0, 8).is_err(), "second completion accepted");
            if expect == SlotState::Free {
                n.taken &= !(1 << t.slot);
            }
            group.ops[o].0 = next;
        }
        _ => unreachable!(),
    }
}

/// Every multiset of up to `max_groups` group sizes drawn from 1..=max_size.
pub fn group_configs(max_groups: usize, max_size: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, min: u32, max: u32, left: usize, out: &mut Vec<Vec<u32>>) {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        if left == 0 {
            return;
        }
        for s in min..=max {
            prefix.push(s);
            rec(prefix, s, max, left - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), 1, max_size, max_groups, &mut out);
    out
}
