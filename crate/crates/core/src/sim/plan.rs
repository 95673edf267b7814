//! Expansion of workloads into logical point-to-point messages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::config::{AllreduceAlg, AllreduceStyle, MsgSize, Pattern, WorkloadSpec};
use super::SimError;
use crate::model::ClusterTopology;

pub const P2P_SEND_FN: &str = "MPI_Isend";
pub const ALLREDUCE_FN: &str = "MPI_Allreduce";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalMessage {
    pub src_rank: u32,
    pub dst_rank: u32,
    pub bytes: u64,
    pub mpi_fn: String,
    pub tag: u64,
    /// Messages sharing a round are in flight together.
    pub round: u32,
    pub send_offset: u64,
    pub recv_offset: u64,
}

/// Builds `(src << 32) | (dst << 16) | counter` with a counter per ordered
/// rank pair.
#[derive(Debug, Clone, Default)]
pub struct TagAllocator {
    counters: HashMap<(u32, u32), u16>,
}

impl TagAllocator {
    pub fn next(&mut self, src: u32, dst: u32) -> u64 {
        let c = self.counters.entry((src, dst)).or_insert(0);
        let tag = ((src as u64) << 32) | ((dst as u64) << 16) | *c as u64;
        *c = c.wrapping_add(1);
        tag
    }
}

/// One directed transfer before tags and rounds are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Leg {
    src: u32,
    dst: u32,
    bytes: u64,
    send_offset: u64,
    recv_offset: u64,
}

impl Leg {
    fn whole(src: u32, dst: u32, bytes: u64) -> Self {
        Self { src, dst, bytes, send_offset: 0, recv_offset: 0 }
    }
}

/// Plans a workload on its own, with fresh tag counters.
pub fn plan_transfers(workload: &WorkloadSpec, topology: &ClusterTopology) -> Result<Vec<LogicalMessage>, SimError> {
    plan_with_tags(workload, topology, &mut TagAllocator::default(), 0)
}

/// Plans a workload whose rounds start at `first_round`, continuing the
/// caller's tag counters.
pub fn plan_with_tags(
    workload: &WorkloadSpec,
    topology: &ClusterTopology,
    tags: &mut TagAllocator,
    first_round: u32,
) -> Result<Vec<LogicalMessage>, SimError> {
    let ranks = topology.ranks();
    workload.validate(ranks.len())?;
    let rounds = match workload.pattern {
        Pattern::P2pAllToAll => {
            let legs = match workload.msg_size.as_ref().expect("validated") {
                MsgSize::Uniform(s) => uniform_all_to_all(&ranks, *s),
                MsgSize::Matrix(m) => matrix_legs(&ranks, m, false),
            };
            vec![legs]
        }
        Pattern::HaloExchange => {
            vec![matrix_legs(&ranks, workload.demand_matrix.as_ref().expect("validated"), true)]
        }
        Pattern::Allreduce => {
            let size = match workload.msg_size {
                Some(MsgSize::Uniform(s)) => s,
                _ => unreachable!("validated"),
            };
            let alg = workload.allreduce_alg.expect("validated");
            match workload.allreduce_style.expect("validated") {
                AllreduceStyle::PerRank => collective(alg, &ranks, size)?,
                AllreduceStyle::NodeLeader => node_leader(alg, topology, size)?,
            }
        }
    };
    let mpi_fn = match workload.pattern {
        Pattern::Allreduce => ALLREDUCE_FN,
        _ => P2P_SEND_FN,
    };

    let mut out = Vec::new();
    let mut round = first_round;
    for _ in 0..workload.iterations {
        for legs in &rounds {
            for leg in legs {
                out.push(LogicalMessage {
                    src_rank: leg.src,
                    dst_rank: leg.dst,
                    bytes: leg.bytes,
                    mpi_fn: mpi_fn.to_string(),
                    tag: tags.next(leg.src, leg.dst),
                    round,
                    send_offset: leg.send_offset,
                    recv_offset: leg.recv_offset,
                });
            }
            round += 1;
        }
    }
    Ok(out)
}

fn uniform_all_to_all(ranks: &[u32], size: u64) -> Vec<Leg> {
    let mut legs = Vec::new();
    for (i, &src) in ranks.iter().enumerate() {
        for (j, &dst) in ranks.iter().enumerate() {
            if i == j {
                continue;
            }
            // slot index among the other ranks
            let to = if j < i { j } else { j - 1 } as u64;
            let from = if i < j { i } else { i - 1 } as u64;
            legs.push(Leg { src, dst, bytes: size, send_offset: to * size, recv_offset: from * size });
        }
    }
    legs
}

fn matrix_legs(ranks: &[u32], m: &[Vec<u64>], skip_zero: bool) -> Vec<Leg> {
    let n = ranks.len();
    let mut recv_off = vec![0u64; n];
    let mut legs = Vec::new();
    for i in 0..n {
        let mut send_off = 0;
        for j in 0..n {
            let bytes = m[i][j];
            if i == j || (skip_zero && bytes == 0) {
                continue;
            }
            legs.push(Leg {
                src: ranks[i],
                dst: ranks[j],
                bytes,
                send_offset: send_off,
                recv_offset: recv_off[j],
            });
            send_off += bytes;
            recv_off[j] += bytes;
        }
    }
    legs
}

fn collective(alg: AllreduceAlg, parts: &[u32], size: u64) -> Result<Vec<Vec<Leg>>, SimError> {
    let p = parts.len();
    if alg != AllreduceAlg::Ring && !p.is_power_of_two() {
        return Err(SimError::UnsupportedSize { alg, participants: p });
    }
    Ok(match alg {
        AllreduceAlg::Ring => ring(parts, size),
        AllreduceAlg::RecursiveDoubling => recursive_doubling(parts, size),
        AllreduceAlg::ReduceScatterAllgather => reduce_scatter_allgather(parts, size),
    })
}

fn ring(parts: &[u32], size: u64) -> Vec<Vec<Leg>> {
    let p = parts.len();
    if p < 2 {
        return Vec::new();
    }
    let (base, rem) = (size / p as u64, size % p as u64);
    let seg_len = |k: usize| base + u64::from((k as u64) < rem);
    let seg_off = |k: usize| k as u64 * base + (k as u64).min(rem);
    (0..2 * (p - 1))
        .map(|step| {
            (0..p)
                .map(|i| {
                    let seg = if step < p - 1 {
                        (i + p - step) % p
                    } else {
                        (i + 1 + p - (step - (p - 1))) % p
                    };
                    Leg {
                        src: parts[i],
                        dst: parts[(i + 1) % p],
                        bytes: seg_len(seg),
                        send_offset: seg_off(seg),
                        recv_offset: seg_off(seg),
                    }
                })
                .collect()
        })
        .collect()
}

fn recursive_doubling(parts: &[u32], size: u64) -> Vec<Vec<Leg>> {
    let p = parts.len();
    (0..p.trailing_zeros())
        .map(|k| (0..p).map(|i| Leg::whole(parts[i], parts[i ^ (1 << k)], size)).collect())
        .collect()
}

/// Recursive halving followed by the mirrored allgather.
fn reduce_scatter_allgather(parts: &[u32], size: u64) -> Vec<Vec<Leg>> {
    let p = parts.len();
    let steps = p.trailing_zeros();
    let mut ranges = vec![(0u64, size); p];
    let mut history = Vec::new();
    let mut rounds = Vec::new();
    for k in 0..steps {
        let d = p >> (k + 1);
        history.push(ranges.clone());
        let mut legs = Vec::new();
        let mut next = ranges.clone();
        for i in 0..p {
            let (lo, hi) = ranges[i];
            let mid = lo + (hi - lo) / 2;
            let (keep, send) = if i & d == 0 { ((lo, mid), (mid, hi)) } else { ((mid, hi), (lo, mid)) };
            legs.push(Leg {
                src: parts[i],
                dst: parts[i ^ d],
                bytes: send.1 - send.0,
                send_offset: send.0,
                recv_offset: keep.0,
            });
            next[i] = keep;
        }
        ranges = next;
        rounds.push(legs);
    }
    for k in (0..steps).rev() {
        let d = p >> (k + 1);
        let legs = (0..p)
            .map(|i| {
                let (lo, hi) = ranges[i];
                Leg { src: parts[i], dst: parts[i ^ d], bytes: hi - lo, send_offset: lo, recv_offset: lo }
            })
            .collect();
        ranges = history.pop().expect("one snapshot per halving step");
        rounds.push(legs);
    }
    rounds
}

fn node_leader(alg: AllreduceAlg, topology: &ClusterTopology, size: u64) -> Result<Vec<Vec<Leg>>, SimError> {
    let mut leaders = Vec::new();
    let mut gather = Vec::new();
    let mut bcast = Vec::new();
    for node in &topology.nodes {
        let mut ranks = node.ranks.clone();
        ranks.sort_unstable();
        let Some((&leader, rest)) = ranks.split_first() else { continue };
        leaders.push(leader);
        for (i, &r) in rest.iter().enumerate() {
            gather.push(Leg { src: r, dst: leader, bytes: size, send_offset: 0, recv_offset: i as u64 * size });
            bcast.push(Leg::whole(leader, r, size));
        }
    }
    leaders.sort_unstable();
    let mut rounds = Vec::new();
    if !gather.is_empty() {
        rounds.push(gather);
    }
    rounds.extend(collective(alg, &leaders, size)?);
    if !bcast.is_empty() {
        rounds.push(bcast);
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet, HashSet};

    use super::*;
    use crate::sim::config::BufferKind;

    fn ar(alg: AllreduceAlg, style: AllreduceStyle, size: u64) -> WorkloadSpec {
        WorkloadSpec::allreduce(alg, style, size, 1, BufferKind::Host)
    }

    #[test]
    fn ring_is_a_directed_cycle() {
        let t = ClusterTopology::uniform(1, 4, 0, 0);
        let msgs = plan_transfers(&ar(AllreduceAlg::Ring, AllreduceStyle::PerRank, 400), &t).unwrap();
        assert_eq!(msgs.len(), 4 * 6);
        let pairs: BTreeSet<(u32, u32)> = msgs.iter().map(|m| (m.src_rank, m.dst_rank)).collect();
        assert_eq!(pairs, BTreeSet::from([(0, 1), (1, 2), (2, 3), (3, 0)]));
        // every rank sends 2(P-1) segments; total traffic is 2(P-1)/P of the buffer per rank
        let sent: u64 = msgs.iter().filter(|m| m.src_rank == 0).map(|m| m.bytes).sum();
        assert_eq!(sent, 600);
    }

    #[test]
    fn ring_segments_cover_buffer_in_each_phase() {
        let t = ClusterTopology::uniform(1, 3, 0, 0);
        let msgs = plan_transfers(&ar(AllreduceAlg::Ring, AllreduceStyle::PerRank, 10), &t).unwrap();
        for phase in msgs.chunks(3 * 2) {
            // segments sent by one rank over one phase are distinct
            let segs: HashSet<u64> = phase.iter().filter(|m| m.src_rank == 0).map(|m| m.send_offset).collect();
            assert_eq!(segs.len(), 2);
        }
    }

    #[test]
    fn recursive_doubling_pairs_differ_in_one_bit() {
        let t = ClusterTopology::uniform(4, 8, 0, 0);
        let msgs = plan_transfers(&ar(AllreduceAlg::RecursiveDoubling, AllreduceStyle::PerRank, 64), &t).unwrap();
        let pairs: BTreeSet<(u32, u32)> = msgs.iter().map(|m| (m.src_rank, m.dst_rank)).collect();
        for i in 0..32u32 {
            for j in 0..32u32 {
                assert_eq!(pairs.contains(&(i, j)), (i ^ j).count_ones() == 1, "{i} {j}");
            }
        }
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let t = ClusterTopology::uniform(1, 6, 0, 0);
        for alg in [AllreduceAlg::RecursiveDoubling, AllreduceAlg::ReduceScatterAllgather] {
            let err = plan_transfers(&ar(alg, AllreduceStyle::PerRank, 64), &t).unwrap_err();
            assert!(matches!(err, SimError::UnsupportedSize { participants: 6, .. }));
        }
        assert!(plan_transfers(&ar(AllreduceAlg::Ring, AllreduceStyle::PerRank, 64), &t).is_ok());
    }

    #[test]
    fn reduce_scatter_allgather_moves_expected_volume() {
        let t = ClusterTopology::uniform(1, 8, 0, 0);
        let msgs = plan_transfers(&ar(AllreduceAlg::ReduceScatterAllgather, AllreduceStyle::PerRank, 800), &t).unwrap();
        let mut per_rank: BTreeMap<u32, u64> = BTreeMap::new();
        for m in &msgs {
            *per_rank.entry(m.src_rank).or_default() += m.bytes;
            assert_eq!((m.src_rank ^ m.dst_rank).count_ones(), 1);
        }
        // 400 + 200 + 100 out, then the mirror back
        assert!(per_rank.values().all(|&b| b == 1400));
    }

    #[test]
    fn node_leader_ring_routes_inter_node_through_leaders() {
        let t = ClusterTopology::uniform(8, 4, 0, 0);
        let msgs = plan_transfers(&ar(AllreduceAlg::Ring, AllreduceStyle::NodeLeader, 1024), &t).unwrap();
        let leaders: BTreeSet<u32> = (0..8).map(|n| n * 4).collect();
        for m in &msgs {
            if t.same_node(m.src_rank, m.dst_rank) {
                assert!(leaders.contains(&m.src_rank) || leaders.contains(&m.dst_rank));
            } else {
                assert!(leaders.contains(&m.src_rank) && leaders.contains(&m.dst_rank));
            }
        }
    }

    #[test]
    fn tags_are_unique_per_pair_and_encode_ranks() {
        let t = ClusterTopology::uniform(2, 2, 0, 0);
        let msgs = plan_transfers(&WorkloadSpec::all_to_all(8, 3, BufferKind::Host), &t).unwrap();
        let mut seen = HashSet::new();
        for m in &msgs {
            assert_eq!(m.tag >> 32, m.src_rank as u64);
            assert_eq!((m.tag >> 16) & 0xffff, m.dst_rank as u64);
            assert!(seen.insert((m.src_rank, m.dst_rank, m.tag)));
        }
        assert_eq!(msgs.len(), 12 * 3);
        assert_eq!(msgs.last().unwrap().round, 2);
    }

    #[test]
    fn halo_skips_zero_demand() {
        let t = ClusterTopology::uniform(1, 3, 0, 0);
        let demand = vec![vec![0, 5, 0], vec![5, 0, 7], vec![0, 7, 0]];
        let msgs = plan_transfers(&WorkloadSpec::halo(demand, 1, BufferKind::Host), &t).unwrap();
        let legs: Vec<_> = msgs.iter().map(|m| (m.src_rank, m.dst_rank, m.bytes)).collect();
        assert_eq!(legs, [(0, 1, 5), (1, 0, 5), (1, 2, 7), (2, 1, 7)]);
        assert_eq!(msgs[2].send_offset, 5);
    }
}
