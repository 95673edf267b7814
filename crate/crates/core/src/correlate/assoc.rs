//! Ties each linked transport op to the ucp send/receive pair it served.

use std::collections::HashMap;

use super::{direction, Index, Link, LinkFailure, OpRef};
use crate::model::UctOp;

/// Slack allowed between a transport op's end and its ucp op's end.
pub const TEMPORAL_SLACK_NS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Association {
    /// Index into the matched pairs.
    Pair(usize),
    Orphan,
    Ambiguous(Vec<usize>),
}

/// Candidates are the pairs whose sender and receiver are the op's source
/// and target, or for a loopback op any pair the process takes part in.
/// They are narrowed by
/// - the endpoint being one the ucp send drives, when the op runs on the sender;
/// - the op lying within the executor's ucp op (up to [`TEMPORAL_SLACK_NS`]);
/// - a recorded buffer falling inside the matching ucp buffer, when any
///   candidate shows such evidence;
/// - otherwise, the bufferless bytes already credited to a pair by the same
///   process leaving room for this op.
pub(crate) fn associate(
    ix: &Index,
    links: &[Vec<Result<Link, LinkFailure>>],
    pairs: &[(OpRef, OpRef)],
) -> Vec<Vec<Option<Association>>> {
    let mut by_route: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut by_proc: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(s, r)) in pairs.iter().enumerate() {
        by_route.entry((s.proc, r.proc)).or_default().push(i);
        by_proc.entry(s.proc).or_default().push(i);
        if r.proc != s.proc {
            by_proc.entry(r.proc).or_default().push(i);
        }
    }
    let empty = Vec::new();
    let mut credited: HashMap<(usize, usize), u64> = HashMap::new();
    let mut out = Vec::with_capacity(links.len());
    for (exec, per) in links.iter().enumerate() {
        let mut row = Vec::with_capacity(per.len());
        for (idx, l) in per.iter().enumerate() {
            let Ok(link) = l else {
                row.push(None);
                continue;
            };
            let op = ix.procs[exec].uct[idx];
            let cands = if link.peer == exec {
                by_proc.get(&exec).unwrap_or(&empty)
            } else {
                by_route.get(&direction(op, exec, link.peer)).unwrap_or(&empty)
            };
            let a = choose(ix, exec, link, op, pairs, cands, &credited);
            if let Association::Pair(i) = a {
                if op.local_buf.is_none() && op.remote_buf.is_none() {
                    *credited.entry((i, exec)).or_insert(0) += op.length;
                }
            }
            row.push(Some(a));
        }
        out.push(row);
    }
    out
}

fn choose(
    ix: &Index,
    exec: usize,
    link: &Link,
    op: &UctOp,
    pairs: &[(OpRef, OpRef)],
    cands: &[usize],
    credited: &HashMap<(usize, usize), u64>,
) -> Association {
    // the pair's ucp op recorded by `proc`, if it takes part
    let side = |i: usize, proc: usize| {
        let (s, r) = pairs[i];
        if s.proc == proc {
            Some(ix.ucp(s))
        } else if r.proc == proc {
            Some(ix.ucp(r))
        } else {
            None
        }
    };
    let feasible: Vec<usize> = cands
        .iter()
        .copied()
        .filter(|&i| {
            let (s, _) = pairs[i];
            if s.proc == exec {
                let send = ix.ucp(s);
                if let Some(eps) = &send.managed_uct_eps {
                    if !eps.contains(&op.ep_id) {
                        return false;
                    }
                }
            }
            let Some(local) = side(i, exec) else { return false };
            local.t_start <= op.t_start && op.t_end() <= local.t_end.saturating_add(TEMPORAL_SLACK_NS)
        })
        .collect();
    let evidence = |i: usize| {
        [(op.local_buf, exec), (op.remote_buf, link.peer)].into_iter().any(|(buf, owner)| {
            buf.is_some_and(|b| side(i, owner).is_some_and(|u| u.buffer_contains(b, op.length)))
        })
    };
    let with_evidence: Vec<usize> = feasible.iter().copied().filter(|&i| evidence(i)).collect();
    let remaining = if !with_evidence.is_empty() {
        with_evidence
    } else {
        feasible
            .into_iter()
            .filter(|&i| {
                let bytes = credited.get(&(i, exec)).copied().unwrap_or(0) + op.length;
                side(i, exec).is_some_and(|u| bytes <= u.length)
            })
            .collect()
    };
    match remaining.len() {
        0 => Association::Orphan,
        1 => Association::Pair(remaining[0]),
        _ => Association::Ambiguous(remaining),
    }
}
