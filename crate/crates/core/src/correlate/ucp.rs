//! Pairs ucp sends with the receives that consumed them.

use std::collections::BTreeMap;

use super::{Index, IssueKind, MatchReport, OpRef};
use crate::model::UcpDir;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UcpMatching {
    /// (send, recv), ordered by send.
    pub pairs: Vec<(OpRef, OpRef)>,
    pub unmatched_sends: Vec<OpRef>,
    pub unmatched_recvs: Vec<OpRef>,
    /// Ops in groups whose order cannot be trusted across nodes.
    pub ambiguous: Vec<OpRef>,
}

impl UcpMatching {
    pub(crate) fn report_into(&self, ix: &Index, report: &mut MatchReport) {
        let lists = [
            (IssueKind::UnmatchedSend, &self.unmatched_sends, "no receive consumed this send"),
            (IssueKind::UnmatchedRecv, &self.unmatched_recvs, "no send feeds this receive"),
            (IssueKind::AmbiguousMatch, &self.ambiguous, "several sends share peer and tag across nodes"),
        ];
        for (kind, ops, detail) in lists {
            for &r in ops {
                report.push(kind, ix.uid(r.proc), ix.ucp(r).seq, detail.into());
            }
        }
    }
}

/// Within one (sender, receiver, tag) group the earliest send pairs with the
/// earliest receive. On one node a receive must also end no earlier than its
/// send started. Across nodes timestamps are not comparable, so only groups
/// holding a single send are matched; larger ones are reported as ambiguous.
pub(crate) fn match_ucp(ix: &Index) -> UcpMatching {
    type Group = (Vec<OpRef>, Vec<OpRef>);
    let mut groups: BTreeMap<(usize, usize, u64), Group> = BTreeMap::new();
    let mut out = UcpMatching::default();
    for (p, view) in ix.procs.iter().enumerate() {
        for (i, op) in view.ucp.iter().enumerate() {
            let r = OpRef { proc: p, idx: i };
            let peer = op.peer_proc_id.as_deref().and_then(|u| ix.by_uid.get(u).copied());
            let Some(peer) = peer else {
                match op.dir {
                    UcpDir::Send => out.unmatched_sends.push(r),
                    UcpDir::Recv => out.unmatched_recvs.push(r),
                }
                continue;
            };
            match op.dir {
                UcpDir::Send => groups.entry((p, peer, op.tag)).or_default().0.push(r),
                UcpDir::Recv => groups.entry((peer, p, op.tag)).or_default().1.push(r),
            }
        }
    }
    for ((s, r, _), (mut sends, mut recvs)) in groups {
        sends.sort_by_key(|&o| (ix.ucp(o).t_start, ix.ucp(o).seq));
        recvs.sort_by_key(|&o| (ix.ucp(o).t_end, ix.ucp(o).seq));
        let same_node = ix.procs[s].meta.node == ix.procs[r].meta.node;
        if !same_node && sends.len() > 1 {
            out.ambiguous.extend(sends);
            out.ambiguous.extend(recvs);
            continue;
        }
        let mut used = vec![false; recvs.len()];
        for send in sends {
            let t0 = ix.ucp(send).t_start;
            let hit = (0..recvs.len()).find(|&k| !used[k] && (!same_node || ix.ucp(recvs[k]).t_end >= t0));
            match hit {
                Some(k) => {
                    used[k] = true;
                    out.pairs.push((send, recvs[k]));
                }
                None => out.unmatched_sends.push(send),
            }
        }
        out.unmatched_recvs.extend(recvs.iter().zip(&used).filter(|(_, u)| !**u).map(|(r, _)| *r));
    }
    out.pairs.sort();
    out.unmatched_sends.sort();
    out.unmatched_recvs.sort();
    out.ambiguous.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::{ProcessTrace, TraceSet};
    use crate::model::{CommLog, CommRecord, ProcessMeta, UcpEpId, UcpOp};

    fn meta(rank: u32, node: &str) -> CommRecord {
        CommRecord::Meta(ProcessMeta { proc_uid: format!("p{rank}"), rank, node: node.into(), pid: 1 })
    }

    fn ucp(seq: u64, dir: UcpDir, peer: &str, tag: u64, t: (u64, u64)) -> CommRecord {
        CommRecord::Ucp(UcpOp {
            seq,
            dir,
            tag,
            buffer: 0x1000,
            length: 8,
            ucp_ep_id: (dir == UcpDir::Send).then_some(UcpEpId(1)),
            managed_uct_eps: None,
            peer_proc_id: Some(peer.into()),
            t_start: t.0,
            t_end: t.1,
            callstack: vec![],
        })
    }

    fn matching(a: Vec<CommRecord>, b: Vec<CommRecord>) -> UcpMatching {
        let ps = [a, b]
            .into_iter()
            .map(|r| ProcessTrace { comm: CommLog::from_records(r).unwrap(), alloc: None })
            .collect();
        let ts = TraceSet::new(ps, None).unwrap();
        match_ucp(&Index::build(&ts))
    }

    fn r(proc: usize, idx: usize) -> OpRef {
        OpRef { proc, idx }
    }

    #[test]
    fn fifo_within_tag() {
        let m = matching(
            vec![
                meta(0, "a"),
                ucp(1, UcpDir::Send, "p1", 7, (10, 20)),
                ucp(2, UcpDir::Send, "p1", 7, (30, 40)),
                ucp(3, UcpDir::Send, "p1", 8, (31, 41)),
            ],
            vec![
                meta(1, "a"),
                ucp(1, UcpDir::Recv, "p0", 8, (0, 50)),
                ucp(2, UcpDir::Recv, "p0", 7, (0, 45)),
                ucp(3, UcpDir::Recv, "p0", 7, (0, 25)),
            ],
        );
        assert_eq!(m.pairs, vec![(r(0, 0), r(1, 2)), (r(0, 1), r(1, 1)), (r(0, 2), r(1, 0))]);
        assert!(m.unmatched_sends.is_empty() && m.unmatched_recvs.is_empty());
    }

    #[test]
    fn receive_ending_before_send_is_skipped_on_one_node() {
        let m = matching(
            vec![meta(0, "a"), ucp(1, UcpDir::Send, "p1", 7, (100, 120))],
            vec![meta(1, "a"), ucp(1, UcpDir::Recv, "p0", 7, (0, 50)), ucp(2, UcpDir::Recv, "p0", 7, (0, 150))],
        );
        assert_eq!(m.pairs, vec![(r(0, 0), r(1, 1))]);
        assert_eq!(m.unmatched_recvs, vec![r(1, 0)]);
    }

    #[test]
    fn cross_node_ignores_clock_but_flags_repeated_tags() {
        let m = matching(
            vec![meta(0, "a"), ucp(1, UcpDir::Send, "p1", 7, (100, 120)), ucp(2, UcpDir::Send, "p1", 9, (1, 2))],
            vec![
                meta(1, "b"),
                ucp(1, UcpDir::Recv, "p0", 7, (0, 50)),
                ucp(2, UcpDir::Recv, "p0", 9, (0, 1)),
                ucp(3, UcpDir::Recv, "p0", 9, (0, 1)),
            ],
        );
        assert_eq!(m.pairs, vec![(r(0, 0), r(1, 0)), (r(0, 1), r(1, 1))]);
        assert_eq!(m.unmatched_recvs, vec![r(1, 2)]);

        let m = matching(
            vec![meta(0, "a"), ucp(1, UcpDir::Send, "p1", 7, (1, 2)), ucp(2, UcpDir::Send, "p1", 7, (3, 4))],
            vec![meta(1, "b"), ucp(1, UcpDir::Recv, "p0", 7, (0, 5)), ucp(2, UcpDir::Recv, "p0", 7, (0, 6))],
        );
        assert!(m.pairs.is_empty());
        assert_eq!(m.ambiguous.len(), 4);
    }

    #[test]
    fn unknown_peer_is_unmatched() {
        let m = matching(
            vec![meta(0, "a"), ucp(1, UcpDir::Send, "ghost", 7, (1, 2))],
            vec![meta(1, "a"), ucp(1, UcpDir::Recv, "p0", 7, (0, 5))],
        );
        assert_eq!(m.unmatched_sends, vec![r(0, 0)]);
        assert_eq!(m.unmatched_recvs, vec![r(1, 0)]);
    }
}
