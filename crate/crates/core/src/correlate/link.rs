//! Links each transport op to the process owning its remote endpoint.

use std::collections::BTreeSet;

use super::{Index, IssueKind};
use crate::model::{IfaceId, RemoteKind, UctOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub peer: usize,
    /// Interface of the peer the remote address resolved to.
    pub peer_iface: Option<IfaceId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkFailure {
    /// The endpoint had no connection at or before the op.
    NoConnection,
    /// No loaded process owns the remote address.
    UnresolvedAddress(String),
    /// Several processes own the remote address.
    AmbiguousRemote(Vec<usize>),
}

impl LinkFailure {
    pub fn issue_kind(&self) -> IssueKind {
        match self {
            LinkFailure::NoConnection => IssueKind::NoConnection,
            LinkFailure::UnresolvedAddress(_) => IssueKind::UnresolvedAddress,
            LinkFailure::AmbiguousRemote(_) => IssueKind::AmbiguousRemote,
        }
    }

    pub(crate) fn describe(&self, ix: &Index) -> String {
        match self {
            LinkFailure::NoConnection => "endpoint has no connection before the op".into(),
            LinkFailure::UnresolvedAddress(addr) => format!("remote address {addr} has no owner"),
            LinkFailure::AmbiguousRemote(owners) => {
                let names: Vec<&str> = owners.iter().map(|&p| ix.uid(p)).collect();
                format!("remote address owned by {}", names.join(", "))
            }
        }
    }
}

pub(crate) fn link_all(ix: &Index) -> Vec<Vec<Result<Link, LinkFailure>>> {
    (0..ix.procs.len())
        .map(|p| ix.procs[p].uct.iter().map(|op| link_op(ix, p, op)).collect())
        .collect()
}

pub(crate) fn link_op(ix: &Index, proc: usize, op: &UctOp) -> Result<Link, LinkFailure> {
    let view = &ix.procs[proc];
    let conn = view
        .conns
        .get(&op.ep_id)
        .and_then(|cs| cs.iter().rev().find(|c| c.t_connect <= op.t_start))
        .ok_or(LinkFailure::NoConnection)?;
    let addr = conn.remote_addr.as_bytes();
    let by_ep = || {
        ix.ep_addrs.get(addr).into_iter().flatten().map(|&(p, ep)| (p, Some(ix.procs[p].eps[&ep].iface_id)))
    };
    let by_iface = || ix.iface_addrs.get(addr).into_iter().flatten().map(|&(p, f)| (p, Some(f)));
    let owners: Vec<(usize, Option<IfaceId>)> = match conn.remote_kind_hint {
        Some(RemoteKind::Ep) => by_ep().collect(),
        Some(RemoteKind::Iface | RemoteKind::Device) => by_iface().collect(),
        None => by_ep().chain(by_iface()).collect(),
    };
    let procs: BTreeSet<usize> = owners.iter().map(|o| o.0).collect();
    match procs.len() {
        0 => Err(LinkFailure::UnresolvedAddress(conn.remote_addr.to_hex())),
        1 => {
            let (peer, peer_iface) = owners[0];
            let local = ix.local_iface(proc, op);
            if local.transport.requires_nic() {
                let nic = peer_iface.and_then(|f| ix.procs[peer].ifaces[&f].net_device.as_ref());
                if nic.is_none() {
                    return Err(LinkFailure::UnresolvedAddress(format!(
                        "{} (peer interface has no net_device)",
                        conn.remote_addr.to_hex()
                    )));
                }
            }
            Ok(Link { peer, peer_iface })
        }
        _ => Err(LinkFailure::AmbiguousRemote(procs.into_iter().collect())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::{ProcessTrace, TraceSet};
    use crate::model::{
        AddressBlob, CommLog, CommRecord, ConnectionRecord, EndpointRecord, EpId, InterfaceRecord,
        ProcessMeta, Transport, UctFn,
    };

    fn meta(rank: u32) -> CommRecord {
        CommRecord::Meta(ProcessMeta { proc_uid: format!("p{rank}"), rank, node: "n0".into(), pid: 100 + rank })
    }

    fn iface(id: u64, addr: &[u8]) -> CommRecord {
        CommRecord::Iface(InterfaceRecord {
            iface_id: IfaceId(id),
            transport: Transport::Sysv,
            memory_domain: "sysv".into(),
            net_device: None,
            iface_addr: Some(AddressBlob::new(addr.to_vec()).unwrap()),
            t_create: 1,
        })
    }

    fn ep(id: u64, iface: u64) -> CommRecord {
        CommRecord::Ep(EndpointRecord { ep_id: EpId(id), iface_id: IfaceId(iface), ep_addr: None, t_create: 2 })
    }

    fn conn(ep: u64, addr: &[u8], t: u64, hint: Option<RemoteKind>) -> CommRecord {
        CommRecord::Conn(ConnectionRecord {
            ep_id: EpId(ep),
            remote_addr: AddressBlob::new(addr.to_vec()).unwrap(),
            remote_kind_hint: hint,
            t_connect: t,
        })
    }

    fn op(seq: u64, ep: u64, t: u64) -> CommRecord {
        let f = UctFn::new(crate::model::UctFamily::Am, crate::model::UctMode::Bcopy);
        CommRecord::Uct(UctOp {
            seq,
            family: f.family,
            mode: f.mode,
            ep_id: EpId(ep),
            length: 100,
            local_buf: None,
            remote_buf: None,
            am_id: Some(3),
            completion_slot: None,
            t_start: t,
            t_complete: None,
            callstack: vec![],
        })
    }

    fn set(logs: Vec<Vec<CommRecord>>) -> TraceSet {
        let ps = logs
            .into_iter()
            .map(|r| ProcessTrace { comm: CommLog::from_records(r).unwrap(), alloc: None })
            .collect();
        TraceSet::new(ps, None).unwrap()
    }

    #[test]
    fn latest_connection_wins() {
        let ts = set(vec![
            vec![
                meta(0),
                iface(1, &[1]),
                ep(10, 1),
                conn(10, &[2], 5, Some(RemoteKind::Iface)),
                conn(10, &[3], 50, Some(RemoteKind::Iface)),
                op(1, 10, 20),
                op(2, 10, 60),
                op(3, 10, 4),
            ],
            vec![meta(1), iface(1, &[2])],
            vec![meta(2), iface(1, &[3])],
        ]);
        let ix = Index::build(&ts);
        let links = link_all(&ix);
        assert_eq!(links[0][0].as_ref().unwrap().peer, 1);
        assert_eq!(links[0][1].as_ref().unwrap().peer, 2);
        assert_eq!(links[0][2], Err(LinkFailure::NoConnection));
    }

    #[test]
    fn missing_owner_and_ambiguity() {
        let ts = set(vec![
            vec![
                meta(0),
                iface(1, &[1]),
                ep(10, 1),
                ep(11, 1),
                conn(10, &[9], 5, None),
                conn(11, &[2], 5, None),
                op(1, 10, 20),
                op(2, 11, 20),
            ],
            vec![meta(1), iface(1, &[2])],
            vec![meta(2), iface(1, &[2])],
        ]);
        let ix = Index::build(&ts);
        let links = link_all(&ix);
        assert!(matches!(links[0][0], Err(LinkFailure::UnresolvedAddress(_))));
        assert_eq!(links[0][1], Err(LinkFailure::AmbiguousRemote(vec![1, 2])));
    }

    #[test]
    fn hint_restricts_the_address_space() {
        let ts = set(vec![
            vec![meta(0), iface(1, &[1]), ep(10, 1), conn(10, &[2], 5, Some(RemoteKind::Ep)), op(1, 10, 20)],
            vec![meta(1), iface(1, &[2])],
        ]);
        let ix = Index::build(&ts);
        assert!(matches!(link_all(&ix)[0][0], Err(LinkFailure::UnresolvedAddress(_))));
    }
}
