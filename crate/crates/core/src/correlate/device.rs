//! Host or gpu classification of buffer addresses.

use super::{Index, OpRef};
use crate::model::{AllocEvent, AllocLog, Nanos, UctFamily, UctOp};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Interval {
    base: u64,
    end: u64,
    device: u32,
    t_alloc: Nanos,
    t_free: Option<Nanos>,
}

/// Device allocations of one process as address ranges with lifetimes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocIndex {
    /// Sorted by base.
    intervals: Vec<Interval>,
    max_len: u64,
}

impl AllocIndex {
    pub fn from_log(log: &AllocLog) -> Self {
        let mut intervals: Vec<Interval> = Vec::new();
        let mut open = std::collections::HashMap::new();
        for ev in log.events() {
            match *ev {
                AllocEvent::Alloc { device_index, base, length, t } => {
                    open.insert(base, intervals.len());
                    intervals.push(Interval {
                        base,
                        end: base.saturating_add(length),
                        device: device_index,
                        t_alloc: t,
                        t_free: None,
                    });
                }
                AllocEvent::Free { base, t } => {
                    if let Some(i) = open.remove(&base) {
                        intervals[i].t_free = Some(t);
                    }
                }
            }
        }
        intervals.sort_by_key(|iv| (iv.base, iv.t_alloc));
        let max_len = intervals.iter().map(|iv| iv.end - iv.base).max().unwrap_or(0);
        Self { intervals, max_len }
    }

    /// Device holding `addr` at time `t`, if any allocation covered it then.
    pub fn device_at(&self, addr: u64, t: Nanos) -> Option<u32> {
        let upper = self.intervals.partition_point(|iv| iv.base <= addr);
        self.intervals[..upper]
            .iter()
            .rev()
            .take_while(|iv| addr - iv.base < self.max_len)
            .find(|iv| addr < iv.end && iv.t_alloc <= t && iv.t_free.is_none_or(|f| t < f))
            .map(|iv| iv.device)
    }
}

/// Gpu holding the source (`src == true`) or target side of `op`.
///
/// A side with a recorded buffer is looked up in the process that owns the
/// buffer. A side without one falls back to the user buffer of the
/// associated ucp send or receive. Remote lookups use the owner's ucp
/// timestamp when one is available so that clock offsets between nodes do
/// not matter.
pub(crate) fn side_device(
    ix: &Index,
    exec: usize,
    peer: usize,
    op: &UctOp,
    pair: Option<(OpRef, OpRef)>,
    src: bool,
) -> Option<u32> {
    let is_get = op.family == UctFamily::Get;
    let (buf, owner) = if src {
        (op.source_buf(), if is_get { peer } else { exec })
    } else {
        (op.target_buf(), if is_get { exec } else { peer })
    };
    let (proc, addr, t) = match (buf, pair) {
        (Some(addr), pair) => {
            let t = if owner == exec {
                op.t_start
            } else {
                pair.and_then(|(s, r)| {
                    if s.proc == owner {
                        Some(ix.ucp(s).t_start)
                    } else if r.proc == owner {
                        Some(ix.ucp(r).t_start)
                    } else {
                        None
                    }
                })
                .unwrap_or(op.t_start)
            };
            (owner, addr, t)
        }
        (None, Some((s, r))) => {
            let side = if src { s } else { r };
            let u = ix.ucp(side);
            (side.proc, u.buffer, u.t_start)
        }
        (None, None) => return None,
    };
    ix.procs[proc].allocs.as_ref()?.device_at(addr, t)
}
