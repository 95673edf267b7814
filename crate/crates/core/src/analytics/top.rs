use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Analyzer, FilterSpec};
use crate::model::{Transport, UctFn, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRow {
    pub uct_fn: UctFn,
    pub transport: Transport,
    pub bytes: u64,
    pub count: u64,
    pub pct_bytes: f64,
    pub pct_count: f64,
}

/// Share of bytes and of transfers per (uct function, transport), relative
/// to the filtered comms. A zero total gives zero percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopContenders {
    pub schema_version: u32,
    pub total_bytes: u64,
    pub total_count: u64,
    pub rows: Vec<TopRow>,
}

impl TopContenders {
    pub fn row(&self, uct_fn: UctFn, transport: Transport) -> Option<&TopRow> {
        self.rows.iter().find(|r| r.uct_fn == uct_fn && r.transport == transport)
    }
}

fn pct(part: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        part as f64 * 100.0 / total as f64
    }
}

impl Analyzer {
    pub fn top_contenders(&self, f: &FilterSpec) -> Result<TopContenders, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let mut groups: BTreeMap<(UctFn, Transport), (u64, u64)> = BTreeMap::new();
        for c in &comms {
            let g = groups.entry((c.op.uct_fn(), c.transport)).or_insert((0, 0));
            g.0 += c.op.length;
            g.1 += 1;
        }
        let total_bytes: u64 = groups.values().map(|g| g.0).sum();
        let total_count: u64 = groups.values().map(|g| g.1).sum();
        let mut rows: Vec<TopRow> = groups
            .into_iter()
            .map(|((uct_fn, transport), (bytes, count))| TopRow {
                uct_fn,
                transport,
                bytes,
                count,
                pct_bytes: pct(bytes, total_bytes),
                pct_count: pct(count, total_count),
            })
            .collect();
        // exact byte counts order the rows, so equal percentages tie exactly
        rows.sort_by(|a, b| {
            b.bytes
                .cmp(&a.bytes)
                .then_with(|| a.uct_fn.name().cmp(b.uct_fn.name()))
                .then_with(|| a.transport.as_str().cmp(b.transport.as_str()))
        });
        Ok(TopContenders { schema_version: SCHEMA_VERSION, total_bytes, total_count, rows })
    }
}
