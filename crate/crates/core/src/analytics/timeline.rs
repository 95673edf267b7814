use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Analyzer, FilterSpec, Metric};
use crate::model::{Nanos, Transport, UctFn, SCHEMA_VERSION};

pub const DEFAULT_BIN_COUNT: u64 = 100;
pub const MAX_TIMELINE_BINS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcSeries {
    pub proc: String,
    /// One value per bin, zero bins included.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub proc: String,
    pub seq: u64,
    pub src_proc: String,
    pub dst_proc: String,
    pub uct_fn: UctFn,
    pub transport: Transport,
    pub t_start: Nanos,
    pub t_end: Nanos,
    pub value: u64,
}

/// Activity of each process (the one that recorded the op) over time.
/// Bin `k` covers `[t0 + k*bin_ns, t0 + (k+1)*bin_ns)`. An op's value is
/// spread over the bins its span overlaps, in proportion to the overlap; an
/// op without a completion time is an instant at its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub schema_version: u32,
    pub metric: Metric,
    pub bin_ns: u64,
    pub t0: Nanos,
    pub bins: usize,
    pub procs: Vec<ProcSeries>,
    pub spans: Vec<Span>,
}

impl Timeline {
    pub fn total(&self) -> f64 {
        self.procs.iter().flat_map(|p| &p.values).sum()
    }
}

impl Analyzer {
    /// Bin width splitting the filtered time range into [`DEFAULT_BIN_COUNT`] bins.
    pub fn default_bin_ns(&self, f: &FilterSpec) -> Result<u64, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let lo = comms.iter().map(|c| c.op.t_start).min().unwrap_or(0);
        let hi = comms.iter().map(|c| c.t_end()).max().unwrap_or(0);
        Ok(((hi - lo) / DEFAULT_BIN_COUNT + 1).max(1))
    }

    pub fn timeline(&self, f: &FilterSpec, bin_ns: u64) -> Result<Timeline, AnalyticsError> {
        if bin_ns == 0 {
            return Err(AnalyticsError::ZeroBin);
        }
        let comms = self.apply_filter(f)?;
        let procs = &self.trace.processes;
        let lo = comms.iter().map(|c| c.op.t_start).min();
        let hi = comms.iter().map(|c| c.t_end()).max();
        let (t0, bins) = match (lo, hi) {
            (Some(lo), Some(hi)) => {
                let t0 = lo - lo % bin_ns;
                let bins = (hi - t0) / bin_ns + 1;
                if bins > MAX_TIMELINE_BINS {
                    return Err(AnalyticsError::TooManyBins { bins, max: MAX_TIMELINE_BINS });
                }
                (t0, bins as usize)
            }
            _ => (0, 0),
        };
        let mut values = vec![vec![0.0f64; bins]; procs.len()];
        let mut spans = Vec::with_capacity(comms.len());
        for c in comms {
            let v = f.metric.of(c);
            let (s, e) = (c.op.t_start, c.t_end());
            let row = &mut values[self.rank_pos(&c.proc)];
            let first = ((s - t0) / bin_ns) as usize;
            if e == s {
                row[first] += v as f64;
            } else {
                let last = ((e - 1 - t0) / bin_ns) as usize;
                let len = (e - s) as f64;
                for (k, slot) in row.iter_mut().enumerate().take(last + 1).skip(first) {
                    let b0 = t0 + k as u64 * bin_ns;
                    let overlap = e.min(b0 + bin_ns) - s.max(b0);
                    *slot += v as f64 * overlap as f64 / len;
                }
            }
            spans.push(Span {
                proc: c.proc.clone(),
                seq: c.op.seq,
                src_proc: c.src_proc.clone(),
                dst_proc: c.dst_proc.clone(),
                uct_fn: c.op.uct_fn(),
                transport: c.transport,
                t_start: s,
                t_end: e,
                value: v,
            });
        }
        let procs = procs
            .iter()
            .zip(values)
            .map(|(p, values)| ProcSeries { proc: p.proc_uid.clone(), values })
            .collect();
        Ok(Timeline { schema_version: SCHEMA_VERSION, metric: f.metric, bin_ns, t0, bins, procs, spans })
    }
}
