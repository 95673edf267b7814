//! Newline-delimited per-process logs: one JSON object per line with a
//! `kind` discriminator.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::records::{
    AllocEvent, CommRecord, ConnectionRecord, EndpointRecord, EpId, IfaceId, InterfaceRecord,
    Nanos, ProcessMeta, UcpOp, UctOp,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: malformed record: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("line {line}: dangling {kind} reference {id}")]
    DanglingReference { line: usize, kind: &'static str, id: String },
    #[error("no meta record")]
    MissingMeta,
    #[error("line {line}: duplicate meta record")]
    DuplicateMeta { line: usize },
    #[error("line {line}: free of {base:#x} without a live allocation")]
    FreeWithoutAlloc { line: usize, base: u64 },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl LogError {
    /// 1-based line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::MalformedRecord { line, .. }
            | LogError::DanglingReference { line, .. }
            | LogError::DuplicateMeta { line }
            | LogError::FreeWithoutAlloc { line, .. } => Some(*line),
            LogError::MissingMeta | LogError::InvariantViolation(_) => None,
        }
    }
}

/// A log error located in a file.
#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Log { path: PathBuf, source: LogError },
}

impl TraceFileError {
    pub fn path(&self) -> &Path {
        match self {
            TraceFileError::Io { path, .. } | TraceFileError::Log { path, .. } => path,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            TraceFileError::Log { source, .. } => source.line(),
            TraceFileError::Io { .. } => None,
        }
    }
}

/// One process's communication log, records kept in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommLog {
    records: Vec<CommRecord>,
    meta_index: usize,
}

impl CommLog {
    /// Validates `records` and wraps them. Errors carry the 1-based record
    /// position as their line.
    pub fn from_records(records: Vec<CommRecord>) -> Result<Self, LogError> {
        let meta_index = validate_comm(&records)?;
        Ok(Self { records, meta_index })
    }

    pub fn records(&self) -> &[CommRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CommRecord> {
        self.records
    }

    pub fn meta(&self) -> &ProcessMeta {
        match &self.records[self.meta_index] {
            CommRecord::Meta(m) => m,
            _ => unreachable!("meta_index always points at the meta record"),
        }
    }

    pub fn ifaces(&self) -> impl Iterator<Item = &InterfaceRecord> {
        self.records.iter().filter_map(|r| match r {
            CommRecord::Iface(x) => Some(x),
            _ => None,
        })
    }

    pub fn eps(&self) -> impl Iterator<Item = &EndpointRecord> {
        self.records.iter().filter_map(|r| match r {
            CommRecord::Ep(x) => Some(x),
            _ => None,
        })
    }

    pub fn conns(&self) -> impl Iterator<Item = &ConnectionRecord> {
        self.records.iter().filter_map(|r| match r {
            CommRecord::Conn(x) => Some(x),
            _ => None,
        })
    }

    pub fn uct_ops(&self) -> impl Iterator<Item = &UctOp> {
        self.records.iter().filter_map(|r| match r {
            CommRecord::Uct(x) => Some(x),
            _ => None,
        })
    }

    pub fn ucp_ops(&self) -> impl Iterator<Item = &UcpOp> {
        self.records.iter().filter_map(|r| match r {
            CommRecord::Ucp(x) => Some(x),
            _ => None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            push_line(&mut out, r);
        }
        out
    }
}

/// One process's device allocation log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocLog {
    events: Vec<AllocEvent>,
}

impl AllocLog {
    pub fn from_events(events: Vec<AllocEvent>) -> Result<Self, LogError> {
        validate_alloc(&events)?;
        Ok(Self { events })
    }

    pub fn events(&self) -> &[AllocEvent] {
        &self.events
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            push_line(&mut out, e);
        }
        out
    }
}

fn push_line<T: serde::Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("records always serialize");
    out.push(b'\n');
}

/// Splits a stream into numbered lines. A trailing newline is optional; an
/// empty line anywhere else is an error.
fn lines(stream: &[u8]) -> Result<Vec<(usize, &str)>, LogError> {
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let body = stream.strip_suffix(b"\n").unwrap_or(stream);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let line = i + 1;
            let text = std::str::from_utf8(raw).map_err(|_| LogError::MalformedRecord {
                line,
                detail: "invalid utf-8".into(),
            })?;
            if text.trim().is_empty() {
                return Err(LogError::MalformedRecord { line, detail: "empty line".into() });
            }
            Ok((line, text))
        })
        .collect()
}

fn parse_lines<T: serde::de::DeserializeOwned>(stream: &[u8]) -> Result<Vec<T>, LogError> {
    lines(stream)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(text)
                .map_err(|e| LogError::MalformedRecord { line, detail: e.to_string() })
        })
        .collect()
}

pub fn parse_comm_log(stream: &[u8]) -> Result<CommLog, LogError> {
    CommLog::from_records(parse_lines(stream)?)
}

pub fn parse_alloc_log(stream: &[u8]) -> Result<AllocLog, LogError> {
    AllocLog::from_events(parse_lines(stream)?)
}

/// Serializes records in input order after checking every invariant.
pub fn write_comm_log(records: &[CommRecord]) -> Result<Vec<u8>, LogError> {
    validate_comm(records).map_err(|e| LogError::InvariantViolation(e.to_string()))?;
    let mut out = Vec::new();
    for r in records {
        push_line(&mut out, r);
    }
    Ok(out)
}

pub fn write_alloc_log(events: &[AllocEvent]) -> Result<Vec<u8>, LogError> {
    validate_alloc(events).map_err(|e| LogError::InvariantViolation(e.to_string()))?;
    let mut out = Vec::new();
    for e in events {
        push_line(&mut out, e);
    }
    Ok(out)
}

pub fn read_comm_log_file(path: &Path) -> Result<CommLog, TraceFileError> {
    let bytes = fs::read(path).map_err(|source| TraceFileError::Io { path: path.into(), source })?;
    parse_comm_log(&bytes).map_err(|source| TraceFileError::Log { path: path.into(), source })
}

pub fn read_alloc_log_file(path: &Path) -> Result<AllocLog, TraceFileError> {
    let bytes = fs::read(path).map_err(|source| TraceFileError::Io { path: path.into(), source })?;
    parse_alloc_log(&bytes).map_err(|source| TraceFileError::Log { path: path.into(), source })
}

fn validate_comm(records: &[CommRecord]) -> Result<usize, LogError> {
    let mut meta_index = None;
    let mut ifaces: HashMap<IfaceId, ()> = HashMap::new();
    let mut eps: HashMap<EpId, Nanos> = HashMap::new();
    let mut last_seq: Option<u64> = None;

    let mut check_seq = |line: usize, seq: u64| -> Result<(), LogError> {
        if last_seq.is_some_and(|prev| seq <= prev) {
            return Err(LogError::MalformedRecord {
                line,
                detail: format!("seq {seq} does not increase"),
            });
        }
        last_seq = Some(seq);
        Ok(())
    };
    let malformed = |line: usize, detail: String| LogError::MalformedRecord { line, detail };

    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        match rec {
            CommRecord::Meta(_) => {
                if meta_index.is_some() {
                    return Err(LogError::DuplicateMeta { line });
                }
                meta_index = Some(i);
            }
            CommRecord::Iface(r) => {
                r.validate().map_err(|d| malformed(line, d))?;
                if ifaces.insert(r.iface_id, ()).is_some() {
                    return Err(malformed(line, format!("duplicate iface_id {}", r.iface_id)));
                }
            }
            CommRecord::Ep(r) => {
                if !ifaces.contains_key(&r.iface_id) {
                    return Err(LogError::DanglingReference {
                        line,
                        kind: "iface",
                        id: r.iface_id.to_string(),
                    });
                }
                if eps.insert(r.ep_id, r.t_create).is_some() {
                    return Err(malformed(line, format!("duplicate ep_id {}", r.ep_id)));
                }
            }
            CommRecord::Conn(r) => {
                let Some(&t_create) = eps.get(&r.ep_id) else {
                    return Err(LogError::DanglingReference {
                        line,
                        kind: "ep",
                        id: r.ep_id.to_string(),
                    });
                };
                if r.t_connect < t_create {
                    return Err(malformed(line, "t_connect precedes ep creation".into()));
                }
            }
            CommRecord::Uct(op) => {
                op.validate().map_err(|d| malformed(line, d))?;
                if !eps.contains_key(&op.ep_id) {
                    return Err(LogError::DanglingReference {
                        line,
                        kind: "ep",
                        id: op.ep_id.to_string(),
                    });
                }
                check_seq(line, op.seq)?;
            }
            CommRecord::Ucp(op) => {
                op.validate().map_err(|d| malformed(line, d))?;
                for ep in op.managed_uct_eps.iter().flatten() {
                    if !eps.contains_key(ep) {
                        return Err(LogError::DanglingReference {
                            line,
                            kind: "ep",
                            id: ep.to_string(),
                        });
                    }
                }
                check_seq(line, op.seq)?;
            }
        }
    }
    meta_index.ok_or(LogError::MissingMeta)
}

fn validate_alloc(events: &[AllocEvent]) -> Result<(), LogError> {
    // live allocations keyed by base
    let mut live: BTreeMap<u64, (u64, Nanos)> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        let line = i + 1;
        match *ev {
            AllocEvent::Alloc { base, length, .. } => {
                if length == 0 {
                    return Err(LogError::MalformedRecord { line, detail: "zero-length alloc".into() });
                }
                let end = base.checked_add(length).ok_or_else(|| LogError::MalformedRecord {
                    line,
                    detail: "allocation wraps the address space".into(),
                })?;
                let overlaps_prev =
                    live.range(..=base).next_back().is_some_and(|(&b, &(len, _))| b + len > base);
                let overlaps_next = live.range(base..end).next().is_some();
                if overlaps_prev || overlaps_next {
                    return Err(LogError::MalformedRecord {
                        line,
                        detail: format!("allocation at {base:#x} overlaps a live allocation"),
                    });
                }
                live.insert(base, (length, ev.t()));
            }
            AllocEvent::Free { base, t } => match live.remove(&base) {
                None => return Err(LogError::FreeWithoutAlloc { line, base }),
                Some((_, t_alloc)) if t < t_alloc => {
                    return Err(LogError::MalformedRecord {
                        line,
                        detail: "free precedes its allocation".into(),
                    })
                }
                Some(_) => {}
            },
        }
    }
    Ok(())
}
