//! Filters as URL query strings.
//!
//! Set-valued fields repeat their key (`transports=rc_mlx5&transports=sysv`),
//! times are decimal nanoseconds (`t_min=1000`), and `metric` is `bytes` or
//! `count`. Keys may appear in any order; a scalar key may appear once.

use std::collections::BTreeSet;
use std::fmt;

use commtrace_core::analytics::{FilterSpec, Metric};

pub const SET_KEYS: [&str; 5] = ["transports", "uct_fns", "mpi_fns", "nodes", "procs"];
pub const BIN_KEY: &str = "bin_ns";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryError(pub String);

impl fmt::Display for QueryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for QueryError {}

/// A parsed request: the filter and, for timelines, a bin width.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViewQuery {
    pub filter: FilterSpec,
    pub bin_ns: Option<u64>,
}

fn insert<T: Ord + std::str::FromStr<Err = String>>(
    set: &mut BTreeSet<T>,
    key: &str,
    value: &str,
) -> Result<(), QueryError> {
    let v = value.parse().map_err(|e| QueryError(format!("{key}: {e}")))?;
    set.insert(v);
    Ok(())
}

fn scalar<T: std::str::FromStr>(slot: &mut Option<T>, key: &str, value: &str) -> Result<(), QueryError> {
    if slot.is_some() {
        return Err(QueryError(format!("{key} given more than once")));
    }
    let v = value.parse().map_err(|_| QueryError(format!("{key}: '{value}' is not a valid value")))?;
    *slot = Some(v);
    Ok(())
}

/// Parses decoded key/value pairs. `allow_bin` admits `bin_ns`.
pub fn parse_pairs<'a, I>(pairs: I, allow_bin: bool) -> Result<ViewQuery, QueryError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut q = ViewQuery::default();
    let mut metric: Option<Metric> = None;
    for (key, value) in pairs {
        if value.is_empty() {
            return Err(QueryError(format!("{key}: empty value")));
        }
        let f = &mut q.filter;
        match key {
            "transports" => insert(&mut f.transports, key, value)?,
            "uct_fns" => insert(&mut f.uct_fns, key, value)?,
            "mpi_fns" => {
                f.mpi_fns.insert(value.to_string());
            }
            "nodes" => {
                f.nodes.insert(value.to_string());
            }
            "procs" => {
                f.procs.insert(value.to_string());
            }
            "t_min" => scalar(&mut f.t_min, key, value)?,
            "t_max" => scalar(&mut f.t_max, key, value)?,
            "metric" => scalar(&mut metric, key, value)?,
            BIN_KEY if allow_bin => scalar(&mut q.bin_ns, key, value)?,
            _ => return Err(QueryError(format!("unknown query parameter '{key}'"))),
        }
    }
    q.filter.metric = metric.unwrap_or_default();
    Ok(q)
}

/// Parses a raw (still percent-encoded) query string.
pub fn parse_query(raw: &str, allow_bin: bool) -> Result<ViewQuery, QueryError> {
    let pairs: Vec<(String, String)> = url::form_urlencoded::parse(raw.as_bytes()).into_owned().collect();
    parse_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())), allow_bin)
}

/// The query string that parses back to `f`.
pub fn encode_filter(f: &FilterSpec) -> String {
    let mut s = url::form_urlencoded::Serializer::new(String::new());
    for t in &f.transports {
        s.append_pair("transports", t.as_str());
    }
    for u in &f.uct_fns {
        s.append_pair("uct_fns", u.name());
    }
    for m in &f.mpi_fns {
        s.append_pair("mpi_fns", m);
    }
    for n in &f.nodes {
        s.append_pair("nodes", n);
    }
    for p in &f.procs {
        s.append_pair("procs", p);
    }
    if let Some(t) = f.t_min {
        s.append_pair("t_min", &t.to_string());
    }
    if let Some(t) = f.t_max {
        s.append_pair("t_max", &t.to_string());
    }
    if f.metric != Metric::default() {
        s.append_pair("metric", f.metric.as_str());
    }
    s.finish()
}
