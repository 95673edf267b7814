use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Analyzer, FilterSpec, Metric};
use crate::model::{CuratedComm, EndpointKind, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub src: String,
    pub dst: String,
    pub weight: u64,
}

/// `color` is the position of the process's node, so processes sharing a
/// node share a color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessVertex {
    pub proc: String,
    pub rank: u32,
    pub node: String,
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessGraph {
    pub schema_version: u32,
    pub metric: Metric,
    pub vertices: Vec<ProcessVertex>,
    /// Ordered by source then target rank.
    pub edges: Vec<WeightedEdge>,
}

impl ProcessGraph {
    pub fn total(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Host,
    Gpu,
    Nic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl DeviceKind {
    pub fn shape(self) -> Shape {
        match self {
            DeviceKind::Gpu => Shape::Square,
            DeviceKind::Nic => Shape::Triangle,
            DeviceKind::Host => Shape::Circle,
        }
    }
}

/// Host memory is one vertex per process; gpus and nics are per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceVertex {
    pub id: String,
    pub kind: DeviceKind,
    pub node: String,
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEdge {
    pub src: String,
    pub dst: String,
    pub weight: u64,
}

/// Aggregated route of comms between two devices. Routes through NICs add
/// their weight to three edges, device to NIC, NIC to NIC and NIC to device;
/// other routes add it to one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevicePath {
    pub src_proc: String,
    pub dst_proc: String,
    pub src: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_nic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_nic: Option<String>,
    pub dst: String,
    pub weight: u64,
}

impl DevicePath {
    /// The vertex sequence this route visits.
    pub fn hops(&self) -> Vec<&str> {
        let mut v = vec![self.src.as_str()];
        v.extend(self.src_nic.as_deref());
        v.extend(self.dst_nic.as_deref());
        v.push(self.dst.as_str());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGraph {
    pub schema_version: u32,
    pub metric: Metric,
    pub vertices: Vec<DeviceVertex>,
    pub edges: Vec<DeviceEdge>,
    pub paths: Vec<DevicePath>,
}

/// Source device, source nic, target nic, target device.
type Route = (String, Option<String>, Option<String>, String);

impl Analyzer {
    pub fn process_graph(&self, f: &FilterSpec) -> Result<ProcessGraph, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let mut edges: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        let mut seen = std::collections::BTreeSet::new();
        for c in comms {
            let (i, j) = (self.rank_pos(&c.src_proc), self.rank_pos(&c.dst_proc));
            seen.insert(i);
            seen.insert(j);
            *edges.entry((i, j)).or_insert(0) += f.metric.of(c);
        }
        let procs = &self.trace.processes;
        let vertices = seen
            .into_iter()
            .map(|i| ProcessVertex {
                proc: procs[i].proc_uid.clone(),
                rank: procs[i].rank,
                node: procs[i].node.clone(),
                color: self.node_color(&procs[i].node),
            })
            .collect();
        let edges = edges
            .into_iter()
            .map(|((i, j), weight)| WeightedEdge {
                src: procs[i].proc_uid.clone(),
                dst: procs[j].proc_uid.clone(),
                weight,
            })
            .collect();
        Ok(ProcessGraph { schema_version: SCHEMA_VERSION, metric: f.metric, vertices, edges })
    }

    fn endpoint_vertex(&self, proc: &str, kind: EndpointKind, gpu: Option<u32>) -> DeviceVertex {
        let node = self.node_of(proc).to_string();
        match (kind, gpu) {
            (EndpointKind::Gpu, Some(g)) => DeviceVertex {
                id: format!("{node}/gpu{g}"),
                kind: DeviceKind::Gpu,
                name: format!("gpu{g}"),
                node,
                shape: Shape::Square,
            },
            _ => DeviceVertex {
                id: format!("{proc}/host"),
                kind: DeviceKind::Host,
                name: format!("{proc} host"),
                node,
                shape: Shape::Circle,
            },
        }
    }

    fn nic_vertex(&self, proc: &str, nic: &str) -> DeviceVertex {
        let node = self.node_of(proc).to_string();
        DeviceVertex {
            id: format!("{node}/{nic}"),
            kind: DeviceKind::Nic,
            name: nic.to_string(),
            node,
            shape: Shape::Triangle,
        }
    }

    pub fn device_graph(&self, f: &FilterSpec) -> Result<DeviceGraph, AnalyticsError> {
        let comms = self.apply_filter(f)?;
        let mut vertices: BTreeMap<String, DeviceVertex> = BTreeMap::new();
        let mut paths: BTreeMap<(usize, usize, Route), u64> = BTreeMap::new();
        for c in comms {
            let key = (self.rank_pos(&c.src_proc), self.rank_pos(&c.dst_proc), self.route(c, &mut vertices));
            *paths.entry(key).or_insert(0) += f.metric.of(c);
        }
        let procs = &self.trace.processes;
        let paths: Vec<DevicePath> = paths
            .into_iter()
            .map(|((i, j, (src, src_nic, dst_nic, dst)), weight)| DevicePath {
                src_proc: procs[i].proc_uid.clone(),
                dst_proc: procs[j].proc_uid.clone(),
                src,
                src_nic,
                dst_nic,
                dst,
                weight,
            })
            .collect();
        let mut edges: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for p in &paths {
            for hop in p.hops().windows(2) {
                *edges.entry((hop[0], hop[1])).or_insert(0) += p.weight;
            }
        }
        let edges = edges
            .into_iter()
            .map(|((s, d), weight)| DeviceEdge { src: s.to_string(), dst: d.to_string(), weight })
            .collect();
        Ok(DeviceGraph {
            schema_version: SCHEMA_VERSION,
            metric: f.metric,
            vertices: vertices.into_values().collect(),
            edges,
            paths,
        })
    }

    fn route(
        &self,
        c: &CuratedComm,
        vertices: &mut BTreeMap<String, DeviceVertex>,
    ) -> Route {
        let mut add = |v: DeviceVertex| {
            let id = v.id.clone();
            vertices.entry(id.clone()).or_insert(v);
            id
        };
        let src = add(self.endpoint_vertex(&c.src_proc, c.src_endpoint_kind, c.src_gpu));
        let dst = add(self.endpoint_vertex(&c.dst_proc, c.dst_endpoint_kind, c.dst_gpu));
        let (src_nic, dst_nic) = match (&c.src_nic, &c.dst_nic) {
            (Some(s), Some(d)) => (Some(add(self.nic_vertex(&c.src_proc, s))), Some(add(self.nic_vertex(&c.dst_proc, d)))),
            _ => (None, None),
        };
        (src, src_nic, dst_nic, dst)
    }
}
