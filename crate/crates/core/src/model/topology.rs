use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub ranks: Vec<u32>,
    pub gpus: u32,
    pub nics: Vec<String>,
    #[serde(default)]
    pub gpu_nic_affinity: BTreeMap<u32, String>,
    #[serde(default)]
    pub rank_gpu_affinity: BTreeMap<u32, Option<u32>>,
    /// Ranks missing from this map are NUMA-correct.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub numa_correct: BTreeMap<u32, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("topology has no ranks")]
    Empty,
    #[error("duplicate node name '{0}'")]
    DuplicateNode(String),
    #[error("rank {0} appears more than once")]
    DuplicateRank(u32),
    #[error("node {node}: gpu {gpu} needs exactly one affine NIC from the node's NIC list")]
    GpuWithoutNic { node: String, gpu: u32 },
    #[error("node {node}: {detail}")]
    Invalid { node: String, detail: String },
}

/// Location of one rank inside the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankPlace {
    pub node: usize,
    pub local: usize,
}

impl ClusterTopology {
    /// `nodes` identical nodes with ranks numbered consecutively. Local rank
    /// `i` is bound to GPU `i % gpus`, GPU `g` to NIC `g % nics`.
    pub fn uniform(nodes: usize, ranks_per_node: usize, gpus: u32, nics: usize) -> Self {
        let nic_names: Vec<String> = (0..nics).map(|i| format!("mlx5_{i}")).collect();
        let nodes = (0..nodes)
            .map(|n| {
                let ranks: Vec<u32> =
                    (0..ranks_per_node).map(|l| (n * ranks_per_node + l) as u32).collect();
                let gpu_nic_affinity = if nics == 0 {
                    BTreeMap::new()
                } else {
                    (0..gpus).map(|g| (g, nic_names[g as usize % nics].clone())).collect()
                };
                let rank_gpu_affinity = ranks
                    .iter()
                    .enumerate()
                    .map(|(l, &r)| (r, (gpus > 0).then(|| l as u32 % gpus)))
                    .collect();
                NodeSpec {
                    name: format!("n{n}"),
                    ranks,
                    gpus,
                    nics: nic_names.clone(),
                    gpu_nic_affinity,
                    rank_gpu_affinity,
                    numa_correct: BTreeMap::new(),
                }
            })
            .collect();
        Self { nodes }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut names = BTreeSet::new();
        let mut ranks = BTreeSet::new();
        for node in &self.nodes {
            if !names.insert(node.name.as_str()) {
                return Err(TopologyError::DuplicateNode(node.name.clone()));
            }
            let invalid = |detail: String| TopologyError::Invalid { node: node.name.clone(), detail };
            if node.name.is_empty() {
                return Err(invalid("empty node name".into()));
            }
            for &r in &node.ranks {
                if !ranks.insert(r) {
                    return Err(TopologyError::DuplicateRank(r));
                }
            }
            let nic_set: BTreeSet<&str> = node.nics.iter().map(String::as_str).collect();
            if nic_set.len() != node.nics.len() {
                return Err(invalid("duplicate NIC name".into()));
            }
            if !node.nics.is_empty() {
                for gpu in 0..node.gpus {
                    match node.gpu_nic_affinity.get(&gpu) {
                        Some(nic) if nic_set.contains(nic.as_str()) => {}
                        _ => {
                            return Err(TopologyError::GpuWithoutNic { node: node.name.clone(), gpu })
                        }
                    }
                }
            }
            if let Some(g) = node.gpu_nic_affinity.keys().find(|&&g| g >= node.gpus) {
                return Err(invalid(format!("affinity for nonexistent gpu {g}")));
            }
            for (&r, gpu) in &node.rank_gpu_affinity {
                if !node.ranks.contains(&r) {
                    return Err(invalid(format!("gpu affinity for foreign rank {r}")));
                }
                if gpu.is_some_and(|g| g >= node.gpus) {
                    return Err(invalid(format!("rank {r} bound to nonexistent gpu")));
                }
            }
            if let Some(r) = node.numa_correct.keys().find(|r| !node.ranks.contains(r)) {
                return Err(invalid(format!("numa flag for foreign rank {r}")));
            }
        }
        if ranks.is_empty() {
            return Err(TopologyError::Empty);
        }
        Ok(())
    }

    pub fn total_ranks(&self) -> usize {
        self.nodes.iter().map(|n| n.ranks.len()).sum()
    }

    /// All ranks in ascending order.
    pub fn ranks(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.nodes.iter().flat_map(|n| n.ranks.iter().copied()).collect();
        all.sort_unstable();
        all
    }

    pub fn place(&self, rank: u32) -> Option<RankPlace> {
        self.nodes.iter().enumerate().find_map(|(node, spec)| {
            spec.ranks.iter().position(|&r| r == rank).map(|local| RankPlace { node, local })
        })
    }

    pub fn node_of(&self, rank: u32) -> Option<&NodeSpec> {
        self.place(rank).map(|p| &self.nodes[p.node])
    }

    pub fn proc_uid(&self, rank: u32) -> Option<String> {
        self.place(rank).map(|p| format!("{}.p{}", self.nodes[p.node].name, p.local))
    }

    pub fn same_node(&self, a: u32, b: u32) -> bool {
        matches!((self.place(a), self.place(b)), (Some(x), Some(y)) if x.node == y.node)
    }

    pub fn gpu_of(&self, rank: u32) -> Option<u32> {
        self.node_of(rank).and_then(|n| n.rank_gpu_affinity.get(&rank).copied().flatten())
    }

    pub fn numa_correct(&self, rank: u32) -> bool {
        self.node_of(rank).and_then(|n| n.numa_correct.get(&rank).copied()).unwrap_or(true)
    }

    /// Lowest rank on the node hosting `rank`.
    pub fn leader_of(&self, rank: u32) -> Option<u32> {
        self.node_of(rank).and_then(|n| n.ranks.iter().copied().min())
    }
}

impl NodeSpec {
    pub fn first_nic(&self) -> Option<&str> {
        self.nics.first().map(String::as_str)
    }

    pub fn nic_for_gpu(&self, gpu: u32) -> Option<&str> {
        self.gpu_nic_affinity.get(&gpu).map(String::as_str)
    }

    pub fn nic_index(&self, nic: &str) -> Option<usize> {
        self.nics.iter().position(|n| n == nic)
    }
}
