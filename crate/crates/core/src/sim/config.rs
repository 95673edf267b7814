use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::completion::DEFAULT_POOL_SIZE;
use crate::model::ClusterTopology;

/// Largest payload carried by a short operation.
pub const SHORT_MAX: u64 = 64;

/// Drift beyond this would push timestamps before the trace epoch.
pub const MAX_DRIFT_NS: i64 = 500_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RndvScheme {
    Auto,
    Get,
    Put,
}

fn default_rndv_thresh() -> u64 {
    8192
}
fn default_true() -> bool {
    true
}
fn default_dc_threshold() -> usize {
    64
}
fn default_pool() -> usize {
    DEFAULT_POOL_SIZE
}
fn default_scheme() -> RndvScheme {
    RndvScheme::Get
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_rndv_thresh")]
    pub rndv_thresh: u64,
    #[serde(default = "default_scheme")]
    pub rndv_scheme: RndvScheme,
    #[serde(default = "default_true")]
    pub eager_enabled: bool,
    #[serde(default = "default_true")]
    pub cuda_ipc_enabled: bool,
    /// Total rank count at which dc_mlx5 replaces rc_mlx5.
    #[serde(default = "default_dc_threshold")]
    pub dc_task_threshold: usize,
    /// Signed per-node clock offset, keyed by node name.
    #[serde(default)]
    pub clock_drift_ns: BTreeMap<String, i64>,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound of uniform per-operation start jitter; 0 disables it.
    #[serde(default)]
    pub jitter_ns: u64,
    #[serde(default = "default_pool")]
    pub completion_pool_size: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            rndv_thresh: default_rndv_thresh(),
            rndv_scheme: default_scheme(),
            eager_enabled: true,
            cuda_ipc_enabled: true,
            dc_task_threshold: default_dc_threshold(),
            clock_drift_ns: BTreeMap::new(),
            seed: 0,
            jitter_ns: 0,
            completion_pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    P2pAllToAll,
    Allreduce,
    HaloExchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferKind {
    Host,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllreduceAlg {
    RecursiveDoubling,
    ReduceScatterAllgather,
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllreduceStyle {
    PerRank,
    NodeLeader,
}

/// Either one size for every message or a rank-by-rank byte matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MsgSize {
    Uniform(u64),
    Matrix(Vec<Vec<u64>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg_size: Option<MsgSize>,
    pub buffer_kind: BufferKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allreduce_alg: Option<AllreduceAlg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allreduce_style: Option<AllreduceStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_matrix: Option<Vec<Vec<u64>>>,
}

impl WorkloadSpec {
    pub fn all_to_all(size: u64, iterations: u32, buffer_kind: BufferKind) -> Self {
        Self {
            pattern: Pattern::P2pAllToAll,
            iterations,
            msg_size: Some(MsgSize::Uniform(size)),
            buffer_kind,
            allreduce_alg: None,
            allreduce_style: None,
            demand_matrix: None,
        }
    }

    pub fn allreduce(
        alg: AllreduceAlg,
        style: AllreduceStyle,
        size: u64,
        iterations: u32,
        buffer_kind: BufferKind,
    ) -> Self {
        Self {
            pattern: Pattern::Allreduce,
            iterations,
            msg_size: Some(MsgSize::Uniform(size)),
            buffer_kind,
            allreduce_alg: Some(alg),
            allreduce_style: Some(style),
            demand_matrix: None,
        }
    }

    pub fn halo(demand: Vec<Vec<u64>>, iterations: u32, buffer_kind: BufferKind) -> Self {
        Self {
            pattern: Pattern::HaloExchange,
            iterations,
            msg_size: None,
            buffer_kind,
            allreduce_alg: None,
            allreduce_style: None,
            demand_matrix: Some(demand),
        }
    }

    pub fn validate(&self, ranks: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidWorkload(m.to_string()));
        let is_allreduce = self.pattern == Pattern::Allreduce;
        if is_allreduce != self.allreduce_alg.is_some() || is_allreduce != self.allreduce_style.is_some() {
            return bad("allreduce_alg and allreduce_style are required for allreduce and only for it");
        }
        let is_halo = self.pattern == Pattern::HaloExchange;
        if is_halo != self.demand_matrix.is_some() {
            return bad("demand_matrix is required for halo_exchange and only for it");
        }
        if !is_halo && self.msg_size.is_none() {
            return bad("msg_size is required");
        }
        let square = |m: &Vec<Vec<u64>>| m.len() == ranks && m.iter().all(|row| row.len() == ranks);
        if let Some(MsgSize::Matrix(m)) = &self.msg_size {
            if is_allreduce {
                return bad("allreduce takes a single msg_size");
            }
            if !square(m) {
                return bad("msg_size matrix must be ranks x ranks");
            }
        }
        if let Some(m) = &self.demand_matrix {
            if !square(m) {
                return bad("demand_matrix must be ranks x ranks");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: ClusterTopology,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub workloads: Vec<WorkloadSpec>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        let p = &self.protocol;
        if p.rndv_thresh == 0 {
            return Err(SimError::InvalidWorkload("rndv_thresh must be positive".into()));
        }
        if p.completion_pool_size == 0 {
            return Err(SimError::InvalidWorkload("completion_pool_size must be at least 1".into()));
        }
        if let Some(r) = self.topology.ranks().into_iter().find(|&r| r > u16::MAX as u32) {
            return Err(SimError::InvalidWorkload(format!("rank {r} does not fit a 16-bit tag field")));
        }
        for (node, &d) in &p.clock_drift_ns {
            if !self.topology.nodes.iter().any(|n| &n.name == node) {
                return Err(SimError::InvalidWorkload(format!("drift for unknown node '{node}'")));
            }
            if d.abs() > MAX_DRIFT_NS {
                return Err(SimError::InvalidWorkload(format!("drift {d} on '{node}' exceeds {MAX_DRIFT_NS} ns")));
            }
        }
        let ranks = self.topology.total_ranks();
        for w in &self.workloads {
            w.validate(ranks)?;
        }
        Ok(())
    }
}
