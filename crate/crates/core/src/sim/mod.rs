//! Deterministic cluster simulator producing per-process logs and the
//! ground truth the correlator is checked against.

pub mod config;
pub mod emit;
pub mod path;
pub mod plan;
pub mod truth;

pub use config::{
    AllreduceAlg, AllreduceStyle, BufferKind, MsgSize, Pattern, ProtocolConfig, RndvScheme, Scenario,
    WorkloadSpec, SHORT_MAX,
};
pub use emit::{emit, simulate, ProcessOutput, SimMessage, SimOutput, EPOCH_NS};
pub use path::{select_path, BufRef, OpRole, PlannedUctOp};
pub use plan::{plan_transfers, LogicalMessage, TagAllocator, ALLREDUCE_FN, P2P_SEND_FN};
pub use truth::{GroundTruth, UcpTruth, UctTruth};

use crate::completion::CompletionError;
use crate::model::{LogError, TopologyError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("UnsupportedSize: {alg:?} needs a power-of-two participant count, got {participants}")]
    UnsupportedSize { alg: AllreduceAlg, participants: usize },
    #[error("NoRoute from rank {src} to rank {dst}: {detail}")]
    NoRoute { src: u32, dst: u32, detail: String },
    #[error("completion pool: {0}")]
    Completion(#[from] CompletionError),
    #[error("emitted log violates its own invariants: {0}")]
    Internal(String),
}

impl From<LogError> for SimError {
    fn from(e: LogError) -> Self {
        SimError::Internal(e.to_string())
    }
}

impl SimError {
    /// True for errors caused by the scenario rather than a simulator bug.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, SimError::Internal(_))
    }
}
