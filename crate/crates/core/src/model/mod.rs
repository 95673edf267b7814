//! Records exchanged between the simulator, correlator and analytics.

pub mod address;
pub mod curated;
pub mod log;
pub mod records;
pub mod topology;

pub use address::{AddressBlob, AddressError};
pub use curated::{
    read_curated, write_curated, CuratedComm, CuratedError, CuratedTrace, EndpointKind, UcpLink,
    UcpPair, SCHEMA_VERSION,
};
pub use log::{
    parse_alloc_log, parse_comm_log, read_alloc_log_file, read_comm_log_file, write_alloc_log,
    write_comm_log, AllocLog, CommLog, LogError, TraceFileError,
};
pub use records::*;
pub use topology::{ClusterTopology, NodeSpec, RankPlace, TopologyError};
