//! Multi-layer communication tracing for UCX-style stacks: a cluster
//! simulator that emits per-process transport logs, a correlator that merges
//! them into an attributed trace, and analytic views over the result.

pub mod analytics;
pub mod completion;
pub mod correlate;
pub mod model;
pub mod sim;
