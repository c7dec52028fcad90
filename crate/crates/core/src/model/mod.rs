//! Dual-GRU patient encoder, graph encoders over the co-prescription and
//! interaction graphs, static and dynamic memory reads, multi-head
//! attention fusion, and the DDI-regularized multi-label output.

mod config;
pub mod layers;
mod network;

pub use config::{ModelConfig, Variant};
pub use network::{
    threshold_set, Bound, InferenceSession, MemoryKeys, Model, ModelDims, ParamStore, VisitOutput,
};
