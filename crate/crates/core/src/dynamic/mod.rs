//! Dynamic snapshot graphs: co-occurrence statistics, typed-pair masks,
//! conditional edge weights and row-normalized adjacencies.

pub mod snapshot;
pub mod stats;

pub use snapshot::{
    build_dynamic_network, build_mask, conditional_weights, snapshot_adjacency, DynamicNetwork,
    EdgeMask, EdgeState, GraphOptions, NodeType, SnapshotGraph, SnapshotNode,
};
pub use stats::{collect_cooccurrence, CooccurrenceStats};
