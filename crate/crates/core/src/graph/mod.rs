//! The differentiable sparse graph head and the fixed comparison graphs.

mod batch;
mod head;
pub mod oracle;
pub mod sparse;

pub use batch::{
    baseline_graph, batch_graph, build_batch_graph, calibrate_threshold, normalize_affinity,
    propagation_from_distances, BaselineKind, GraphBatch, GraphColumns, SparseAffinity,
};
pub use head::{DistanceHead, EuclideanHead, GraphHead};
pub use oracle::oracle_sparse_row;
pub use sparse::{sparse_row, sparse_row_dense, DistanceRow};
