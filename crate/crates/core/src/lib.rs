//! Exact node unlearning for graph neural networks by sharded retraining.
pub mod aggregator;
pub mod checkpoint;
pub mod config;
mod error;
pub mod experiment;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod oracles;
pub mod partitioner;
mod scalar;
pub mod seed;
pub mod store;
pub mod unlearn;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DenseF64 = numerics::Dense<f64>;
pub type SparseF64 = numerics::Sparse<f64>;
pub type GraphF64 = graph::Graph<f64>;
pub type ShardF64 = graph::Shard<f64>;
pub type ShardModelF64 = gcn::ShardModel<f64>;
pub type AggregatorF64 = aggregator::Aggregator<f64>;
pub type PipelineStateF64 = unlearn::PipelineState<f64>;
