//! Task-tree graph pretraining.
//!
//! Node, edge and graph instances are unified as task-trees: a virtual root
//! over the instance's task-relevant nodes whose embedding is the mean of
//! the encoder outputs at those nodes. On top of that the crate provides a
//! two-view reconstruction pretraining loop with a domain regularizer,
//! instruction tuning toward per-class vectors, fine-tune / in-context /
//! zero-shot evaluation, and numeric checks of the stability bound for
//! mean-aggregation encoders.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod rng;
pub mod task;
pub mod encoder;
pub mod dataset;
pub mod optim;
pub mod pretrain;
pub mod specialize;
pub mod eval;
pub mod theory;
pub mod synth;
pub mod benchmark;

pub use error::{Error, Result};
pub use graph::Graph;
pub use dataset::Dataset;
pub use encoder::{EncoderConfig, EncoderParams};
pub use task::{TaskInstance, TaskKind};
