//! dynshot: a two-stage few-shot membership classifier whose computation
//! graph is assembled per support-set size over one shared set of weights.
//!
//! The first stage applies a shared-weight relation network to every unique
//! pair of class examples and averages the results into a class embedding
//! whose size does not depend on the example count. The second stage maps
//! (query, embedding) to two membership logits. Because the reduction is an
//! average, a new static graph can be assembled for any class size while
//! every instance reuses the same registered parameters; assembled models are
//! cached in an in-memory table indexed by size.
//!
//! The crate ships its own minimal static-graph engine with reverse-mode
//! gradients ([`graph`]), momentum optimizers ([`optim`]), an episodic
//! trainer with randomized class sizes ([`trainer`]), synthetic feature
//! datasets ([`data`]), and a verification suite ([`verify`]). See the
//! `examples/` directory for one runnable program per capability and
//! `src/main.rs` for the thin `dynshot` CLI.

pub mod assembly;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod manifest;
pub mod metric;
pub mod optim;
pub mod registry;
pub mod relational;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use assembly::{assemble, assembly_census, route_batches, AssembledModel, ModelCache};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use graph::{softmax2, Activation, Graph, NodeRef};
pub use metric::{build_metric, predict_prob, MetricArch, QueryVec};
pub use optim::{momentum_step, nesterov_step, MomentumKind, OptState, TrainConfig};
pub use registry::{Init, ParamRegistry, SharedRegistry};
pub use relational::{
    build_class_embedding, build_pair_relation, unique_pairs, ClassSet, RelationArch,
};
pub use tensor::TensorValue;
pub use trainer::{
    evaluate, run_grid, sample_training_batch, train, Episode, GridConfig, ResultGrid,
    TrainingHistory,
};
