//! Progressive weight-sharing transformer architecture search at desk scale.
//!
//! A supernet stores maximal-size tensors; every candidate architecture runs
//! on a leading-prefix slice of them. Training grows the sampled subspace in
//! stages, an optional fine-tuning pass updates only the weights the
//! smallest stage never touches, and an evolutionary search ranks subnets
//! on a held-out split.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evo;
pub mod experiments;
pub mod kernel;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod space;
pub mod supernet;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use space::{Architecture, AttributeGrid, SearchSpace, StageCap, SubspacePartition};
pub use supernet::{EvalResult, InitMode, SliceMap, SupernetWeights};
pub use tensor::{Region, Tensor};
