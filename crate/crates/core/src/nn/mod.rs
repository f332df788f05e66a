//! Autodiff engine and the orbit-colored message-passing model.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{
    config_echo, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{
    Aggregator, LossKind, Model, ModelConfig, ParamEntry, ParamGroup, ParamStore, TaskConfig,
    TaskSlot,
};
pub use gradcheck::{finite_difference_check, jitter_params, GradCheck};
pub use optim::{Adam, AdamConfig};
pub use tape::{Graph, ParamGrads, Tape, Var, ATTENTION_SLOPE, LAYER_NORM_EPS};
pub use tensor::{gemm, Float, Tensor};

use thiserror::Error;

use crate::groupcatalog::CatalogError;
use crate::orbitclosure::OrbitError;
use crate::taskgen::TaskError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Group(#[from] CatalogError),
    #[error(transparent)]
    Task(#[from] TaskError),
}
