//! Minimal neural-network engine: dense tensors, a tape-based reverse-mode
//! graph with fused layer ops, LoRA adapters, rotary attention, cross-entropy
//! and a decoupled-weight-decay optimizer.

use alloc::string::String;
use thiserror::Error;

pub mod attention;
pub mod graph;
pub mod kernels;
pub mod lora;
pub mod loss;
pub mod optim;
pub mod params;
pub mod rope;
pub mod tensor;

pub use attention::{attention, AttentionBlock};
pub use graph::{Gradients, Graph, Var};
pub use lora::{lora_forward, lora_merge, LoraAdapter};
pub use loss::cross_entropy;
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use rope::rope_apply;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("parameter `{0}` is detached from the loss")]
    Detached(String),
    #[error("graph error: {0}")]
    Graph(String),
}

pub type Result<T> = core::result::Result<T, NnError>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::nn::NnError::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
