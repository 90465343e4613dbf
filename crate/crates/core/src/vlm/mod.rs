//! The toy generative vision-language beam predictor: patch embedding,
//! multimodal sequence assembly, a RoPE decoder with optional LoRA, greedy
//! decoding and constrained per-step candidate scoring.

mod decode;
mod gradcheck;
mod model;
mod patch;

pub use decode::{
    argmax, generate, predict_beams, score_all_steps, score_candidates, score_steps_after_prefix, CausalLm, Prediction,
    ScriptedLm, VlmSession,
};
pub use gradcheck::{gradient_check, GroupCheck};
pub use model::{
    is_lora_param, AssembledSequence, BeamVlm, LayerIds, LoraSpec, ModelIds, SequenceLayout, WeightReport,
};
pub use patch::{frames_to_patches, normalize_image, patchify};

use alloc::string::String;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::attention::AttentionScale;
use crate::nn::NnError;
use crate::text::VOCAB_SIZE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VlmError {
    #[error(transparent)]
    Shape(#[from] NnError),
    #[error("format error: {0}")]
    Format(String),
    #[error("sequence of {len} positions exceeds the context of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, VlmError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlmConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub n_frames: usize,
    pub horizon: usize,
    pub max_answer_tokens: usize,
    /// Hidden width of the feed-forward block.
    pub ffn_hidden: usize,
    /// Codebook size M; bounds the answer integers.
    pub num_beams: usize,
    /// Longest admissible sequence (BOS + visual + prompt + answer + EOS).
    pub max_context: usize,
    pub attention_scale: AttentionScale,
    /// Standard deviation of the random weight initialization.
    pub init_std: f64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 4,
            heads: 4,
            vocab_size: VOCAB_SIZE,
            image_size: 64,
            patch_size: 8,
            n_frames: 8,
            horizon: 5,
            max_answer_tokens: 24,
            ffn_hidden: 512,
            num_beams: 32,
            max_context: 1024,
            attention_scale: AttentionScale::PerHead,
            init_std: 0.02,
        }
    }
}

impl VlmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VlmError::Config(m.into()));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad("image_size must be divisible by patch_size");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if !(self.d_model / self.heads).is_multiple_of(2) {
            return bad("head dimension must be even for rotary positions");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must be 260");
        }
        if self.layers == 0 || self.n_frames == 0 || self.horizon == 0 || self.num_beams == 0 {
            return bad("layers, n_frames, horizon and num_beams must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn patches_per_frame(&self) -> usize {
        let s = self.image_size / self.patch_size;
        s * s
    }

    pub fn visual_tokens(&self) -> usize {
        self.n_frames * self.patches_per_frame()
    }
}
