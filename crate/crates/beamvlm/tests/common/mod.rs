//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use beamvlm::checkpoint::{Checkpoint, TrainingMeta};
use beamvlm::config::RunConfig;
use beamvlm_core::nn::Tensor;
use beamvlm_core::text::{PromptTemplate, VOCAB_SIZE};
use beamvlm_core::vlm::{BeamVlm, VlmConfig};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The shipped linear-pass preset shrunk to a few short sequences and a
/// one-layer model so a full train/eval round runs in seconds.
pub fn small_config(sequences: usize, length: usize) -> RunConfig {
    let text = std::fs::read_to_string(workspace_root().join("scenarios/uav_linear.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenario"]["num_sequences"] = sequences.into();
    v["scenario"]["sequence_length"] = length.into();
    v["model"] = serde_json::json!({
        "d_model": 32, "layers": 1, "heads": 2, "image_size": 64, "patch_size": 16, "ffn_hidden": 32
    });
    v["train"] = serde_json::json!({ "epochs": 1, "batch_size": 4, "learning_rate": 1e-3 });
    v["baseline"]["hidden_size"] = 8.into();
    RunConfig::from_json(&v.to_string()).unwrap()
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_pretty_json()).unwrap();
    path
}

/// A model whose attention and feed-forward blocks are silenced, so the
/// next-token logits depend only on the current token: after `7` comes
/// `,`, after `,` a space, and anything else is followed by `7`. With a
/// 13-token budget greedy decoding spells exactly "7, 7, 7, 7, 7".
pub fn rigged_vlm() -> BeamVlm<f32> {
    let cfg = VlmConfig {
        d_model: 128,
        layers: 1,
        heads: 4,
        image_size: 64,
        patch_size: 16,
        ffn_hidden: 32,
        max_answer_tokens: 13,
        ..VlmConfig::default()
    };
    let mut m = BeamVlm::<f32>::new(cfg, 0).unwrap();
    let d = m.config.d_model;
    for l in m.ids.layers.clone() {
        *m.params.get_mut(l.attn.wo) = Tensor::zeros(&[d, d]);
        let down = m.params.get(l.ffn_down).shape().to_vec();
        *m.params.get_mut(l.ffn_down) = Tensor::zeros(&down);
    }
    *m.params.get_mut(m.ids.token_embedding) = Tensor::from_fn(VOCAB_SIZE, d, |t, c| f32::from(t % d == c));
    let slot = |b: u8| b as usize % d;
    *m.params.get_mut(m.ids.lm_head) = Tensor::from_fn(VOCAB_SIZE, d, |t, c| match t as u8 {
        _ if t >= 256 => 0.0,
        b'7' => 1.0,
        b',' if c == slot(b'7') => 3.0,
        b' ' if c == slot(b',') => 3.0,
        _ => 0.0,
    });
    m
}

pub fn store_rigged(path: &Path) {
    Checkpoint::from_vlm(&rigged_vlm(), &PromptTemplate::standard("UAV"), TrainingMeta::default()).store(path).unwrap();
}
