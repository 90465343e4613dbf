//! The KV-cached decoder reproduces the training graph's logits.

use beamvlm_core::nn::Graph;
use beamvlm_core::scene::GrayImage;
use beamvlm_core::text::tokenize;
use beamvlm_core::vlm::{frames_to_patches, BeamVlm, CausalLm, LoraSpec, VlmConfig, VlmSession};

fn config() -> VlmConfig {
    VlmConfig { image_size: 32, patch_size: 8, ffn_hidden: 128, d_model: 64, layers: 2, ..VlmConfig::default() }
}

fn frames(cfg: &VlmConfig, salt: usize) -> Vec<GrayImage> {
    (0..cfg.n_frames)
        .map(|f| {
            let mut img = GrayImage::new(cfg.image_size, cfg.image_size);
            for (i, p) in img.pixels.iter_mut().enumerate() {
                *p = ((i * 31 + f * 17 + salt * 101) % 256) as u8;
            }
            img
        })
        .collect()
}

fn max_gap(model: &BeamVlm<f64>, salt: usize) -> f64 {
    let cfg = model.config.clone();
    let fr = frames(&cfg, salt);
    let prompt = tokenize("UAV beams:");
    let answer = tokenize("3, 4, 5, 6, 7");
    let patches = frames_to_patches::<f64>(&fr, &cfg).unwrap();
    let mut g = Graph::new(&model.params);
    let (logits, _) = model.answer_logits_graph(&mut g, &patches, &prompt, &answer).unwrap();
    let graph = g.value(logits).clone();
    let mut s = VlmSession::new(model).unwrap();
    s.begin(&fr, &prompt).unwrap();
    let mut gap = 0.0f64;
    for (row, &tok) in answer.iter().enumerate() {
        for (c, &v) in s.logits().iter().enumerate() {
            gap = gap.max((f64::from(v) - graph.at(row, c)).abs());
        }
        s.push(tok).unwrap();
    }
    gap
}

#[test]
fn session_logits_match_graph_logits() {
    let model = BeamVlm::<f64>::new(config(), 4).unwrap();
    assert!(max_gap(&model, 0) < 1e-4);
}

#[test]
fn session_logits_match_graph_logits_with_adapters() {
    let mut model = BeamVlm::<f64>::new(config(), 4).unwrap();
    model.add_lora(LoraSpec::default(), 2).unwrap();
    let ids: Vec<_> = model.params.ids().filter(|&id| model.params.name(id).contains(".lora_")).collect();
    for id in ids {
        for (i, v) in model.params.get_mut(id).data_mut().iter_mut().enumerate() {
            *v = 0.05 * ((i % 5) as f64 - 2.0);
        }
    }
    assert!(max_gap(&model, 1) < 1e-4);
}

#[test]
fn frames_change_the_first_answer_logits() {
    let model = BeamVlm::<f64>::new(config(), 4).unwrap();
    let prompt = tokenize("UAV beams:");
    let mut a = VlmSession::new(&model).unwrap();
    a.begin(&frames(&model.config, 0), &prompt).unwrap();
    let la = a.logits().to_vec();
    a.begin(&frames(&model.config, 3), &prompt).unwrap();
    let lb = a.logits();
    assert!(la.iter().zip(lb).any(|(x, y)| (x - y).abs() > 1e-6));
}
