//! Analytic gradients of the full decoder against central differences.

use beamvlm_core::scene::GrayImage;
use beamvlm_core::text::tokenize;
use beamvlm_core::vlm::{frames_to_patches, gradient_check, BeamVlm, LoraSpec, VlmConfig};

fn small_config() -> VlmConfig {
    VlmConfig { image_size: 16, patch_size: 8, ffn_hidden: 256, ..VlmConfig::default() }
}

fn frames(cfg: &VlmConfig) -> Vec<GrayImage> {
    (0..cfg.n_frames)
        .map(|f| {
            let mut img = GrayImage::new(cfg.image_size, cfg.image_size);
            for (i, p) in img.pixels.iter_mut().enumerate() {
                *p = ((i * 37 + f * 91) % 256) as u8;
            }
            img
        })
        .collect()
}

fn check(model: &mut BeamVlm<f64>) {
    let cfg = model.config.clone();
    let patches = frames_to_patches::<f64>(&frames(&cfg), &cfg).unwrap();
    let prompt = tokenize("UAV beams:");
    let answer = tokenize("7, 8, 9, 10, 12");
    let groups = gradient_check(model, &patches, &prompt, &answer, 6, 1e-5, 11).unwrap();
    let worst = groups.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).unwrap();
    for g in &groups {
        assert!(g.rel_err < 1e-4, "{}: relative error {:.3e} (|g| = {:.3e})", g.name, g.rel_err, g.analytic_norm);
    }
    assert!(worst.rel_err.is_finite());
}

#[test]
fn base_gradients_match_finite_differences() {
    let mut model = BeamVlm::<f64>::new(small_config(), 5).unwrap();
    check(&mut model);
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let mut model = BeamVlm::<f64>::new(small_config(), 6).unwrap();
    model.add_lora(LoraSpec::default(), 9).unwrap();
    // B starts at zero, which would hide errors in the gradient of A.
    let ids: Vec<_> = model.params.ids().filter(|&id| model.params.name(id).ends_with(".b")).collect();
    for (k, id) in ids.into_iter().enumerate() {
        for (i, v) in model.params.get_mut(id).data_mut().iter_mut().enumerate() {
            *v = 0.01 * (((i + k) % 7) as f64 - 3.0);
        }
    }
    model.freeze_base();
    check(&mut model);
}
