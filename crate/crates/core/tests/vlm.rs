//! Decoding, candidate scoring, sequence assembly and adapter behavior of
//! the vision-language model.

use beamvlm_core::nn::{Graph, Tensor};
use beamvlm_core::scene::GrayImage;
use beamvlm_core::text::{tokenize, EOS, VOCAB_SIZE};
use beamvlm_core::vlm::{
    frames_to_patches, generate, predict_beams, score_all_steps, score_candidates, BeamVlm, CausalLm, LoraSpec,
    ScriptedLm, VlmConfig, VlmError, VlmSession, WeightReport,
};

fn tiny() -> VlmConfig {
    VlmConfig {
        image_size: 32,
        patch_size: 8,
        d_model: 32,
        layers: 2,
        heads: 2,
        ffn_hidden: 64,
        ..VlmConfig::default()
    }
}

fn frames(cfg: &VlmConfig, salt: usize) -> Vec<GrayImage> {
    (0..cfg.n_frames)
        .map(|f| {
            let mut img = GrayImage::new(cfg.image_size, cfg.image_size);
            for (i, p) in img.pixels.iter_mut().enumerate() {
                *p = ((i * 13 + f * 29 + salt * 71) % 256) as u8;
            }
            img
        })
        .collect()
}

fn no_frames() -> Vec<GrayImage> {
    Vec::new()
}

#[test]
fn rigged_generation_spells_its_answer() {
    let mut lm = ScriptedLm::spelling("7, 7, 7, 7, 7");
    assert_eq!(generate(&mut lm, &no_frames(), &[], 24).unwrap(), "7, 7, 7, 7, 7");
    assert_eq!(generate(&mut lm, &no_frames(), &[], 24).unwrap(), "7, 7, 7, 7, 7");
}

#[test]
fn token_budget_cuts_generation() {
    let mut lm = ScriptedLm::new(|_| {
        let mut l = vec![0.0; VOCAB_SIZE];
        l[b'9' as usize] = 5.0;
        l
    });
    assert_eq!(generate(&mut lm, &no_frames(), &[], 3).unwrap(), "999");
}

#[test]
fn predictions_parse_or_fall_back() {
    let history = [4usize, 5, 6, 6, 7, 8, 9, 11];
    let mut ok = ScriptedLm::spelling("3, 4, 4, 5, 5");
    let p = predict_beams(&mut ok, &no_frames(), &[], &history, 32, 5, 24).unwrap();
    assert_eq!((p.beams, p.valid), (vec![3, 4, 4, 5, 5], true));
    for bad in ["banana", "3, 4, 99, 5, 5"] {
        let mut lm = ScriptedLm::spelling(bad);
        let p = predict_beams(&mut lm, &no_frames(), &[], &history, 32, 5, 24).unwrap();
        assert_eq!((p.beams, p.valid, p.raw.as_str()), (vec![11; 5], false, bad));
    }
}

#[test]
fn uniform_logits_score_equal_length_candidates_equally() {
    let mut lm = ScriptedLm::new(|_| vec![0.0; VOCAB_SIZE]);
    let s = score_candidates(&mut lm, &no_frames(), &[], 2, &[5], 32, 5).unwrap();
    assert!(s[..9].iter().all(|&x| (x - s[0]).abs() < 1e-12));
    assert!(s[9..].iter().all(|&x| (x - s[9]).abs() < 1e-12));
    assert!(s[0] > s[9]);
}

#[test]
fn forced_candidate_scores_highest_and_mass_is_bounded() {
    for step in 1..=5 {
        let prefix: Vec<usize> = vec![3; step - 1];
        let mut text: String = prefix.iter().map(|b| format!("{b}, ")).collect();
        text.push_str(if step == 5 { "12" } else { "12, " });
        let mut lm = ScriptedLm::spelling(&text);
        let s = score_candidates(&mut lm, &no_frames(), &[], step, &prefix, 32, 5).unwrap();
        let best = (0..32).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap() + 1;
        assert_eq!(best, 12);
        assert!(s.iter().enumerate().all(|(i, &x)| i == 11 || x < s[11]));
        let mass: f64 = s.iter().map(|x| x.exp()).sum();
        assert!(mass <= 1.0 + 1e-9);
    }
}

#[test]
fn bad_step_or_prefix_is_rejected() {
    let mut lm = ScriptedLm::new(|_| vec![0.0; VOCAB_SIZE]);
    assert!(matches!(score_candidates(&mut lm, &no_frames(), &[], 0, &[], 32, 5), Err(VlmError::Shape(_))));
    assert!(matches!(score_candidates(&mut lm, &no_frames(), &[], 3, &[1], 32, 5), Err(VlmError::Shape(_))));
    assert!(matches!(score_candidates(&mut lm, &no_frames(), &[], 2, &[40], 32, 5), Err(VlmError::Format(_))));
}

#[test]
fn all_step_scores_match_single_step_scores() {
    let cfg = tiny();
    let model = BeamVlm::<f32>::new(cfg.clone(), 3).unwrap();
    let fr = frames(&cfg, 1);
    let prompt = tokenize("UAV beams:");
    let beams = [4usize, 5, 17, 30, 2];
    let mut s = VlmSession::new(&model).unwrap();
    let all = score_all_steps(&mut s, &fr, &prompt, &beams, 32).unwrap();
    for step in 1..=5 {
        let one = score_candidates(&mut s, &fr, &prompt, step, &beams[..step - 1], 32, 5).unwrap();
        for (a, b) in all[step - 1].iter().zip(&one) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn top1_agrees_with_greedy_when_the_script_is_decisive() {
    let mut lm = ScriptedLm::spelling("9, 10, 10, 11, 12");
    let p = predict_beams(&mut lm, &no_frames(), &[], &[9], 32, 5, 24).unwrap();
    assert!(p.valid);
    let scores = score_all_steps(&mut lm, &no_frames(), &[], &p.beams, 32).unwrap();
    for (row, &b) in scores.iter().zip(&p.beams) {
        let best = (0..32).max_by(|&x, &y| row[x].total_cmp(&row[y]).then(y.cmp(&x))).unwrap() + 1;
        assert_eq!(best, b);
    }
}

#[test]
fn config_arithmetic() {
    let cfg = VlmConfig::default();
    assert_eq!(cfg.visual_tokens(), 512);
    let model = BeamVlm::<f32>::new(cfg.clone(), 0).unwrap();
    assert_eq!(model.layout(120, Some(16)).unwrap().len(), 650);
    let small = VlmConfig { image_size: 32, ..tiny() };
    assert_eq!(small.patches_per_frame(), 16);
    assert_eq!(small.visual_tokens(), 128);
    let tight = BeamVlm::<f32>::new(VlmConfig { max_context: 649, ..cfg }, 0).unwrap();
    assert!(matches!(tight.layout(120, Some(16)), Err(VlmError::ContextOverflow { len: 650, max: 649 })));
    assert!(VlmConfig { patch_size: 7, ..VlmConfig::default() }.validate().is_err());
    assert!(VlmConfig { heads: 3, ..VlmConfig::default() }.validate().is_err());
}

#[test]
fn loss_mask_covers_answer_and_eos_only() {
    let cfg = tiny();
    let model = BeamVlm::<f32>::new(cfg.clone(), 0).unwrap();
    let visual = Tensor::zeros(&[cfg.visual_tokens(), cfg.d_model]);
    let prompt = tokenize("hi");
    let inference = model.assemble_sequence(&visual, &prompt, None).unwrap();
    assert!(inference.loss_mask.iter().all(|&m| !m));
    assert_eq!(inference.embeddings.rows(), 1 + cfg.visual_tokens() + 2);
    let answer = tokenize("1, 1, 1, 1, 1");
    let seq = model.assemble_sequence(&visual, &prompt, Some(&answer)).unwrap();
    assert_eq!(seq.loss_mask.iter().filter(|&&m| m).count(), answer.len() + 1);
    assert_eq!(*seq.token_ids.last().unwrap(), EOS);
    assert_eq!(seq.positions, (0..seq.embeddings.rows()).collect::<Vec<_>>());
}

#[test]
fn identical_frames_differ_only_by_temporal_offset() {
    let cfg = tiny();
    let model = BeamVlm::<f64>::new(cfg.clone(), 2).unwrap();
    let one = frames(&cfg, 4).remove(0);
    let same = vec![one; cfg.n_frames];
    let tokens = model.embed_frames(&frames_to_patches::<f64>(&same, &cfg).unwrap()).unwrap();
    let per = cfg.patches_per_frame();
    let fp = model.params.get(model.ids.frame_pos);
    for f in 1..cfg.n_frames {
        for p in 0..per {
            for c in 0..cfg.d_model {
                let a = tokens.at(p, c) - fp.at(0, c);
                let b = tokens.at(f * per + p, c) - fp.at(f, c);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn permuting_patches_permutes_projected_rows() {
    let cfg = tiny();
    let model = BeamVlm::<f64>::new(cfg.clone(), 2).unwrap();
    let patches = frames_to_patches::<f64>(&frames(&cfg, 2), &cfg).unwrap();
    let n = patches.rows();
    let perm: Vec<usize> = (0..n).map(|i| if i < 2 { 1 - i } else { i }).collect();
    let permuted = Tensor::from_fn(n, patches.cols(), |r, c| patches.at(perm[r], c));
    let offsets = |m: &BeamVlm<f64>, r: usize, c: usize| {
        let per = cfg.patches_per_frame();
        m.params.get(m.ids.patch_pos).at(r % per, c) + m.params.get(m.ids.frame_pos).at(r / per, c)
    };
    let a = model.embed_frames(&patches).unwrap();
    let b = model.embed_frames(&permuted).unwrap();
    for r in 0..n {
        for c in 0..cfg.d_model {
            let pa = a.at(perm[r], c) - offsets(&model, perm[r], c);
            let pb = b.at(r, c) - offsets(&model, r, c);
            assert!((pa - pb).abs() < 1e-12);
        }
    }
    assert!(a.row(0) != b.row(0));
    assert_eq!(a.row(5), b.row(5));
}

#[test]
fn later_answer_tokens_do_not_affect_earlier_logits() {
    let cfg = tiny();
    let model = BeamVlm::<f64>::new(cfg.clone(), 8).unwrap();
    let patches = frames_to_patches::<f64>(&frames(&cfg, 0), &cfg).unwrap();
    let prompt = tokenize("p");
    let run = |answer: &str| {
        let mut g = Graph::new(&model.params);
        let v = model.all_logits_graph(&mut g, &patches, &prompt, Some(&tokenize(answer))).unwrap();
        g.value(v).clone()
    };
    let a = run("1, 2, 3, 4, 5");
    let b = run("1, 2, 9, 4, 5");
    let changed = model.layout(1, Some(13)).unwrap().answer_start() + 6;
    for r in 0..changed {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(changed), b.row(changed));
}

#[test]
fn zero_adapters_leave_predictions_unchanged() {
    let cfg = tiny();
    let base = BeamVlm::<f32>::new(cfg.clone(), 5).unwrap();
    let mut adapted = base.clone();
    adapted.add_lora(LoraSpec::default(), 6).unwrap();
    let prompt = tokenize("UAV");
    for salt in 0..3 {
        let fr = frames(&cfg, salt);
        let mut a = VlmSession::new(&base).unwrap();
        let mut b = VlmSession::new(&adapted).unwrap();
        a.begin(&fr, &prompt).unwrap();
        b.begin(&fr, &prompt).unwrap();
        assert_eq!(a.logits(), b.logits());
        let pa = predict_beams(&mut a, &fr, &prompt, &[1], 32, 5, 24).unwrap();
        let pb = predict_beams(&mut b, &fr, &prompt, &[1], 32, 5, 24).unwrap();
        assert_eq!(pa, pb);
    }
}

#[test]
fn weight_report_matches_closed_form() {
    let cfg = VlmConfig::default();
    let mut model = BeamVlm::<f32>::new(cfg.clone(), 0).unwrap();
    let r = model.weight_report();
    assert_eq!(r.total, WeightReport::expected(&cfg, None));
    assert_eq!(r.total, model.params.num_elements());
    let (d, p2, f, v) = (128, 64, cfg.ffn_hidden, 260);
    let per_layer = 4 * d * d + 2 * d * f + 2 * d;
    let want = d * p2 + d + 64 * d + 8 * d + v * d + 4 * per_layer + d + v * d;
    assert_eq!(r.total, want);
    model.add_lora(LoraSpec::default(), 1).unwrap();
    model.freeze_base();
    let r = model.weight_report();
    assert_eq!(r.trainable, 4 * 3 * 2 * 8 * 128);
    assert_eq!(r.total, WeightReport::expected(&cfg, Some(LoraSpec::default())));
}
