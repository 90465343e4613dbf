//! Ranking, Top-K tabulation, the geometry oracle and prompt ablation.

use beamvlm_core::eval::{
    ablate_prompt, evaluate, topk_accuracy, EvalError, MetricsTable, OraclePredictor, Predictor, RankedPrediction,
};
use beamvlm_core::phy::CodebookConfig;
use beamvlm_core::scene::{generate_sequence, window_samples, MotionModel, Sample, TrajectoryConfig, WorldConfig};
use beamvlm_core::text::tokenize;
use beamvlm_core::vlm::{BeamVlm, VlmConfig};

fn linear_samples(speed: f64, start: f64) -> Vec<Sample> {
    let world = WorldConfig::default();
    let cb = CodebookConfig::default().build().unwrap();
    let traj = TrajectoryConfig {
        motion_model: MotionModel::LinearPass,
        speed,
        jitter_std: 0.0,
        length: 20,
        seed: 1,
        start_azimuth: Some(start),
    };
    let seq = generate_sequence(0, &traj, &world, &cb).unwrap();
    window_samples(0, &seq.frames, &seq.beams)
}

#[test]
fn score_ties_prefer_the_smaller_beam() {
    let r = RankedPrediction::from_scores(&[vec![0.5, 0.9, 0.9, 0.1]], true);
    assert_eq!(r.steps[0], vec![2, 3, 1, 4]);
    let flat = RankedPrediction::from_scores(&[vec![0.0; 32]], true);
    assert_eq!(flat.steps[0], (1..=32).collect::<Vec<_>>());
}

#[test]
fn topk_checks_its_arguments() {
    let p = vec![RankedPrediction::from_beams(&[3, 3], 32, true)];
    let labels = vec![vec![3, 4]];
    assert_eq!(topk_accuracy(&p, &labels, 1, 1).unwrap(), 1.0);
    assert_eq!(topk_accuracy(&p, &labels, 1, 2).unwrap(), 0.0);
    assert_eq!(topk_accuracy(&p, &labels, 2, 2).unwrap(), 0.0);
    assert_eq!(topk_accuracy(&p, &labels, 3, 2).unwrap(), 1.0);
    assert!(topk_accuracy(&p, &labels, 0, 1).is_err());
    assert!(topk_accuracy(&p, &labels, 1, 3).is_err());
    assert!(matches!(MetricsTable::from_predictions(&[], &[], &[1]), Err(EvalError::EmptyTestSet)));
}

#[test]
fn invalid_rate_counts_fallbacks() {
    let p = vec![
        RankedPrediction::from_beams(&[1], 32, true),
        RankedPrediction::from_beams(&[1], 32, false),
        RankedPrediction::from_beams(&[1], 32, false),
        RankedPrediction::from_beams(&[1], 32, true),
    ];
    let t = MetricsTable::from_predictions(&p, &vec![vec![1]; 4], &[1, 2]).unwrap();
    assert_eq!(t.invalid_rate, 0.5);
    assert_eq!(t.top(1, 1), Some(1.0));
    assert_eq!(t.top(3, 1), None);
}

#[test]
fn oracle_tracks_clean_linear_passes() {
    let world = WorldConfig::default();
    let cb = CodebookConfig::default().build().unwrap();
    let mut oracle = OraclePredictor { codebook: &cb, world: &world };
    let pitch = world.pixel_pitch();
    for (cols_per_step, start_col) in [(1.0, 10.0), (2.0, 16.0), (-1.0, 50.0), (-2.0, 60.0)] {
        let samples = linear_samples(cols_per_step * pitch, world.azimuth_of(start_col));
        let t = evaluate(&mut oracle, &samples, &[1]).unwrap();
        assert_eq!(t.invalid_rate, 0.0);
        for step in 1..=5 {
            assert_eq!(t.top(1, step), Some(1.0), "step {step} from column {start_col}");
        }
    }
}

#[test]
fn oracle_falls_back_on_blank_frames() {
    let world = WorldConfig::default();
    let cb = CodebookConfig::default().build().unwrap();
    let mut s = linear_samples(1.4285714285714286, 0.0).remove(0);
    for f in &mut s.frames {
        f.pixels.fill(0);
    }
    let r = OraclePredictor { codebook: &cb, world: &world }.rank(&s).unwrap();
    assert!(!r.valid);
    assert_eq!(r.steps[0][0], *s.history_beams.last().unwrap());
}

#[test]
fn identical_prompts_ablate_to_zero() {
    let cfg = VlmConfig {
        image_size: 64,
        patch_size: 16,
        d_model: 32,
        layers: 1,
        heads: 2,
        ffn_hidden: 64,
        ..VlmConfig::default()
    };
    let model = BeamVlm::<f32>::new(cfg, 3).unwrap();
    let samples: Vec<Sample> = linear_samples(1.4285714285714286, -10.0).into_iter().take(2).collect();
    let p = tokenize("UAV beams:");
    let variants = vec![("full".to_string(), p.clone()), ("same".to_string(), p.clone()), ("none".to_string(), vec![])];
    let report = ablate_prompt(&model, &samples, &variants, &[1, 2]).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].delta_top1, vec![0.0; 5]);
    assert_eq!(report.rows[1].delta_top1, vec![0.0; 5]);
    assert_eq!(report.rows[0].metrics, report.rows[1].metrics);
    assert!(matches!(ablate_prompt(&model, &samples, &variants[..1], &[1]), Err(EvalError::Argument(_))));
    assert!(matches!(ablate_prompt(&model, &samples, &variants, &[2]), Err(EvalError::Argument(_))));
}
