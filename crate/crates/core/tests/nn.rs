//! Numerical-core checks against independent scalar oracles.

use beamvlm_core::nn::attention::AttentionScale;
use beamvlm_core::nn::{
    attention, cross_entropy, lora_forward, lora_merge, rope_apply, AdamW, AdamWConfig, Graph, LoraAdapter, NnError,
    ParamStore, Tensor,
};
use beamvlm_core::rng::seeded;

fn rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b) / b.data().iter().fold(1e-12f64, |m, v| m.max(v.abs()))
}

#[test]
fn fresh_adapter_is_bit_identical_to_the_base_path() {
    let mut rng = seeded(1);
    let x = Tensor::<f32>::randn(&[7, 24], 1.0, &mut rng);
    let w0 = Tensor::<f32>::randn(&[24, 24], 0.2, &mut rng);
    let ad = LoraAdapter::new(24, 24, 8, 16.0, &mut rng);
    assert!(ad.b.data().iter().all(|&v| v == 0.0));
    let base = lora_forward(&x, &w0, None).unwrap();
    let adapted = lora_forward(&x, &w0, Some(&ad)).unwrap();
    assert_eq!(base.data(), adapted.data());
    assert_eq!(lora_merge(&w0, &ad).unwrap().data(), w0.data());
}

#[test]
fn identity_adapter_adds_the_identity() {
    let mut rng = seeded(2);
    let d = 6;
    let x = Tensor::<f64>::randn(&[3, d], 1.0, &mut rng);
    let w0 = Tensor::<f64>::randn(&[d, d], 1.0, &mut rng);
    let ad = LoraAdapter { a: Tensor::identity(d), b: Tensor::identity(d), rank: d, alpha: d as f64 };
    let expected = x.matmul_t(&w0.add(&Tensor::identity(d)).unwrap()).unwrap();
    assert!(rel(&lora_forward(&x, &w0, Some(&ad)).unwrap(), &expected) < 1e-12);
}

#[test]
fn merged_and_low_rank_paths_agree() {
    let mut rng = seeded(4);
    let x = Tensor::<f64>::randn(&[9, 32], 1.0, &mut rng);
    let w0 = Tensor::<f64>::randn(&[32, 32], 0.3, &mut rng);
    let ad = LoraAdapter {
        a: Tensor::randn(&[8, 32], 0.5, &mut rng),
        b: Tensor::randn(&[32, 8], 0.5, &mut rng),
        rank: 8,
        alpha: 16.0,
    };
    let merged = x.matmul_t(&lora_merge(&w0, &ad).unwrap()).unwrap();
    assert!(rel(&lora_forward(&x, &w0, Some(&ad)).unwrap(), &merged) < 1e-5);
}

#[test]
fn rank_one_merge_matches_loops() {
    let mut rng = seeded(5);
    let (d_out, d_in) = (5, 4);
    let w0 = Tensor::<f64>::randn(&[d_out, d_in], 1.0, &mut rng);
    let ad = LoraAdapter {
        a: Tensor::randn(&[1, d_in], 1.0, &mut rng),
        b: Tensor::randn(&[d_out, 1], 1.0, &mut rng),
        rank: 1,
        alpha: 3.0,
    };
    let m = lora_merge(&w0, &ad).unwrap();
    for i in 0..d_out {
        for j in 0..d_in {
            let want = w0.at(i, j) + 3.0 * ad.b.at(i, 0) * ad.a.at(0, j);
            assert!((m.at(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_adapter_is_a_shape_error() {
    let mut rng = seeded(6);
    let w0 = Tensor::<f64>::zeros(&[8, 8]);
    let ad = LoraAdapter::new(6, 6, 2, 4.0, &mut rng);
    assert!(matches!(lora_merge(&w0, &ad), Err(NnError::Shape(_))));
    let x = Tensor::<f64>::zeros(&[2, 8]);
    assert!(matches!(lora_forward(&x, &w0, Some(&ad)), Err(NnError::Shape(_))));
}

#[test]
fn rope_position_zero_is_identity_and_odd_width_fails() {
    let mut rng = seeded(7);
    let x = Tensor::<f64>::randn(&[1, 16], 1.0, &mut rng);
    assert_eq!(rope_apply(&x, &[0]).unwrap().data(), x.data());
    let odd = Tensor::<f64>::zeros(&[1, 5]);
    assert!(matches!(rope_apply(&odd, &[0]), Err(NnError::Shape(_))));
}

#[test]
fn rope_matches_pairwise_rotation_oracle() {
    let mut rng = seeded(8);
    let dh = 8;
    let x = Tensor::<f64>::randn(&[3, dh], 1.0, &mut rng);
    let pos = [0usize, 5, 37];
    let y = rope_apply(&x, &pos).unwrap();
    for (r, &p) in pos.iter().enumerate() {
        for i in 0..dh / 2 {
            let theta = 10000f64.powf(-2.0 * i as f64 / dh as f64) * p as f64;
            let (a, b) = (x.at(r, 2 * i), x.at(r, 2 * i + 1));
            assert!((y.at(r, 2 * i) - (a * theta.cos() - b * theta.sin())).abs() < 1e-12);
            assert!((y.at(r, 2 * i + 1) - (a * theta.sin() + b * theta.cos())).abs() < 1e-12);
        }
    }
}

#[test]
fn single_position_attention_returns_projected_value() {
    let mut rng = seeded(9);
    let d = 8;
    let q = Tensor::<f64>::randn(&[1, d], 1.0, &mut rng);
    let k = Tensor::<f64>::randn(&[1, d], 1.0, &mut rng);
    let v = Tensor::<f64>::randn(&[1, d], 1.0, &mut rng);
    let wo = Tensor::<f64>::randn(&[d, d], 1.0, &mut rng);
    let out = attention(&q, &k, &v, &wo, 2, true, AttentionScale::PerHead).unwrap();
    assert!(rel(&out.output, &v.matmul_t(&wo).unwrap()) < 1e-12);
}

#[test]
fn equal_keys_give_uniform_causal_weights() {
    let d = 4;
    let n = 4;
    let q = Tensor::<f64>::zeros(&[n, d]);
    let k = Tensor::<f64>::zeros(&[n, d]);
    let v = Tensor::<f64>::from_fn(n, d, |r, c| (r * d + c) as f64);
    let out = attention(&q, &k, &v, &Tensor::identity(d), 1, true, AttentionScale::PerHead).unwrap();
    let w = &out.weights[0];
    for i in 0..n {
        for j in 0..n {
            let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((w.at(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn random_attention_rows_are_masked_distributions() {
    let mut rng = seeded(10);
    let d = 16;
    let t = |rng: &mut _| Tensor::<f64>::randn(&[5, d], 1.0, rng);
    let (q, k, v) = (t(&mut rng), t(&mut rng), t(&mut rng));
    let out = attention(&q, &k, &v, &Tensor::identity(d), 4, true, AttentionScale::PerHead).unwrap();
    for w in &out.weights {
        for i in 0..5 {
            let s: f64 = (0..5).map(|j| w.at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!((i + 1..5).all(|j| w.at(i, j) == 0.0));
        }
    }
}

#[test]
fn causal_output_ignores_future_inputs() {
    let mut rng = seeded(11);
    let d = 8;
    let t = |rng: &mut _| Tensor::<f64>::randn(&[6, d], 1.0, rng);
    let (q, k, v) = (t(&mut rng), t(&mut rng), t(&mut rng));
    let base = attention(&q, &k, &v, &Tensor::identity(d), 2, true, AttentionScale::PerHead).unwrap().output;
    let (mut k2, mut v2) = (k.clone(), v.clone());
    for c in 0..d {
        k2.data_mut()[5 * d + c] += 3.0;
        v2.data_mut()[4 * d + c] -= 2.0;
    }
    let moved = attention(&q, &k2, &v2, &Tensor::identity(d), 2, true, AttentionScale::PerHead).unwrap().output;
    for r in 0..4 {
        assert_eq!(base.row(r), moved.row(r));
    }
    assert_ne!(base.row(5), moved.row(5));
}

#[test]
fn cross_entropy_limits_and_oracle() {
    let v = 260;
    let sharp = Tensor::<f64>::from_fn(2, v, |r, c| if c == r + 3 { 20.0 } else { 0.0 });
    assert!(cross_entropy(&sharp, &[3, 4], &[true, true]).unwrap() <= 1e-3);
    let flat = Tensor::<f64>::zeros(&[3, v]);
    assert!((cross_entropy(&flat, &[0, 1, 2], &[true, false, true]).unwrap() - (260f64).ln()).abs() < 1e-4);
    assert_eq!(cross_entropy(&flat, &[0, 1, 2], &[false; 3]), Err(NnError::EmptyMask));

    let mut rng = seeded(12);
    let logits = Tensor::<f64>::randn(&[4, 11], 3.0, &mut rng);
    let targets = [1usize, 10, 0, 5];
    let mask = [true, true, false, true];
    let mut want = 0.0;
    for r in [0usize, 1, 3] {
        let m = logits.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.row(r).iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        want += lse - logits.at(r, targets[r]);
    }
    want /= 3.0;
    assert!((cross_entropy(&logits, &targets, &mask).unwrap() - want).abs() < 1e-6);
}

#[test]
fn linear_layer_quadratic_loss_gradient() {
    let mut rng = seeded(13);
    let x = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
    let y = Tensor::<f64>::randn(&[5, 2], 1.0, &mut rng);
    let mut ps = ParamStore::new();
    let w = ps.add("w", Tensor::randn(&[3, 2], 1.0, &mut rng));
    let mut g = Graph::new(&ps);
    let xv = g.input(x.clone());
    let wv = g.param(w);
    let pred = g.matmul(xv, wv, false).unwrap();
    let neg_y = g.input(y.scale(-1.0));
    let r = g.add(pred, neg_y).unwrap();
    let sq = g.mul(r, r).unwrap();
    let rows = g.mean_rows(sq);
    let ones = g.input(Tensor::from_fn(2, 1, |_, _| 1.0));
    let loss = g.matmul(rows, ones, false).unwrap();
    let grads = g.backward(loss).unwrap();
    // loss = (1/5)·Σ‖xW − y‖², so ∂/∂W = (2/5)·xᵀ(xW − y).
    let resid = x.matmul(ps.get(w)).unwrap().add(&y.scale(-1.0)).unwrap();
    let want = x.transpose().matmul(&resid).unwrap().scale(2.0 / 5.0);
    assert!(grads.get(w).unwrap().max_abs_diff(&want) < 1e-10);
}

#[test]
fn constant_loss_has_zero_gradients() {
    let mut ps = ParamStore::<f64>::new();
    let w = ps.add("w", Tensor::from_fn(2, 2, |r, c| (r + c) as f64));
    let mut g = Graph::new(&ps);
    let wv = g.param(w);
    let zero = g.scale(wv, 0.0);
    let rows = g.mean_rows(zero);
    let ones = g.input(Tensor::from_fn(2, 1, |_, _| 1.0));
    let loss = g.matmul(rows, ones, false).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn adamw_decay_and_reference_trajectory() {
    let mut ps = ParamStore::<f64>::new();
    let w = ps.add("w", Tensor::from_fn(1, 3, |_, c| c as f64 + 1.0));
    let before = ps.get(w).clone();
    // Zero gradients without decay: nothing moves.
    let zero = zero_gradients(&ps);
    let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..AdamWConfig::default() }, &ps);
    opt.step(&mut ps, &zero).unwrap();
    assert_eq!(ps.get(w), &before);

    // Zero gradients with decay: a pure (1 − lr·wd) scaling per step.
    let zero_grad = zero_gradients(&ps);
    let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.01, ..AdamWConfig::default() }, &ps);
    for _ in 0..3 {
        opt.step(&mut ps, &zero_grad).unwrap();
    }
    for (a, b) in ps.get(w).data().iter().zip(before.data()) {
        assert!((a - b * 0.999f64.powi(3)).abs() < 1e-15);
    }

    // Scalar parameter against a hand-rolled reference.
    let mut ps = ParamStore::<f64>::new();
    let p = ps.add("p", Tensor::from_fn(1, 1, |_, _| 0.5));
    let cfg = AdamWConfig { lr: 0.05, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.1 };
    let mut opt = AdamW::new(cfg, &ps);
    let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (t, gval) in [0.3, -1.2, 0.7, 2.0, -0.1].into_iter().enumerate() {
        let grad = scalar_gradient(&ps, gval);
        opt.step(&mut ps, &grad).unwrap();
        let t = t as i32 + 1;
        x *= 1.0 - cfg.lr * cfg.weight_decay;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * gval;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * gval * gval;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        assert!((ps.get(p).at(0, 0) - x).abs() < 1e-12);
    }
}

/// Gradients equal to zero for every parameter, built through the graph.
fn zero_gradients(ps: &ParamStore<f64>) -> beamvlm_core::nn::Gradients<f64> {
    scaled_sum_gradients(ps, 0.0)
}

fn scalar_gradient(ps: &ParamStore<f64>, value: f64) -> beamvlm_core::nn::Gradients<f64> {
    scaled_sum_gradients(ps, value)
}

/// Gradient of `value · Σ params`, i.e. `value` at every coordinate.
fn scaled_sum_gradients(ps: &ParamStore<f64>, value: f64) -> beamvlm_core::nn::Gradients<f64> {
    let mut g = Graph::new(ps);
    let mut total = None;
    for id in ps.ids() {
        let t = ps.get(id);
        let pv = g.param(id);
        let s = g.scale(pv, value);
        let rows = g.mean_rows(s);
        let ones = g.input(Tensor::from_fn(t.cols(), 1, |_, _| t.rows() as f64));
        let dot = g.matmul(rows, ones, false).unwrap();
        total = Some(match total {
            None => dot,
            Some(acc) => g.add(acc, dot).unwrap(),
        });
    }
    let loss = total.unwrap();
    g.backward(loss).unwrap()
}
