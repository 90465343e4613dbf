//! Teacher-forcing training, LoRA-only fine-tuning and training telemetry.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Real;
use crate::nn::{AdamW, AdamWConfig, Gradients, Graph};
use crate::rng::{derive_seed, seeded};
use crate::scene::Sample;
use crate::text::{format_answer, tokenize, TokenId};
use crate::vlm::{frames_to_patches, predict_beams, BeamVlm, LoraSpec, VlmError, VlmSession};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(alloc::string::String),
    #[error(transparent)]
    Model(#[from] VlmError),
}

impl From<crate::nn::NnError> for TrainError {
    fn from(e: crate::nn::NnError) -> Self {
        TrainError::Model(VlmError::Shape(e))
    }
}

pub type Result<T> = core::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Full,
    LoraOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Shuffle seed; run configurations derive it from their top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub mode: TrainMode,
    /// Maximum global gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Steps between held-out Top-1 probes; `None` disables them.
    pub eval_every: Option<usize>,
    /// Linear learning-rate warmup length in steps (0 = no warmup).
    pub warmup_steps: usize,
    /// Shape of the rate after warmup.
    pub schedule: LrSchedule,
}

/// Learning-rate shape after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the peak rate down to a tenth of it at the last step.
    Cosine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 3e-4,
            weight_decay: 1e-2,
            seed: 0,
            mode: TrainMode::Full,
            grad_clip: Some(1.0),
            eval_every: None,
            warmup_steps: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("learning rate and weight decay must be nonnegative".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Rate at optimizer step `step` of a run lasting `total_steps`.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let span = total_steps.saturating_sub(self.warmup_steps).max(2) - 1;
                let frac = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
                let floor = 0.1 * self.learning_rate;
                floor + 0.5 * (self.learning_rate - floor) * (1.0 + libm::cos(core::f64::consts::PI * frac))
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1_holdout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub steps: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Canonical answer tokens of a sample's ground-truth beams.
pub fn target_tokens(sample: &Sample, num_beams: usize) -> Result<Vec<TokenId>> {
    let text = format_answer(&sample.target_beams, num_beams)
        .map_err(|e| TrainError::Model(VlmError::Format(alloc::format!("{e}"))))?;
    Ok(tokenize(&text))
}

/// Loss and gradients of one sample.
pub type SampleGrad<T> = Result<(T, Gradients<T>)>;

/// Evaluates per-sample gradients for indices `0..n`, returning them in
/// index order. Implementations may run samples concurrently; the batch
/// reduction always happens afterwards in sample order, so every executor
/// yields bit-identical updates.
pub trait GradExecutor<T: Real>: Sync {
    fn run(&self, n: usize, f: &(dyn Fn(usize) -> SampleGrad<T> + Sync)) -> Vec<SampleGrad<T>>;
}

/// Evaluates samples one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl<T: Real> GradExecutor<T> for Sequential {
    fn run(&self, n: usize, f: &(dyn Fn(usize) -> SampleGrad<T> + Sync)) -> Vec<SampleGrad<T>> {
        (0..n).map(f).collect()
    }
}

fn sample_grad<T: Real>(model: &BeamVlm<T>, sample: &Sample, prompt_ids: &[TokenId]) -> SampleGrad<T> {
    let patches = frames_to_patches::<T>(&sample.frames, &model.config)?;
    let answer = target_tokens(sample, model.config.num_beams)?;
    let mut g = Graph::new(&model.params);
    let l = model.loss_graph(&mut g, &patches, prompt_ids, &answer)?;
    let loss = g.scalar(l);
    Ok((loss, g.backward(l)?))
}

/// Loss and gradients of one batch; every sample's answer-token mean counts
/// equally. The decoder input is always the ground-truth answer.
pub fn batch_loss_and_grads<T: Real>(
    model: &BeamVlm<T>,
    batch: &[&Sample],
    prompt_ids: &[TokenId],
) -> Result<(T, Gradients<T>)> {
    batch_loss_and_grads_with(model, batch, prompt_ids, &Sequential)
}

pub fn batch_loss_and_grads_with<T: Real>(
    model: &BeamVlm<T>,
    batch: &[&Sample],
    prompt_ids: &[TokenId],
    exec: &dyn GradExecutor<T>,
) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let inv = T::one() / T::lit(batch.len() as f64);
    let mut total = Gradients::empty(&model.params);
    let mut loss = T::zero();
    for r in exec.run(batch.len(), &|i| sample_grad(model, batch[i], prompt_ids)) {
        let (l, g) = r?;
        loss += l * inv;
        total.accumulate(&g, inv);
    }
    Ok((loss, total))
}

/// Mean teacher-forced cross-entropy over a batch (no gradients).
pub fn teacher_forcing_loss<T: Real>(model: &BeamVlm<T>, batch: &[Sample], prompt_ids: &[TokenId]) -> Result<T> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut loss = T::zero();
    for s in batch {
        let patches = frames_to_patches::<T>(&s.frames, &model.config)?;
        let answer = target_tokens(s, model.config.num_beams)?;
        let mut g = Graph::new(&model.params);
        let l = model.loss_graph(&mut g, &patches, prompt_ids, &answer)?;
        loss += g.scalar(l);
    }
    Ok(loss / T::lit(batch.len() as f64))
}

/// Greedy Top-1 accuracy at the first horizon step.
pub fn holdout_top1<T: Real>(model: &BeamVlm<T>, samples: &[Sample], prompt_ids: &[TokenId]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let c = &model.config;
    let mut session = VlmSession::new(model)?;
    let mut hits = 0;
    for s in samples {
        let p = predict_beams(
            &mut session,
            &s.frames,
            prompt_ids,
            &s.history_beams,
            c.num_beams,
            c.horizon,
            c.max_answer_tokens,
        )?;
        hits += usize::from(p.beams[0] == s.target_beams[0]);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Mini-batch AdamW training with a seeded per-epoch shuffle (the last
/// partial batch is kept). `on_step` sees every step record as it happens.
pub fn train<T: Real>(
    model: &mut BeamVlm<T>,
    samples: &[Sample],
    holdout: &[Sample],
    prompt_ids: &[TokenId],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    train_with(model, samples, holdout, prompt_ids, cfg, &Sequential, on_step)
}

/// [`train`] with per-sample gradients evaluated by `exec`.
pub fn train_with<T: Real>(
    model: &mut BeamVlm<T>,
    samples: &[Sample],
    holdout: &[Sample],
    prompt_ids: &[TokenId],
    cfg: &TrainConfig,
    exec: &dyn GradExecutor<T>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.mode == TrainMode::LoraOnly {
        if model.lora().is_none() {
            return Err(TrainError::Config("lora_only training needs adapters on the model".into()));
        }
        model.freeze_base();
    }
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.learning_rate, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
        &model.params,
    );
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let total_steps = cfg.epochs * samples.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(cfg.seed, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grads) = batch_loss_and_grads_with(model, &batch, prompt_ids, exec)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() || !grads.global_norm().is_finite() {
                return Err(TrainError::Divergence { step });
            }
            if let Some(c) = cfg.grad_clip {
                grads.clip_global_norm(T::lit(c));
            }
            let lr = cfg.lr_at(step, total_steps);
            opt.config.lr = lr;
            opt.step(&mut model.params, &grads)?;
            report.steps += 1;
            let top1_holdout = match cfg.eval_every {
                Some(k) if k > 0 && report.steps % k == 0 && !holdout.is_empty() => {
                    Some(holdout_top1(model, holdout, prompt_ids)?)
                }
                _ => None,
            };
            let rec = StepRecord { step, epoch, loss, lr, top1_holdout };
            on_step(&rec);
            report.records.push(rec);
        }
    }
    Ok(report)
}

/// LoRA-only transfer: attaches Q/K/V adapters if the model has none,
/// freezes every base array and trains only the adapters.
pub fn finetune_lora<T: Real>(
    model: &mut BeamVlm<T>,
    spec: LoraSpec,
    samples: &[Sample],
    holdout: &[Sample],
    prompt_ids: &[TokenId],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    finetune_lora_with(model, spec, samples, holdout, prompt_ids, cfg, &Sequential, on_step)
}

/// [`finetune_lora`] with per-sample gradients evaluated by `exec`.
#[allow(clippy::too_many_arguments)]
pub fn finetune_lora_with<T: Real>(
    model: &mut BeamVlm<T>,
    spec: LoraSpec,
    samples: &[Sample],
    holdout: &[Sample],
    prompt_ids: &[TokenId],
    cfg: &TrainConfig,
    exec: &dyn GradExecutor<T>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    if model.lora().is_none() {
        model.add_lora(spec, derive_seed(cfg.seed, 0x10ba))?;
    }
    let cfg = TrainConfig { mode: TrainMode::LoraOnly, ..cfg.clone() };
    train_with(model, samples, holdout, prompt_ids, &cfg, exec, on_step)
}
