//! Top-K accuracy per horizon step, predictor evaluation and prompt
//! ablation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::baseline::{baseline_forward, oracle_pixel_baseline, BaselineError, RecurrentClassifier};
use crate::math::Real;
use crate::phy::BeamCodebook;
use crate::scene::{Sample, WorldConfig};
use crate::text::TokenId;
use crate::vlm::{predict_beams, score_steps_after_prefix, BeamVlm, VlmError, VlmSession};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no test samples")]
    EmptyTestSet,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] VlmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

pub type Result<T> = core::result::Result<T, EvalError>;

/// Candidate beams per horizon step, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedPrediction {
    pub steps: Vec<Vec<usize>>,
    /// False when the fallback answer was used.
    pub valid: bool,
}

impl RankedPrediction {
    /// Orders beams by descending score; ties keep the smaller index first.
    pub fn from_scores(scores: &[Vec<f64>], valid: bool) -> Self {
        let steps = scores
            .iter()
            .map(|row| {
                let mut idx: Vec<usize> = (1..=row.len()).collect();
                idx.sort_by(|&a, &b| row[b - 1].partial_cmp(&row[a - 1]).unwrap_or(core::cmp::Ordering::Equal));
                idx
            })
            .collect();
        Self { steps, valid }
    }

    /// Each beam first, then its neighbors alternating outward (lower first).
    pub fn from_beams(beams: &[usize], m: usize, valid: bool) -> Self {
        let steps = beams
            .iter()
            .map(|&b| {
                let mut out = vec![b];
                for dist in 1..m {
                    if b > dist {
                        out.push(b - dist);
                    }
                    if b + dist <= m {
                        out.push(b + dist);
                    }
                }
                out
            })
            .collect();
        Self { steps, valid }
    }
}

/// Fraction of samples whose label at 1-based `step` is in the top `k`.
pub fn topk_accuracy(preds: &[RankedPrediction], labels: &[Vec<usize>], k: usize, step: usize) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: preds.len(), labels: labels.len() });
    }
    if k == 0 || step == 0 {
        return Err(EvalError::Argument("k and step are 1-based".into()));
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if preds.iter().zip(labels).any(|(p, l)| step > p.steps.len() || step > l.len()) {
        return Err(EvalError::Argument(alloc::format!("step {step} beyond the horizon")));
    }
    let hits =
        preds.iter().zip(labels).filter(|(p, l)| p.steps[step - 1].iter().take(k).any(|&c| c == l[step - 1])).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Top-K per horizon step for a fixed list of K.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub ks: Vec<usize>,
    /// `accuracy[step][i]` is Top-`ks[i]` at step `step + 1`.
    pub accuracy: Vec<Vec<f64>>,
    pub n: usize,
    pub invalid_rate: f64,
}

pub const DEFAULT_KS: [usize; 4] = [1, 2, 3, 5];

impl MetricsTable {
    pub fn from_predictions(preds: &[RankedPrediction], labels: &[Vec<usize>], ks: &[usize]) -> Result<Self> {
        if preds.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let horizon = labels[0].len();
        let accuracy = (1..=horizon)
            .map(|s| ks.iter().map(|&k| topk_accuracy(preds, labels, k, s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let invalid = preds.iter().filter(|p| !p.valid).count();
        Ok(Self { ks: ks.to_vec(), accuracy, n: preds.len(), invalid_rate: invalid as f64 / preds.len() as f64 })
    }

    pub fn horizon(&self) -> usize {
        self.accuracy.len()
    }

    /// Top-`k` at 1-based `step`, if `k` was tabulated.
    pub fn top(&self, k: usize, step: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        self.accuracy.get(step.checked_sub(1)?).map(|r| r[i])
    }
}

/// Anything that ranks the beams of a sample.
pub trait Predictor {
    fn rank(&mut self, sample: &Sample) -> Result<RankedPrediction>;
}

/// Greedy answer for validity; per-step candidate scores (conditioned on
/// the canonical greedy prefix) for the ranking.
pub struct VlmPredictor<'m, T: Real> {
    session: VlmSession<'m, T>,
    prompt_ids: Vec<TokenId>,
    /// Samples whose greedy answer matched the rank-1 candidates at every
    /// step, among valid answers.
    pub consistent: usize,
    pub valid: usize,
}

impl<'m, T: Real> VlmPredictor<'m, T> {
    pub fn new(model: &'m BeamVlm<T>, prompt_ids: &[TokenId]) -> Result<Self> {
        Ok(Self { session: VlmSession::new(model)?, prompt_ids: prompt_ids.to_vec(), consistent: 0, valid: 0 })
    }
}

impl<T: Real> Predictor for VlmPredictor<'_, T> {
    fn rank(&mut self, sample: &Sample) -> Result<RankedPrediction> {
        let cfg = self.session_config();
        let pred = predict_beams(
            &mut self.session,
            &sample.frames,
            &self.prompt_ids,
            &sample.history_beams,
            cfg.0,
            cfg.1,
            cfg.2,
        )?;
        let scores = score_steps_after_prefix(&mut self.session, &pred.beams, cfg.0)?;
        let ranked = RankedPrediction::from_scores(&scores, pred.valid);
        if pred.valid {
            self.valid += 1;
            if ranked.steps.iter().zip(&pred.beams).all(|(r, &b)| r[0] == b) {
                self.consistent += 1;
            }
        }
        Ok(ranked)
    }
}

impl<T: Real> VlmPredictor<'_, T> {
    fn session_config(&self) -> (usize, usize, usize) {
        let c = &self.session.model().config;
        (c.num_beams, c.horizon, c.max_answer_tokens)
    }
}

pub struct BaselinePredictor<'m, T> {
    pub model: &'m RecurrentClassifier<T>,
}

impl<T: Real> Predictor for BaselinePredictor<'_, T> {
    fn rank(&mut self, sample: &Sample) -> Result<RankedPrediction> {
        let p = baseline_forward(self.model, &sample.frames)?;
        let rows: Vec<Vec<f64>> =
            (0..p.rows()).map(|r| p.row(r).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect();
        Ok(RankedPrediction::from_scores(&rows, true))
    }
}

pub struct OraclePredictor<'a> {
    pub codebook: &'a BeamCodebook,
    pub world: &'a WorldConfig,
}

impl Predictor for OraclePredictor<'_> {
    fn rank(&mut self, sample: &Sample) -> Result<RankedPrediction> {
        let m = self.codebook.num_beams();
        let horizon = sample.target_beams.len();
        Ok(match oracle_pixel_baseline(&sample.frames, self.codebook, self.world, horizon) {
            Ok(beams) => RankedPrediction::from_beams(&beams, m, true),
            Err(BaselineError::UavNotFound) => {
                let last = *sample.history_beams.last().unwrap_or(&1);
                RankedPrediction::from_beams(&vec![last; horizon], m, false)
            }
            Err(e) => return Err(e.into()),
        })
    }
}

/// Ranks every sample and tabulates Top-K.
pub fn evaluate(predictor: &mut dyn Predictor, samples: &[Sample], ks: &[usize]) -> Result<MetricsTable> {
    if samples.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let preds = samples.iter().map(|s| predictor.rank(s)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<usize>> = samples.iter().map(|s| s.target_beams.clone()).collect();
    MetricsTable::from_predictions(&preds, &labels, ks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: MetricsTable,
    /// Top-1 minus the full-prompt Top-1, per horizon step.
    pub delta_top1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Evaluates one frozen model under several prompts. The first variant is
/// the reference the deltas are taken against.
pub fn ablate_prompt<T: Real>(
    model: &BeamVlm<T>,
    samples: &[Sample],
    variants: &[(String, Vec<TokenId>)],
    ks: &[usize],
) -> Result<AblationReport> {
    if variants.len() < 2 {
        return Err(EvalError::Argument("ablation needs the full prompt and at least one variant".into()));
    }
    if !ks.contains(&1) {
        return Err(EvalError::Argument("ablation needs Top-1 in the K list".into()));
    }
    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len());
    for (name, prompt) in variants {
        let mut p = VlmPredictor::new(model, prompt)?;
        let metrics = evaluate(&mut p, samples, ks)?;
        let delta_top1 = match rows.first() {
            None => vec![0.0; metrics.horizon()],
            Some(full) => (1..=metrics.horizon())
                .map(|s| metrics.top(1, s).unwrap_or(0.0) - full.metrics.top(1, s).unwrap_or(0.0))
                .collect(),
        };
        rows.push(AblationRow { variant: name.clone(), metrics, delta_top1 });
    }
    Ok(AblationReport { rows })
}
