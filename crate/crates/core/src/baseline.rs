//! Discriminative reference predictors: recurrent classifiers over pooled
//! per-frame patch features, and a pixel-geometry oracle.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Real;
use crate::nn::{AdamW, AdamWConfig, Gradients, Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::phy::BeamCodebook;
use crate::rng::{derive_seed, seeded};
use crate::scene::{reflect, GrayImage, Sample, WorldConfig};
use crate::train::{StepRecord, TrainConfig, TrainError, TrainReport};
use crate::vlm::{frames_to_patches, VlmError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("no UAV pixel above the detection threshold in the final frame")]
    UavNotFound,
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<NnError> for BaselineError {
    fn from(e: NnError) -> Self {
        BaselineError::Train(e.into())
    }
}

impl From<VlmError> for BaselineError {
    fn from(e: VlmError) -> Self {
        BaselineError::Train(e.into())
    }
}

pub type Result<T> = core::result::Result<T, BaselineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Elman,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub cell: CellType,
    pub hidden_size: usize,
    /// Width of the pooled per-frame feature.
    pub d_model: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub n_frames: usize,
    pub horizon: usize,
    pub num_beams: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.05
}

impl BaselineConfig {
    pub fn lstm(hidden_size: usize) -> Self {
        Self {
            cell: CellType::Lstm,
            hidden_size,
            d_model: 128,
            image_size: 64,
            patch_size: 8,
            n_frames: 8,
            horizon: 5,
            num_beams: 32,
            init_std: 0.05,
        }
    }

    fn vlm_view(&self) -> crate::vlm::VlmConfig {
        crate::vlm::VlmConfig {
            d_model: self.d_model,
            image_size: self.image_size,
            patch_size: self.patch_size,
            n_frames: self.n_frames,
            horizon: self.horizon,
            num_beams: self.num_beams,
            ..crate::vlm::VlmConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    patch_proj: ParamId,
    patch_bias: ParamId,
    patch_pos: ParamId,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Per-frame patch features are projected, position-offset, passed
/// through GELU and mean-pooled; frames then drive an Elman or LSTM cell
/// whose last state feeds a `horizon × M` softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentClassifier<T> {
    pub config: BaselineConfig,
    pub params: ParamStore<T>,
    ids: Ids,
}

impl<T: Real> RecurrentClassifier<T> {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.hidden_size == 0 || c.patch_size == 0 || !c.image_size.is_multiple_of(c.patch_size) {
            return Err(TrainError::Config("invalid baseline dimensions".into()).into());
        }
        let mut rng = seeded(seed);
        let (d, h, p2) = (c.d_model, c.hidden_size, c.patch_size * c.patch_size);
        let gates = match c.cell {
            CellType::Elman => h,
            CellType::Lstm => 4 * h,
        };
        let per = (c.image_size / c.patch_size) * (c.image_size / c.patch_size);
        let mut ps = ParamStore::new();
        let mut randn = |ps: &mut ParamStore<T>, name: &str, shape: &[usize]| {
            ps.add(name, Tensor::randn(shape, c.init_std, &mut rng))
        };
        let patch_proj = randn(&mut ps, "patch.proj", &[d, p2]);
        let patch_bias = ps.add("patch.bias", Tensor::zeros(&[1, d]));
        let patch_pos = randn(&mut ps, "patch.pos", &[per, d]);
        let w_x = randn(&mut ps, "cell.w_x", &[gates, d]);
        let w_h = randn(&mut ps, "cell.w_h", &[gates, h]);
        let mut bias = Tensor::zeros(&[1, gates]);
        if c.cell == CellType::Lstm {
            // Forget-gate bias of one keeps early gradients flowing.
            for v in &mut bias.data_mut()[h..2 * h] {
                *v = T::one();
            }
        }
        let b = ps.add("cell.b", bias);
        let w_out = randn(&mut ps, "head.w", &[c.horizon * c.num_beams, h]);
        let b_out = ps.add("head.b", Tensor::zeros(&[1, c.horizon * c.num_beams]));
        Ok(Self { config, params: ps, ids: Ids { patch_proj, patch_bias, patch_pos, w_x, w_h, b, w_out, b_out } })
    }

    /// Rebuilds a classifier from named arrays, checking shapes.
    pub fn from_params(config: BaselineConfig, params: ParamStore<T>) -> Result<Self> {
        let mut clf = Self::new(config, 0)?;
        for id in clf.params.ids().collect::<Vec<_>>() {
            let name = clf.params.name(id);
            let src =
                params.find(name).ok_or_else(|| TrainError::Config(alloc::format!("missing parameter {name}")))?;
            if params.get(src).shape() != clf.params.get(id).shape() {
                return Err(TrainError::Config(alloc::format!("parameter {name} has the wrong shape")).into());
            }
            *clf.params.get_mut(id) = params.get(src).clone();
        }
        Ok(clf)
    }

    /// `horizon × M` logits for one sample's frames.
    fn logits_graph(&self, g: &mut Graph<'_, T>, frames: &[GrayImage]) -> Result<Var> {
        let c = &self.config;
        let patches = frames_to_patches::<T>(frames, &c.vlm_view())?;
        let per = patches.rows() / c.n_frames;
        let h_size = c.hidden_size;
        // Same black-anchored affine patch map as the VLM embedder.
        let all = g.input(patches.map(|v| v + T::one()));
        let proj = g.param(self.ids.patch_proj);
        let bias = g.param(self.ids.patch_bias);
        let pos_table = g.param(self.ids.patch_pos);
        let pos_ids: Vec<usize> = (0..per).collect();
        let pos = g.gather(pos_table, &pos_ids)?;
        let w_x = g.param(self.ids.w_x);
        let w_h = g.param(self.ids.w_h);
        let b = g.param(self.ids.b);
        let mut h = g.input(Tensor::zeros(&[1, h_size]));
        let mut cell = g.input(Tensor::zeros(&[1, h_size]));
        for f in 0..c.n_frames {
            let x = g.slice_rows(all, f * per, (f + 1) * per)?;
            let x = g.matmul(x, proj, true)?;
            let x = g.add_row(x, bias)?;
            let x = g.add(x, pos)?;
            let x = g.gelu(x);
            let feat = g.mean_rows(x);
            let zx = g.matmul(feat, w_x, true)?;
            let zh = g.matmul(h, w_h, true)?;
            let z = g.add(zx, zh)?;
            let z = g.add_row(z, b)?;
            match c.cell {
                CellType::Elman => h = g.tanh(z),
                CellType::Lstm => {
                    let i = g.slice_cols(z, 0, h_size)?;
                    let fg = g.slice_cols(z, h_size, 2 * h_size)?;
                    let gg = g.slice_cols(z, 2 * h_size, 3 * h_size)?;
                    let o = g.slice_cols(z, 3 * h_size, 4 * h_size)?;
                    let (i, fg, gg, o) = (g.sigmoid(i), g.sigmoid(fg), g.tanh(gg), g.sigmoid(o));
                    let keep = g.mul(fg, cell)?;
                    let write = g.mul(i, gg)?;
                    cell = g.add(keep, write)?;
                    let tc = g.tanh(cell);
                    h = g.mul(o, tc)?;
                }
            }
        }
        let w_out = g.param(self.ids.w_out);
        let b_out = g.param(self.ids.b_out);
        let flat = g.matmul(h, w_out, true)?;
        let flat = g.add_row(flat, b_out)?;
        let m = c.num_beams;
        let rows = (0..c.horizon)
            .map(|j| g.slice_cols(flat, j * m, (j + 1) * m))
            .collect::<core::result::Result<Vec<_>, _>>()?;
        Ok(g.concat_rows(&rows)?)
    }

    /// Per-step cross-entropy summed over the horizon.
    fn loss_graph(&self, g: &mut Graph<'_, T>, sample: &Sample) -> Result<Var> {
        let logits = self.logits_graph(g, &sample.frames)?;
        let targets: Vec<Option<usize>> = sample.target_beams.iter().map(|&b| Some(b - 1)).collect();
        let mean = g.cross_entropy(logits, &targets)?;
        Ok(g.scale(mean, T::lit(targets.len() as f64)))
    }

    pub fn loss(&self, sample: &Sample) -> Result<T> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, sample)?;
        Ok(g.scalar(l))
    }
}

/// `horizon × M` probabilities; rows sum to one.
pub fn baseline_forward<T: Real>(clf: &RecurrentClassifier<T>, frames: &[GrayImage]) -> Result<Tensor<T>> {
    let mut g = Graph::new(&clf.params);
    let logits = clf.logits_graph(&mut g, frames)?;
    let mut probs = g.value(logits).clone();
    let m = clf.config.num_beams;
    for row in probs.data_mut().chunks_exact_mut(m) {
        crate::nn::kernels::softmax_inplace(row);
    }
    Ok(probs)
}

/// Same optimizer, batching, shuffling and clipping contract as the VLM.
pub fn train_baseline<T: Real>(
    clf: &mut RecurrentClassifier<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.learning_rate, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
        &clf.params,
    );
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let total_steps = cfg.epochs * samples.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(cfg.seed, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps;
            let inv = T::one() / T::lit(chunk.len() as f64);
            let mut grads = Gradients::empty(&clf.params);
            let mut loss = T::zero();
            for &i in chunk {
                let mut g = Graph::new(&clf.params);
                let l = clf.loss_graph(&mut g, &samples[i])?;
                loss += g.scalar(l) * inv;
                grads.accumulate(&g.backward(l)?, inv);
            }
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { step }.into());
            }
            if let Some(c) = cfg.grad_clip {
                grads.clip_global_norm(T::lit(c));
            }
            let lr = cfg.lr_at(step, total_steps);
            opt.config.lr = lr;
            opt.step(&mut clf.params, &grads)?;
            report.steps += 1;
            let rec = StepRecord { step, epoch, loss, lr, top1_holdout: None };
            on_step(&rec);
            report.records.push(rec);
        }
    }
    Ok(report)
}

/// Mean column of the pixels at or above the detection threshold.
fn uav_column(frame: &GrayImage, threshold: u8) -> Option<f64> {
    let (mut sum, mut n) = (0usize, 0usize);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if frame.get(x, y) >= threshold {
                sum += x;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Geometry oracle: reads the UAV column in the last two frames, inverts
/// the camera map and extrapolates the azimuth linearly.
pub fn oracle_pixel_baseline(
    frames: &[GrayImage],
    cb: &BeamCodebook,
    world: &WorldConfig,
    horizon: usize,
) -> Result<Vec<usize>> {
    let threshold = world.detection_threshold().max(1);
    let last = frames.last().ok_or(BaselineError::UavNotFound)?;
    let col = uav_column(last, threshold).ok_or(BaselineError::UavNotFound)?;
    let prev = frames.len().checked_sub(2).and_then(|i| uav_column(&frames[i], threshold)).unwrap_or(col);
    let az = world.azimuth_of(col);
    let velocity = az - world.azimuth_of(prev);
    let half = world.camera_fov / 2.0;
    Ok((1..=horizon).map(|k| cb.nearest_beam(reflect(az + velocity * k as f64, half).to_radians())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<GrayImage> {
        (0..n)
            .map(|i| GrayImage {
                width: 16,
                height: 16,
                pixels: (0..256).map(|p| ((p * 7 + i * 13) % 256) as u8).collect(),
            })
            .collect()
    }

    fn small(cell: CellType, hidden: usize) -> BaselineConfig {
        BaselineConfig {
            cell,
            hidden_size: hidden,
            d_model: 8,
            image_size: 16,
            patch_size: 8,
            n_frames: 8,
            horizon: 5,
            num_beams: 32,
            init_std: 0.1,
        }
    }

    #[test]
    fn rows_are_distributions() {
        for cell in [CellType::Elman, CellType::Lstm] {
            for hidden in [1, 6] {
                let clf = RecurrentClassifier::<f64>::new(small(cell, hidden), 3).unwrap();
                let p = baseline_forward(&clf, &frames(8)).unwrap();
                assert_eq!(p.shape(), &[5, 32]);
                for r in 0..5 {
                    assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                assert_eq!(p, baseline_forward(&clf, &frames(8)).unwrap());
            }
        }
    }
}
