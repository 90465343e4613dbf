//! Parameters, sequence assembly and the differentiable forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Result, VlmConfig, VlmError};
use crate::math::Real;
use crate::nn::attention::AttentionBlock;
use crate::nn::lora::LoraParams;
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::seeded;
use crate::text::{TokenId, BOS, EOS, IMG};

/// Rank and scaling numerator of the Q/K/V adapters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraSpec {
    fn default() -> Self {
        Self { rank: crate::nn::lora::DEFAULT_RANK, alpha: crate::nn::lora::DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIds {
    pub attn_norm: ParamId,
    pub attn: AttentionBlock,
    pub ffn_norm: ParamId,
    /// `ffn_hidden × d_m`
    pub ffn_up: ParamId,
    /// `d_m × ffn_hidden`
    pub ffn_down: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelIds {
    /// `d_m × p²`
    pub patch_proj: ParamId,
    pub patch_bias: ParamId,
    /// `patches_per_frame × d_m`
    pub patch_pos: ParamId,
    /// `n_frames × d_m`
    pub frame_pos: ParamId,
    /// `260 × d_m`
    pub token_embedding: ParamId,
    pub layers: Vec<LayerIds>,
    pub final_norm: ParamId,
    /// `260 × d_m`
    pub lm_head: ParamId,
}

/// Where each part of an assembled sequence lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    pub n_visual: usize,
    pub prompt_len: usize,
    /// Answer tokens, excluding the closing EOS; `None` at inference.
    pub answer_len: Option<usize>,
}

impl SequenceLayout {
    pub fn text_start(&self) -> usize {
        1 + self.n_visual
    }

    pub fn answer_start(&self) -> usize {
        self.text_start() + self.prompt_len
    }

    pub fn len(&self) -> usize {
        self.answer_start() + self.answer_len.map_or(0, |a| a + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True on the answer and EOS positions.
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.len()];
        for x in &mut m[self.answer_start()..] {
            *x = true;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSequence<T> {
    /// `len × d_m` input embeddings.
    pub embeddings: Tensor<T>,
    /// Token per position; visual positions hold `IMG`.
    pub token_ids: Vec<TokenId>,
    pub positions: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub layout: SequenceLayout,
}

/// Parameter counts per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightReport {
    pub groups: Vec<(String, usize)>,
    pub total: usize,
    pub trainable: usize,
}

impl WeightReport {
    /// Closed-form count for a configuration (optionally with adapters).
    pub fn expected(cfg: &VlmConfig, lora: Option<LoraSpec>) -> usize {
        let (d, p2, v, f) = (cfg.d_model, cfg.patch_size * cfg.patch_size, cfg.vocab_size, cfg.ffn_hidden);
        let embed = d * p2 + d + cfg.patches_per_frame() * d + cfg.n_frames * d + v * d;
        let layer = 4 * d * d + 2 * d * f + 2 * d;
        let adapters = lora.map_or(0, |l| 3 * 2 * l.rank * d);
        embed + cfg.layers * (layer + adapters) + d + v * d
    }
}

/// The generative beam predictor, generic over the float type so the
/// same model runs in `f32` for training and `f64` for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVlm<T> {
    pub config: VlmConfig,
    pub params: ParamStore<T>,
    pub ids: ModelIds,
    lora: Option<LoraSpec>,
}

fn layer_name(i: usize, what: &str) -> String {
    format!("layers.{i}.{what}")
}

/// Whether a parameter name belongs to a LoRA adapter.
pub fn is_lora_param(name: &str) -> bool {
    name.contains(".lora_")
}

impl<T: Real> BeamVlm<T> {
    /// Randomly initialized base model (no adapters).
    pub fn new(config: VlmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (d, p2, f, std) = (c.d_model, c.patch_size * c.patch_size, c.ffn_hidden, c.init_std);
        let mut rng = seeded(seed);
        let mut ps = ParamStore::new();
        let mut randn =
            |ps: &mut ParamStore<T>, name: &str, shape: &[usize]| ps.add(name, Tensor::randn(shape, std, &mut rng));
        let patch_proj = randn(&mut ps, "patch.proj", &[d, p2]);
        let patch_bias = ps.add("patch.bias", Tensor::zeros(&[1, d]));
        let patch_pos = randn(&mut ps, "patch.pos", &[c.patches_per_frame(), d]);
        let frame_pos = randn(&mut ps, "patch.frame", &[c.n_frames, d]);
        let token_embedding = randn(&mut ps, "token_embedding", &[c.vocab_size, d]);
        let ones = || Tensor::from_vec(&[1, d], vec![T::one(); d]).expect("row vector");
        let mut layers = Vec::with_capacity(c.layers);
        for i in 0..c.layers {
            let attn_norm = ps.add(&layer_name(i, "attn_norm"), ones());
            let wq = randn(&mut ps, &layer_name(i, "attn.wq"), &[d, d]);
            let wk = randn(&mut ps, &layer_name(i, "attn.wk"), &[d, d]);
            let wv = randn(&mut ps, &layer_name(i, "attn.wv"), &[d, d]);
            let wo = randn(&mut ps, &layer_name(i, "attn.wo"), &[d, d]);
            let ffn_norm = ps.add(&layer_name(i, "ffn_norm"), ones());
            let ffn_up = randn(&mut ps, &layer_name(i, "ffn.up"), &[f, d]);
            let ffn_down = randn(&mut ps, &layer_name(i, "ffn.down"), &[d, f]);
            layers.push(LayerIds {
                attn_norm,
                attn: AttentionBlock {
                    wq,
                    wk,
                    wv,
                    wo,
                    heads: c.heads,
                    head_dim: c.head_dim(),
                    lora_q: None,
                    lora_k: None,
                    lora_v: None,
                },
                ffn_norm,
                ffn_up,
                ffn_down,
            });
        }
        let final_norm = ps.add("final_norm", ones());
        let lm_head = randn(&mut ps, "lm_head", &[c.vocab_size, d]);
        let ids =
            ModelIds { patch_proj, patch_bias, patch_pos, frame_pos, token_embedding, layers, final_norm, lm_head };
        Ok(Self { config, params: ps, ids, lora: None })
    }

    /// Rebuilds a model from named arrays (e.g. a loaded checkpoint),
    /// checking every shape against the configuration.
    pub fn from_params(config: VlmConfig, params: ParamStore<T>, lora: Option<LoraSpec>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if let Some(spec) = lora {
            model.add_lora(spec, 0)?;
        }
        if params.len() != model.params.len() {
            return Err(VlmError::Format(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id);
            let src = params.find(name).ok_or_else(|| VlmError::Format(format!("missing parameter {name}")))?;
            let value = params.get(src);
            if value.shape() != model.params.get(id).shape() {
                return Err(VlmError::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = value.clone();
            let trainable = params.is_trainable(src);
            model.params.set_trainable(id, trainable);
        }
        Ok(model)
    }

    /// Attaches fresh Q/K/V adapters (`B = 0`) to every layer.
    pub fn add_lora(&mut self, spec: LoraSpec, seed: u64) -> Result<()> {
        if self.lora.is_some() {
            return Err(VlmError::Config("model already carries adapters".into()));
        }
        let d = self.config.d_model;
        if spec.rank == 0 || spec.rank > d {
            return Err(VlmError::Config(format!("LoRA rank {} outside 1..={d}", spec.rank)));
        }
        let mut rng = seeded(seed);
        for (i, layer) in self.ids.layers.iter_mut().enumerate() {
            let mut make = |which: &str| {
                let a = self.params.add(
                    &layer_name(i, &format!("attn.lora_{which}.a")),
                    Tensor::randn(&[spec.rank, d], 1.0 / spec.rank as f64, &mut rng),
                );
                let b =
                    self.params.add(&layer_name(i, &format!("attn.lora_{which}.b")), Tensor::zeros(&[d, spec.rank]));
                LoraParams { a, b, rank: spec.rank, alpha: spec.alpha }
            };
            layer.attn.lora_q = Some(make("q"));
            layer.attn.lora_k = Some(make("k"));
            layer.attn.lora_v = Some(make("v"));
        }
        self.lora = Some(spec);
        Ok(())
    }

    pub fn lora(&self) -> Option<LoraSpec> {
        self.lora
    }

    /// Freezes everything except the adapters.
    pub fn freeze_base(&mut self) {
        self.params.train_only(is_lora_param);
    }

    pub fn weight_report(&self) -> WeightReport {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for e in self.params.entries() {
            let group = if is_lora_param(&e.name) {
                "lora"
            } else if e.name.starts_with("patch.") {
                "patch_embedder"
            } else if e.name.starts_with("layers.") {
                "decoder"
            } else if e.name == "token_embedding" {
                "token_embedding"
            } else {
                "output"
            };
            match groups.iter_mut().find(|(g, _)| g == group) {
                Some((_, n)) => *n += e.value.len(),
                None => groups.push((group.into(), e.value.len())),
            }
        }
        WeightReport { groups, total: self.params.num_elements(), trainable: self.params.num_trainable() }
    }

    pub fn cast<U: Real>(&self) -> BeamVlm<U> {
        BeamVlm { config: self.config.clone(), params: self.params.cast(), ids: self.ids.clone(), lora: self.lora }
    }

    fn check_patches(&self, patches: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        if patches.shape() != [c.visual_tokens(), c.patch_size * c.patch_size] {
            return Err(VlmError::Shape(crate::nn::NnError::Shape(format!(
                "patch matrix {:?}, expected [{}, {}]",
                patches.shape(),
                c.visual_tokens(),
                c.patch_size * c.patch_size
            ))));
        }
        Ok(())
    }

    /// Visual tokens: projected patches plus 2D-position and frame offsets.
    pub fn embed_frames_graph(&self, g: &mut Graph<'_, T>, patches: &Tensor<T>) -> Result<Var> {
        self.check_patches(patches)?;
        let per = self.config.patches_per_frame();
        let n = patches.rows();
        // The affine map is anchored at black: W·(x + 1) + b. Black pixels
        // (−1 after normalization) then contribute nothing to the token or to
        // the gradient of W, so a few bright UAV pixels are not drowned out
        // by the uniform background of every other patch.
        let x = g.input(patches.map(|v| v + T::one()));
        let w = g.param(self.ids.patch_proj);
        let b = g.param(self.ids.patch_bias);
        let x = g.matmul(x, w, true)?;
        let x = g.add_row(x, b)?;
        let pos_ids: Vec<usize> = (0..n).map(|i| i % per).collect();
        let frame_ids: Vec<usize> = (0..n).map(|i| i / per).collect();
        let pos_table = g.param(self.ids.patch_pos);
        let pos = g.gather(pos_table, &pos_ids)?;
        let frame_table = g.param(self.ids.frame_pos);
        let frame = g.gather(frame_table, &frame_ids)?;
        let x = g.add(x, pos)?;
        Ok(g.add(x, frame)?)
    }

    /// Visual token matrix `(n_frames · patches) × d_m`.
    pub fn embed_frames(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let v = self.embed_frames_graph(&mut g, patches)?;
        Ok(g.value(v).clone())
    }

    pub fn layout(&self, prompt_len: usize, answer_len: Option<usize>) -> Result<SequenceLayout> {
        let layout = SequenceLayout { n_visual: self.config.visual_tokens(), prompt_len, answer_len };
        if layout.len() > self.config.max_context {
            return Err(VlmError::ContextOverflow { len: layout.len(), max: self.config.max_context });
        }
        Ok(layout)
    }

    fn text_ids(prompt_ids: &[TokenId], answer_ids: Option<&[TokenId]>) -> Vec<TokenId> {
        let mut ids = prompt_ids.to_vec();
        if let Some(a) = answer_ids {
            ids.extend_from_slice(a);
            ids.push(EOS);
        }
        ids
    }

    /// `[BOS][visual][prompt][answer][EOS]` with sequential positions and a
    /// loss mask over the answer and EOS.
    pub fn assemble_sequence(
        &self,
        visual_tokens: &Tensor<T>,
        prompt_ids: &[TokenId],
        answer_ids: Option<&[TokenId]>,
    ) -> Result<AssembledSequence<T>> {
        let layout = self.layout(prompt_ids.len(), answer_ids.map(<[TokenId]>::len))?;
        let d = self.config.d_model;
        if visual_tokens.shape() != [layout.n_visual, d] {
            return Err(VlmError::Shape(crate::nn::NnError::Shape(format!(
                "visual tokens {:?}, expected [{}, {d}]",
                visual_tokens.shape(),
                layout.n_visual
            ))));
        }
        let table = self.params.get(self.ids.token_embedding);
        let text = Self::text_ids(prompt_ids, answer_ids);
        let mut token_ids = Vec::with_capacity(layout.len());
        token_ids.push(BOS);
        token_ids.resize(layout.text_start(), IMG);
        token_ids.extend_from_slice(&text);
        let mut data = Vec::with_capacity(layout.len() * d);
        data.extend_from_slice(table.row(BOS as usize));
        data.extend_from_slice(visual_tokens.data());
        for &t in &text {
            data.extend_from_slice(table.row(t as usize));
        }
        Ok(AssembledSequence {
            embeddings: Tensor::from_vec(&[layout.len(), d], data)?,
            token_ids,
            positions: (0..layout.len()).collect(),
            loss_mask: layout.loss_mask(),
            layout,
        })
    }

    fn assemble_graph(
        &self,
        g: &mut Graph<'_, T>,
        patches: &Tensor<T>,
        prompt_ids: &[TokenId],
        answer_ids: Option<&[TokenId]>,
    ) -> Result<(Var, SequenceLayout)> {
        let layout = self.layout(prompt_ids.len(), answer_ids.map(<[TokenId]>::len))?;
        let visual = self.embed_frames_graph(g, patches)?;
        let table = g.param(self.ids.token_embedding);
        let bos = g.gather(table, &[BOS as usize])?;
        let text: Vec<usize> = Self::text_ids(prompt_ids, answer_ids).iter().map(|&t| t as usize).collect();
        let parts = if text.is_empty() {
            vec![bos, visual]
        } else {
            let text = g.gather(table, &text)?;
            vec![bos, visual, text]
        };
        Ok((g.concat_rows(&parts)?, layout))
    }

    /// Runs the decoder stack (pre-norm attention and GELU feed-forward
    /// blocks) and returns the residual stream before the final norm.
    pub fn decoder_graph(&self, g: &mut Graph<'_, T>, mut h: Var, positions: &[usize]) -> Result<Var> {
        for layer in &self.ids.layers {
            let w = g.param(layer.attn_norm);
            let x = g.rms_norm(h, w)?;
            let a = layer.attn.forward(g, x, positions, self.config.attention_scale)?;
            h = g.add(h, a)?;
            let w = g.param(layer.ffn_norm);
            let x = g.rms_norm(h, w)?;
            let up = g.param(layer.ffn_up);
            let x = g.matmul(x, up, true)?;
            let x = g.gelu(x);
            let down = g.param(layer.ffn_down);
            let x = g.matmul(x, down, true)?;
            h = g.add(h, x)?;
        }
        Ok(h)
    }

    fn head_graph(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var> {
        let w = g.param(self.ids.final_norm);
        let x = g.rms_norm(h, w)?;
        let head = g.param(self.ids.lm_head);
        Ok(g.matmul(x, head, true)?)
    }

    /// Next-token logits at every position of the assembled sequence.
    pub fn all_logits_graph(
        &self,
        g: &mut Graph<'_, T>,
        patches: &Tensor<T>,
        prompt_ids: &[TokenId],
        answer_ids: Option<&[TokenId]>,
    ) -> Result<Var> {
        let (x, layout) = self.assemble_graph(g, patches, prompt_ids, answer_ids)?;
        let positions: Vec<usize> = (0..layout.len()).collect();
        let h = self.decoder_graph(g, x, &positions)?;
        self.head_graph(g, h)
    }

    /// Logits of the rows that predict the answer and EOS, with their
    /// targets. Row `i` predicts the token at position `answer_start + i`.
    pub fn answer_logits_graph(
        &self,
        g: &mut Graph<'_, T>,
        patches: &Tensor<T>,
        prompt_ids: &[TokenId],
        answer_ids: &[TokenId],
    ) -> Result<(Var, Vec<usize>)> {
        let (x, layout) = self.assemble_graph(g, patches, prompt_ids, Some(answer_ids))?;
        let positions: Vec<usize> = (0..layout.len()).collect();
        let h = self.decoder_graph(g, x, &positions)?;
        let h = g.slice_rows(h, layout.answer_start() - 1, layout.len() - 1)?;
        let logits = self.head_graph(g, h)?;
        let mut targets: Vec<usize> = answer_ids.iter().map(|&t| t as usize).collect();
        targets.push(EOS as usize);
        Ok((logits, targets))
    }

    /// Teacher-forced cross-entropy over the answer and EOS tokens.
    pub fn loss_graph(
        &self,
        g: &mut Graph<'_, T>,
        patches: &Tensor<T>,
        prompt_ids: &[TokenId],
        answer_ids: &[TokenId],
    ) -> Result<Var> {
        let (logits, targets) = self.answer_logits_graph(g, patches, prompt_ids, answer_ids)?;
        let targets: Vec<Option<usize>> = targets.into_iter().map(Some).collect();
        Ok(g.cross_entropy(logits, &targets)?)
    }
}
