//! Cached autoregressive inference: greedy decoding, beam prediction with
//! fallback, and constrained per-step candidate scoring.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::model::BeamVlm;
use super::{frames_to_patches, Result, VlmError};
use crate::math::{gelu, Real};
use crate::nn::kernels::{attention_forward, rmsnorm_forward, RopeTable};
use crate::nn::lora::{lora_merge, LoraAdapter};
use crate::nn::Tensor;
use crate::scene::GrayImage;
use crate::text::{fallback_answer, format_answer, parse_answer, tokenize, TokenId, EOS, IMG, PAD};

/// A causal language model seen as a token-by-token state machine.
pub trait CausalLm {
    /// Resets the state and consumes `[BOS][frames][prompt]`.
    fn begin(&mut self, frames: &[GrayImage], prompt_ids: &[TokenId]) -> Result<()>;
    /// Appends one token after the current end.
    fn push(&mut self, token: TokenId) -> Result<()>;
    /// Next-token logits at the current end.
    fn logits(&self) -> &[f32];
    /// Tokens appended since [`CausalLm::begin`].
    fn generated(&self) -> &[TokenId];
    /// Drops appended tokens beyond the first `n`.
    fn truncate(&mut self, n: usize);
}

/// First index of the maximum (ties resolve to the smallest id).
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_at(logits: &[f32], token: TokenId) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
    let lse = max + libm::log(logits.iter().map(|&x| libm::exp(f64::from(x) - max)).sum::<f64>());
    f64::from(logits[token as usize]) - lse
}

/// Greedy decoding until EOS or `max_answer_tokens`; returns the answer text.
pub fn generate<L: CausalLm + ?Sized>(
    lm: &mut L,
    frames: &[GrayImage],
    prompt_ids: &[TokenId],
    max_answer_tokens: usize,
) -> Result<String> {
    lm.begin(frames, prompt_ids)?;
    let mut bytes = Vec::new();
    for _ in 0..max_answer_tokens {
        let t = argmax(lm.logits()) as TokenId;
        if t == EOS {
            break;
        }
        match t {
            0..=255 => bytes.push(t as u8),
            PAD => bytes.extend_from_slice(b"<pad>"),
            IMG => bytes.extend_from_slice(b"<img>"),
            _ => {}
        }
        lm.push(t)?;
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub beams: Vec<usize>,
    /// False when the generated text failed to parse and the fallback was used.
    pub valid: bool,
    pub raw: String,
}

/// Generates, parses, and falls back to repeating the last observed beam.
#[allow(clippy::too_many_arguments)]
pub fn predict_beams<L: CausalLm + ?Sized>(
    lm: &mut L,
    frames: &[GrayImage],
    prompt_ids: &[TokenId],
    history: &[usize],
    num_beams: usize,
    horizon: usize,
    max_answer_tokens: usize,
) -> Result<Prediction> {
    let raw = generate(lm, frames, prompt_ids, max_answer_tokens)?;
    Ok(match parse_answer(&raw, num_beams, horizon) {
        Ok(p) => Prediction { beams: p.beams, valid: true, raw },
        Err(_) => {
            let f = fallback_answer(history, horizon).map_err(|e| VlmError::Format(format!("{e}")))?;
            Prediction { beams: f.beams, valid: false, raw }
        }
    })
}

/// Walks the decimal trie of `1..=m` below the current end, writing the
/// summed log-probability of each candidate plus its continuation.
fn score_trie<L: CausalLm + ?Sized>(
    lm: &mut L,
    value: usize,
    acc: f64,
    m: usize,
    last: bool,
    out: &mut [f64],
) -> Result<()> {
    let base = lm.generated().len();
    let first = if value == 0 { 1 } else { 0 };
    for d in first..=9 {
        let next = value * 10 + d;
        if next > m {
            break;
        }
        let tok = TokenId::from(b'0' + d as u8);
        let lp = acc + log_softmax_at(lm.logits(), tok);
        lm.push(tok)?;
        let tail = if last {
            log_softmax_at(lm.logits(), EOS)
        } else {
            let comma = log_softmax_at(lm.logits(), TokenId::from(b','));
            lm.push(TokenId::from(b','))?;
            let space = log_softmax_at(lm.logits(), TokenId::from(b' '));
            lm.truncate(base + 1);
            comma + space
        };
        out[next - 1] = lp + tail;
        score_trie(lm, next, lp, m, last, out)?;
        lm.truncate(base);
    }
    Ok(())
}

/// Log-probabilities of the `m` candidates at every step, each step
/// conditioned on the canonical text of `beams` before it.
pub fn score_all_steps<L: CausalLm + ?Sized>(
    lm: &mut L,
    frames: &[GrayImage],
    prompt_ids: &[TokenId],
    beams: &[usize],
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    lm.begin(frames, prompt_ids)?;
    score_steps_after_prefix(lm, beams, m)
}

/// [`score_all_steps`] for a model that already holds the frames and
/// prompt (anything appended after them is dropped first), so a caller that
/// just decoded the answer does not re-encode the prefix.
pub fn score_steps_after_prefix<L: CausalLm + ?Sized>(lm: &mut L, beams: &[usize], m: usize) -> Result<Vec<Vec<f64>>> {
    let canonical = format_answer(beams, m).map_err(|e| VlmError::Format(format!("{e}")))?;
    lm.truncate(0);
    let horizon = beams.len();
    let mut all = Vec::with_capacity(horizon);
    let mut written = 0;
    for (j, &b) in beams.iter().enumerate() {
        let mut scores = vec![f64::NEG_INFINITY; m];
        score_trie(lm, 0, 0.0, m, j + 1 == horizon, &mut scores)?;
        all.push(scores);
        let piece = if j + 1 == horizon { format!("{b}") } else { format!("{b}, ") };
        for t in tokenize(&piece) {
            lm.push(t)?;
        }
        written += piece.len();
    }
    debug_assert_eq!(written, canonical.len());
    Ok(all)
}

/// Scores of the `m` candidates at 1-based `step`, conditioned on the
/// canonical rendering of `prefix_beams` (the `step − 1` earlier beams).
pub fn score_candidates<L: CausalLm + ?Sized>(
    lm: &mut L,
    frames: &[GrayImage],
    prompt_ids: &[TokenId],
    step: usize,
    prefix_beams: &[usize],
    m: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    if step == 0 || step > horizon || prefix_beams.len() != step - 1 {
        return Err(VlmError::Shape(crate::nn::NnError::Shape(format!(
            "step {step} of {horizon} with {} prefix beams",
            prefix_beams.len()
        ))));
    }
    if prefix_beams.iter().any(|&b| !(1..=m).contains(&b)) {
        return Err(VlmError::Format("prefix beam outside the codebook".into()));
    }
    lm.begin(frames, prompt_ids)?;
    for &b in prefix_beams {
        for t in tokenize(&format!("{b}, ")) {
            lm.push(t)?;
        }
    }
    let mut scores = vec![f64::NEG_INFINITY; m];
    score_trie(lm, 0, 0.0, m, step == horizon, &mut scores)?;
    Ok(scores)
}

struct LayerWeights<T> {
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
}

/// Decoding state of one request against a frozen [`BeamVlm`]: merged
/// projection weights plus a per-layer key/value cache.
pub struct VlmSession<'m, T: Real> {
    model: &'m BeamVlm<T>,
    weights: Vec<LayerWeights<T>>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
    prefix_len: usize,
    tokens: Vec<TokenId>,
    /// `logits[i]` follows the prefix and the first `i` appended tokens.
    logits: Vec<Vec<f32>>,
}

impl<'m, T: Real> VlmSession<'m, T> {
    pub fn new(model: &'m BeamVlm<T>) -> Result<Self> {
        let p = &model.params;
        let merge = |w: crate::nn::ParamId, l: Option<&crate::nn::lora::LoraParams>| -> Result<Tensor<T>> {
            let w0 = p.get(w);
            Ok(match l {
                None => w0.clone(),
                Some(l) => lora_merge(
                    w0,
                    &LoraAdapter { a: p.get(l.a).clone(), b: p.get(l.b).clone(), rank: l.rank, alpha: l.alpha },
                )?,
            })
        };
        let weights = model
            .ids
            .layers
            .iter()
            .map(|l| {
                Ok(LayerWeights {
                    wq: merge(l.attn.wq, l.attn.lora_q.as_ref())?,
                    wk: merge(l.attn.wk, l.attn.lora_k.as_ref())?,
                    wv: merge(l.attn.wv, l.attn.lora_v.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = model.ids.layers.len();
        Ok(Self {
            model,
            weights,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
            prefix_len: 0,
            tokens: Vec::new(),
            logits: Vec::new(),
        })
    }

    pub fn model(&self) -> &'m BeamVlm<T> {
        self.model
    }

    /// Positions currently held in the cache.
    pub fn cached_len(&self) -> usize {
        self.len
    }

    /// Runs `x` (`m × d_m`) at positions `len…len+m−1` through the decoder,
    /// extends the cache, and returns the last row's logits.
    fn forward_rows(&mut self, mut x: Tensor<T>) -> Result<Vec<f32>> {
        let model = self.model;
        let cfg = &model.config;
        let (d, heads, dh) = (cfg.d_model, cfg.heads, cfg.head_dim());
        let m = x.rows();
        let start = self.len;
        if start + m > cfg.max_context {
            return Err(VlmError::ContextOverflow { len: start + m, max: cfg.max_context });
        }
        let positions: Vec<usize> = (start..start + m).collect();
        let rope = RopeTable::<T>::new(&positions, dh);
        let scale = cfg.attention_scale.factor::<T>(d, heads);
        let p = &model.params;
        let mut normed = vec![T::zero(); m * d];
        let mut inv = vec![T::zero(); m];
        for (l, ids) in model.ids.layers.iter().enumerate() {
            let w = &self.weights[l];
            rmsnorm_forward(x.data(), p.get(ids.attn_norm).data(), d, &mut normed, &mut inv);
            let xn = Tensor::from_vec(&[m, d], normed.clone())?;
            let mut q = xn.matmul_t(&w.wq)?.into_data();
            let mut k = xn.matmul_t(&w.wk)?.into_data();
            let v = xn.matmul_t(&w.wv)?.into_data();
            rope.rotate(&mut q, heads, false);
            rope.rotate(&mut k, heads, false);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let nk = start + m;
            let mut ctx = vec![T::zero(); m * d];
            let mut probs = vec![T::zero(); heads * m * nk];
            attention_forward(
                &q,
                &self.keys[l],
                &self.values[l],
                m,
                nk,
                heads,
                dh,
                scale,
                Some(start),
                &mut ctx,
                &mut probs,
            );
            let o = Tensor::from_vec(&[m, d], ctx)?.matmul_t(p.get(ids.attn.wo))?;
            x = x.add(&o)?;
            rmsnorm_forward(x.data(), p.get(ids.ffn_norm).data(), d, &mut normed, &mut inv);
            let xn = Tensor::from_vec(&[m, d], normed.clone())?;
            let hidden = xn.matmul_t(p.get(ids.ffn_up))?.map(gelu);
            x = x.add(&hidden.matmul_t(p.get(ids.ffn_down))?)?;
        }
        self.len += m;
        let last = x.rows_slice(m - 1, m);
        let mut out = vec![T::zero(); d];
        rmsnorm_forward(last.data(), p.get(model.ids.final_norm).data(), d, &mut out, &mut inv[..1]);
        let logits = Tensor::from_vec(&[1, d], out)?.matmul_t(p.get(model.ids.lm_head))?;
        Ok(logits.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
    }

    /// Consumes an already-assembled prefix of input embeddings.
    pub fn begin_embeddings(&mut self, embeddings: Tensor<T>) -> Result<()> {
        for l in 0..self.keys.len() {
            self.keys[l].clear();
            self.values[l].clear();
        }
        self.len = 0;
        self.tokens.clear();
        self.logits.clear();
        let n = embeddings.rows();
        let logits = self.forward_rows(embeddings)?;
        self.prefix_len = n;
        self.logits.push(logits);
        Ok(())
    }
}

impl<T: Real> CausalLm for VlmSession<'_, T> {
    fn begin(&mut self, frames: &[GrayImage], prompt_ids: &[TokenId]) -> Result<()> {
        let model = self.model;
        let patches = frames_to_patches::<T>(frames, &model.config)?;
        let visual = model.embed_frames(&patches)?;
        let seq = model.assemble_sequence(&visual, prompt_ids, None)?;
        self.begin_embeddings(seq.embeddings)
    }

    fn push(&mut self, token: TokenId) -> Result<()> {
        let model = self.model;
        let table = model.params.get(model.ids.token_embedding);
        if token as usize >= table.rows() {
            return Err(VlmError::Format(format!("token {token} outside the vocabulary")));
        }
        let x = Tensor::from_vec(&[1, model.config.d_model], table.row(token as usize).to_vec())?;
        let logits = self.forward_rows(x)?;
        self.tokens.push(token);
        self.logits.push(logits);
        Ok(())
    }

    fn logits(&self) -> &[f32] {
        self.logits.last().expect("begin() must precede decoding")
    }

    fn generated(&self) -> &[TokenId] {
        &self.tokens
    }

    fn truncate(&mut self, n: usize) {
        if n >= self.tokens.len() {
            return;
        }
        self.tokens.truncate(n);
        self.logits.truncate(n + 1);
        self.len = self.prefix_len + n;
        let d = self.model.config.d_model;
        for l in 0..self.keys.len() {
            self.keys[l].truncate(self.len * d);
            self.values[l].truncate(self.len * d);
        }
    }
}

/// Forced-logit harness: logits are a function of the tokens appended so far.
pub struct ScriptedLm {
    script: Box<dyn Fn(&[TokenId]) -> Vec<f32> + Send + Sync>,
    tokens: Vec<TokenId>,
    logits: Vec<Vec<f32>>,
}

impl ScriptedLm {
    pub fn new(script: impl Fn(&[TokenId]) -> Vec<f32> + Send + Sync + 'static) -> Self {
        Self { script: Box::new(script), tokens: Vec::new(), logits: Vec::new() }
    }

    /// Logits that strongly prefer spelling `text` and then EOS, followed
    /// by EOS forever.
    pub fn spelling(text: &str) -> Self {
        let target: Vec<TokenId> = tokenize(text);
        Self::new(move |done| {
            let mut l = vec![0.0f32; crate::text::VOCAB_SIZE];
            let next =
                if done.len() < target.len() && done == &target[..done.len()] { target[done.len()] } else { EOS };
            l[next as usize] = 20.0;
            l
        })
    }
}

impl CausalLm for ScriptedLm {
    fn begin(&mut self, _frames: &[GrayImage], _prompt_ids: &[TokenId]) -> Result<()> {
        self.tokens.clear();
        self.logits = vec![(self.script)(&[])];
        Ok(())
    }

    fn push(&mut self, token: TokenId) -> Result<()> {
        self.tokens.push(token);
        self.logits.push((self.script)(&self.tokens));
        Ok(())
    }

    fn logits(&self) -> &[f32] {
        self.logits.last().expect("begin() must precede decoding")
    }

    fn generated(&self) -> &[TokenId] {
        &self.tokens
    }

    fn truncate(&mut self, n: usize) {
        if n < self.tokens.len() {
            self.tokens.truncate(n);
            self.logits.truncate(n + 1);
        }
    }
}
