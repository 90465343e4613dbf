//! Multi-head causal attention with rotary positions and optional LoRA on
//! the query/key/value projections.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::kernels::{attention_forward, RopeTable};
use super::lora::{lora_linear, LoraParams};
use super::{shape_err, Graph, ParamId, Result, Tensor, Var};
use crate::math::Real;

/// Denominator of the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `1/√d_h`, the per-head dimension.
    #[default]
    PerHead,
    /// `1/√d_m`, the full model width.
    ModelWidth,
}

impl AttentionScale {
    pub fn factor<T: Real>(self, d_model: usize, heads: usize) -> T {
        let d = match self {
            AttentionScale::PerHead => d_model / heads,
            AttentionScale::ModelWidth => d_model,
        };
        T::one() / T::lit(d as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<T> {
    /// `n × d_m`, after the output projection.
    pub output: Tensor<T>,
    /// Per-head `n × n` softmax weights.
    pub weights: Vec<Tensor<T>>,
}

/// Rotary multi-head attention on already-projected `q`, `k`, `v`
/// (`n × d_m` each), positions `0…n−1`, followed by `· woᵀ`.
pub fn attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    wo: &Tensor<T>,
    heads: usize,
    causal: bool,
    scale: AttentionScale,
) -> Result<AttentionOutput<T>> {
    let (n, d) = (q.rows(), q.cols());
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(shape_err!("attention q{:?} k{:?} v{:?}", q.shape(), k.shape(), v.shape()));
    }
    if heads == 0 || d % heads != 0 || !(d / heads).is_multiple_of(2) {
        return Err(shape_err!("width {d} not divisible into {heads} even-sized heads"));
    }
    if wo.shape() != [d, d] {
        return Err(shape_err!("output projection {:?} for width {d}", wo.shape()));
    }
    let positions: Vec<usize> = (0..n).collect();
    let table = RopeTable::new(&positions, d / heads);
    let (mut qr, mut kr) = (q.clone(), k.clone());
    table.rotate(qr.data_mut(), heads, false);
    table.rotate(kr.data_mut(), heads, false);
    let mut ctx = Tensor::zeros(&[n, d]);
    let mut probs = vec![T::zero(); heads * n * n];
    attention_forward(
        qr.data(),
        kr.data(),
        v.data(),
        n,
        n,
        heads,
        d / heads,
        scale.factor(d, heads),
        causal.then_some(0),
        ctx.data_mut(),
        &mut probs,
    );
    let weights =
        probs.chunks_exact(n * n).map(|p| Tensor::from_vec(&[n, n], p.to_vec())).collect::<Result<Vec<_>>>()?;
    Ok(AttentionOutput { output: ctx.matmul_t(wo)?, weights })
}

/// Parameter handles of one attention layer. Adapters, when present, sit on
/// Q, K and V only.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub lora_q: Option<LoraParams>,
    pub lora_k: Option<LoraParams>,
    pub lora_v: Option<LoraParams>,
}

impl AttentionBlock {
    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Causal self-attention of `x` (`n × d_m`) at the given positions.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        positions: &[usize],
        scale: AttentionScale,
    ) -> Result<Var> {
        let q = lora_linear(g, x, self.wq, self.lora_q.as_ref())?;
        let k = lora_linear(g, x, self.wk, self.lora_k.as_ref())?;
        let v = lora_linear(g, x, self.wv, self.lora_v.as_ref())?;
        let q = g.rope(q, positions, self.heads)?;
        let k = g.rope(k, positions, self.heads)?;
        let ctx = g.attention(q, k, v, self.heads, scale.factor(self.d_model(), self.heads))?;
        let wo = g.param(self.wo);
        g.matmul(ctx, wo, true)
    }
}
