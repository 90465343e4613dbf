//! Low-rank adapters: `W = W₀ + (α/r)·B·A` with `B` zero-initialized.

use rand::Rng;

use super::{shape_err, Graph, ParamId, Result, Tensor, Var};
use crate::math::Real;

/// Default rank and scaling.
pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    /// `r × d_in`
    pub a: Tensor<T>,
    /// `d_out × r`
    pub b: Tensor<T>,
    pub rank: usize,
    pub alpha: f64,
}

impl<T: Real> LoraAdapter<T> {
    /// Fresh adapter: `A ~ N(0, 1/r²)`, `B = 0`.
    pub fn new<R: Rng + ?Sized>(d_out: usize, d_in: usize, rank: usize, alpha: f64, rng: &mut R) -> Self {
        assert!(rank >= 1 && rank <= d_in.min(d_out), "LoRA rank must lie in 1..=d");
        Self { a: Tensor::randn(&[rank, d_in], 1.0 / rank as f64, rng), b: Tensor::zeros(&[d_out, rank]), rank, alpha }
    }

    pub fn scaling(&self) -> T {
        T::lit(self.alpha / self.rank as f64)
    }

    fn check(&self, w0: &Tensor<T>) -> Result<()> {
        let (d_out, d_in) = (w0.rows(), w0.cols());
        if self.a.shape() != [self.rank, d_in] || self.b.shape() != [d_out, self.rank] {
            return Err(shape_err!(
                "adapter A{:?} B{:?} does not fit weight {:?}",
                self.a.shape(),
                self.b.shape(),
                w0.shape()
            ));
        }
        Ok(())
    }
}

/// `W₀ + (α/r)·B·A`.
pub fn lora_merge<T: Real>(w0: &Tensor<T>, adapter: &LoraAdapter<T>) -> Result<Tensor<T>> {
    adapter.check(w0)?;
    let mut out = w0.clone();
    out.add_scaled_(&adapter.b.matmul(&adapter.a)?, adapter.scaling());
    Ok(out)
}

/// `x·(W₀ + (α/r)·B·A)ᵀ`, evaluated through the low-rank path.
pub fn lora_forward<T: Real>(x: &Tensor<T>, w0: &Tensor<T>, adapter: Option<&LoraAdapter<T>>) -> Result<Tensor<T>> {
    let mut y = x.matmul_t(w0)?;
    if let Some(ad) = adapter {
        ad.check(w0)?;
        let low = x.matmul_t(&ad.a)?.matmul_t(&ad.b)?;
        y.add_scaled_(&low, ad.scaling());
    }
    Ok(y)
}

/// Parameter handles of an adapter living in a `ParamStore`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraParams {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

/// Graph version of [`lora_forward`]; `w0` is stored `(out, in)`.
pub fn lora_linear<T: Real>(g: &mut Graph<'_, T>, x: Var, w0: ParamId, lora: Option<&LoraParams>) -> Result<Var> {
    let w = g.param(w0);
    let y = g.matmul(x, w, true)?;
    match lora {
        None => Ok(y),
        Some(l) => {
            let a = g.param(l.a);
            let b = g.param(l.b);
            let xa = g.matmul(x, a, true)?;
            let low = g.matmul(xa, b, true)?;
            let low = g.scale(low, T::lit(l.alpha / l.rank as f64));
            g.add(y, low)
        }
    }
}
