use alloc::vec::Vec;

use super::kernels::RopeTable;
use super::{shape_err, Result, Tensor};
use crate::math::Real;

/// Rotary embedding of a single head: row `r` is rotated pairwise by
/// `positions[r]·θᵢ`.
pub fn rope_apply<T: Real>(x: &Tensor<T>, positions: &[usize]) -> Result<Tensor<T>> {
    let dh = x.cols();
    if !dh.is_multiple_of(2) {
        return Err(shape_err!("rotary embedding needs an even head dimension, got {dh}"));
    }
    if positions.len() != x.rows() {
        return Err(shape_err!("{} positions for {} rows", positions.len(), x.rows()));
    }
    let mut out = x.clone();
    RopeTable::new(positions, dh).rotate(out.data_mut(), 1, false);
    Ok(out)
}

pub fn sequential_positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}
