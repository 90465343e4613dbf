use super::kernels::log_softmax_row;
use super::{shape_err, NnError, Result, Tensor};
use crate::math::Real;

/// Mean over unmasked rows of `−log softmax(logits[i])[targets[i]]`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize], mask: &[bool]) -> Result<T> {
    let n = logits.rows();
    if targets.len() != n || mask.len() != n {
        return Err(shape_err!("{n} logit rows, {} targets, {} mask entries", targets.len(), mask.len()));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for r in (0..n).filter(|&r| mask[r]) {
        let t = targets[r];
        if t >= logits.cols() {
            return Err(shape_err!("target {t} outside vocabulary {}", logits.cols()));
        }
        total -= log_softmax_row(logits.row(r))[t];
        count += 1;
    }
    if count == 0 {
        return Err(NnError::EmptyMask);
    }
    Ok(total / T::lit(count as f64))
}
