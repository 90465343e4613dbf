//! Finite-difference check of the analytic gradients of the
//! teacher-forced loss, one relative error per parameter tensor.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{BeamVlm, Result};
use crate::math::Real;
use crate::nn::{Graph, Tensor};
use crate::rng::seeded;
use crate::text::TokenId;

/// Agreement between analytic and central-difference gradients over the
/// sampled coordinates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub coords: usize,
    /// `‖g_a − g_n‖ / max(‖g_a‖ + ‖g_n‖, floor)` over the sampled coordinates.
    pub rel_err: f64,
    pub analytic_norm: f64,
}

fn loss_of<T: Real>(model: &BeamVlm<T>, patches: &Tensor<T>, prompt: &[TokenId], answer: &[TokenId]) -> Result<T> {
    let mut g = Graph::new(&model.params);
    let l = model.loss_graph(&mut g, patches, prompt, answer)?;
    Ok(g.scalar(l))
}

/// Compares gradients of every trainable tensor at `coords` random
/// coordinates (all of them when the tensor is smaller).
pub fn gradient_check<T: Real>(
    model: &mut BeamVlm<T>,
    patches: &Tensor<T>,
    prompt: &[TokenId],
    answer: &[TokenId],
    coords: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<GroupCheck>> {
    let analytic = {
        let mut g = Graph::new(&model.params);
        let l = model.loss_graph(&mut g, patches, prompt, answer)?;
        g.backward(l)?
    };
    let mut rng = seeded(seed);
    let ids: Vec<_> = model.params.ids().filter(|&id| model.params.is_trainable(id)).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let grad = analytic.get(id)?.clone();
        let n = grad.len();
        let picks: Vec<usize> =
            if n <= coords { (0..n).collect() } else { (0..coords).map(|_| rng.random_range(0..n)).collect() };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = model.params.get(id).data()[i];
            model.params.get_mut(id).data_mut()[i] = orig + T::lit(eps);
            let up = loss_of(model, patches, prompt, answer)?.to_f64().unwrap_or(f64::NAN);
            model.params.get_mut(id).data_mut()[i] = orig - T::lit(eps);
            let down = loss_of(model, patches, prompt, answer)?.to_f64().unwrap_or(f64::NAN);
            model.params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i].to_f64().unwrap_or(f64::NAN);
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        let (diff, na, nn) = (libm::sqrt(diff), libm::sqrt(na), libm::sqrt(nn));
        out.push(GroupCheck {
            name: model.params.name(id).into(),
            coords: picks.len(),
            rel_err: diff / (na + nn).max(1e-10),
            analytic_norm: na,
        });
    }
    Ok(out)
}
