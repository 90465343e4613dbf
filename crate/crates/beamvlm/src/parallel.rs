//! Evaluation fanned out over threads. Samples are split into contiguous
//! chunks and the rankings are concatenated in order, so the resulting
//! table does not depend on the thread count.

use beamvlm_core::eval::{MetricsTable, Predictor, RankedPrediction};
use beamvlm_core::math::Real;
use beamvlm_core::scene::Sample;
use beamvlm_core::train::{GradExecutor, SampleGrad};

use crate::Result;

/// Ranks `samples` with one predictor per thread and returns the rankings
/// in sample order together with the predictors (for their counters).
pub fn rank_samples<P, F>(make: F, samples: &[Sample], threads: usize) -> Result<(Vec<RankedPrediction>, Vec<P>)>
where
    P: Predictor + Send,
    F: Fn() -> Result<P> + Sync,
{
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        let mut p = make()?;
        let ranks = samples.iter().map(|s| p.rank(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        return Ok((ranks, vec![p]));
    }
    let chunk = samples.len().div_ceil(threads);
    let results: Vec<Result<(Vec<RankedPrediction>, P)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                let make = &make;
                scope.spawn(move || -> Result<(Vec<RankedPrediction>, P)> {
                    let mut p = make()?;
                    let ranks = part.iter().map(|s| p.rank(s)).collect::<std::result::Result<Vec<_>, _>>()?;
                    Ok((ranks, p))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut ranks = Vec::with_capacity(samples.len());
    let mut predictors = Vec::with_capacity(results.len());
    for r in results {
        let (part, p) = r?;
        ranks.extend(part);
        predictors.push(p);
    }
    Ok((ranks, predictors))
}

pub fn evaluate_parallel<P, F>(
    make: F,
    samples: &[Sample],
    ks: &[usize],
    threads: usize,
) -> Result<(MetricsTable, Vec<P>)>
where
    P: Predictor + Send,
    F: Fn() -> Result<P> + Sync,
{
    let (ranks, predictors) = rank_samples(make, samples, threads)?;
    let labels: Vec<Vec<usize>> = samples.iter().map(|s| s.target_beams.clone()).collect();
    Ok((MetricsTable::from_predictions(&ranks, &labels, ks)?, predictors))
}

/// Per-sample gradients on up to `threads` scoped threads. Results come back
/// in sample order and the caller reduces them sequentially, so training is
/// bit-identical for every thread count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedGrads {
    pub threads: usize,
}

impl<T: Real> GradExecutor<T> for ThreadedGrads {
    fn run(&self, n: usize, f: &(dyn Fn(usize) -> SampleGrad<T> + Sync)) -> Vec<SampleGrad<T>> {
        let threads = self.threads.clamp(1, n.max(1));
        if threads == 1 {
            return (0..n).map(f).collect();
        }
        let chunk = n.div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|lo| scope.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("gradient worker panicked")).collect()
        })
    }
}
