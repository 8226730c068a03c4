use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::EncoderDecoder;
use super::layers::Params;
use super::loss::softmax_cross_entropy;
use super::optim::{OptimConfig, Optimizer};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ClassIndexMask};
use crate::scalar::Scalar;

/// A finite training set with a per-sample differentiable loss.
pub trait Objective<S: Scalar> {
    fn num_samples(&self) -> usize;

    /// Returns the loss of sample `index` and adds its gradient into `grads`.
    fn loss_and_grad(&self, params: &Params<S>, index: usize, grads: &mut Params<S>) -> Result<S>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    /// Mean mini-batch loss per optimizer step.
    pub losses: Vec<f64>,
}

/// Runs exactly `optim.max_iter` optimizer steps over seeded, epoch-wise
/// shuffled mini-batches.
pub fn fit<S: Scalar, O: Objective<S>>(
    params: &mut Params<S>,
    objective: &O,
    optim: &OptimConfig,
    seed: u64,
) -> Result<FitTrace> {
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut optimizer = Optimizer::new(optim.clone(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut grads = params.zeros_like();
    let batch = optim.batch_size;
    let inv_batch = S::one() / S::from_usize(batch).expect("batch size");
    let mut trace = FitTrace { losses: Vec::with_capacity(optim.max_iter) };
    for step in 0..optim.max_iter {
        grads.fill_zero();
        let mut total = S::zero();
        for _ in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            total += objective.loss_and_grad(params, order[cursor], &mut grads)?;
            cursor += 1;
        }
        let loss = total * inv_batch;
        if !loss.is_finite() {
            return Err(Error::Numeric { step: Some(step), detail: format!("training loss is {loss}") });
        }
        grads.scale(inv_batch);
        optimizer.step(params, &grads, step)?;
        trace.losses.push(loss.to_f64_lossy());
    }
    Ok(trace)
}

/// Per-pixel softmax cross-entropy of a segmenter against class-index targets.
pub struct SegObjective<'a, S> {
    pub arch: &'a EncoderDecoder,
    pub samples: Vec<(&'a FeatureMap<S>, &'a ClassIndexMask)>,
}

impl<S: Scalar> Objective<S> for SegObjective<'_, S> {
    fn num_samples(&self) -> usize {
        self.samples.len()
    }

    fn loss_and_grad(&self, params: &Params<S>, index: usize, grads: &mut Params<S>) -> Result<S> {
        let (image, target) = self.samples[index];
        let (logits, trace) = self.arch.forward_train(params, image);
        let (loss, grad) = softmax_cross_entropy(&logits, target, None)?;
        self.arch.backward(params, &trace, &grad, grads);
        Ok(loss)
    }
}

/// One generator training example: stacked input, object mask, and the
/// pixels that contribute to the loss.
#[derive(Debug, Clone)]
pub struct LpgSample<S> {
    pub input: FeatureMap<S>,
    pub target: BinaryMask,
    pub region: Vec<bool>,
}

/// Two-class cross-entropy of the generator, restricted to each sample's region.
pub struct LpgObjective<'a, S> {
    pub arch: &'a EncoderDecoder,
    pub samples: &'a [LpgSample<S>],
}

impl<S: Scalar> Objective<S> for LpgObjective<'_, S> {
    fn num_samples(&self) -> usize {
        self.samples.len()
    }

    fn loss_and_grad(&self, params: &Params<S>, index: usize, grads: &mut Params<S>) -> Result<S> {
        let s = &self.samples[index];
        let (logits, trace) = self.arch.forward_train(params, &s.input);
        let (loss, grad) = softmax_cross_entropy(&logits, &s.target, Some(&s.region))?;
        self.arch.backward(params, &trace, &grad, grads);
        Ok(loss)
    }
}
