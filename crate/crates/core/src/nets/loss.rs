use super::tensor::{softmax_channels, FeatureMap};
use crate::error::{Error, Result};
use crate::mask::PixelLabels;
use crate::scalar::Scalar;

/// Lower bound applied to the target-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-7;

fn check_target<S: Scalar>(probs: &FeatureMap<S>, target: &impl PixelLabels) -> Result<()> {
    let (h, w) = target.dims();
    if (h, w) != (probs.height, probs.width) {
        return Err(Error::Validation(format!(
            "target is {h}x{w}, prediction is {}x{}",
            probs.height, probs.width
        )));
    }
    if let Some(i) = (0..h * w).find(|&i| target.label(i) >= probs.channels) {
        return Err(Error::Validation(format!(
            "target class {} at pixel {i} outside {} channels",
            target.label(i),
            probs.channels
        )));
    }
    Ok(())
}

/// Mean over pixels of `-ln(max(p_target, PROB_FLOOR))`.
pub fn cross_entropy<S: Scalar>(probs: &FeatureMap<S>, target: &impl PixelLabels) -> Result<S> {
    check_target(probs, target)?;
    let n = probs.plane_len();
    if n == 0 {
        return Ok(S::zero());
    }
    let floor = S::from_f64_lossy(PROB_FLOOR);
    let total: S = (0..n).map(|i| -probs.data[target.label(i) * n + i].max(floor).ln()).sum();
    Ok(total / S::from_usize(n).expect("pixel count"))
}

/// Softmax cross-entropy on raw scores, averaged over the pixels selected by
/// `include` (all pixels when `None`). Returns the loss and its gradient with
/// respect to the scores.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &FeatureMap<S>,
    target: &impl PixelLabels,
    include: Option<&[bool]>,
) -> Result<(S, FeatureMap<S>)> {
    check_target(logits, target)?;
    let n = logits.plane_len();
    if let Some(inc) = include {
        if inc.len() != n {
            return Err(Error::Validation("loss region does not match prediction size".into()));
        }
    }
    let probs = softmax_channels(logits);
    let mut grad = FeatureMap::zeros(logits.channels, logits.height, logits.width);
    let selected: Vec<usize> = match include {
        Some(inc) => (0..n).filter(|&i| inc[i]).collect(),
        None => (0..n).collect(),
    };
    if selected.is_empty() {
        return Ok((S::zero(), grad));
    }
    let count = S::from_usize(selected.len()).expect("pixel count");
    let floor = S::from_f64_lossy(PROB_FLOOR);
    let mut total = S::zero();
    for &i in &selected {
        let t = target.label(i);
        let pt = probs.data[t * n + i];
        if pt < floor {
            // Clamped: the loss term is constant in the scores.
            total += -floor.ln();
            continue;
        }
        total += -pt.ln();
        for c in 0..logits.channels {
            let onehot = if c == t { S::one() } else { S::zero() };
            grad.data[c * n + i] = (probs.data[c * n + i] - onehot) / count;
        }
    }
    Ok((total / count, grad))
}
