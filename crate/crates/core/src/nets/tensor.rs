use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense channel-major feature map (`C x H x W`, row-major inside a channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![S::zero(); channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Validation(format!(
                "feature map data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[S] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks the channels of `self` followed by those of `other`.
    pub fn concat(&self, other: &Self) -> Self {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self { channels: self.channels + other.channels, height: self.height, width: self.width, data }
    }

    pub fn cast<T: Scalar>(&self) -> FeatureMap<T> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Per-pixel softmax across channels.
pub fn softmax_channels<S: Scalar>(logits: &FeatureMap<S>) -> FeatureMap<S> {
    let n = logits.plane_len();
    let c = logits.channels;
    let mut out = FeatureMap::zeros(c, logits.height, logits.width);
    for p in 0..n {
        let mut max = S::neg_infinity();
        for k in 0..c {
            max = max.max(logits.data[k * n + p]);
        }
        let mut sum = S::zero();
        for k in 0..c {
            let e = (logits.data[k * n + p] - max).exp();
            out.data[k * n + p] = e;
            sum += e;
        }
        for k in 0..c {
            out.data[k * n + p] /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = FeatureMap::from_vec(3, 1, 2, vec![1.0f64, -5.0, 2.0, 0.0, 300.0, 4.0]).unwrap();
        let p = softmax_channels(&logits);
        for px in 0..2 {
            let s: f64 = (0..3).map(|c| p.data[c * 2 + px]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(p.is_finite());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(FeatureMap::<f32>::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
    }
}
