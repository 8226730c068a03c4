//! Parameter storage and the handful of differentiable primitives the
//! networks are built from: same-padded convolution, ReLU, 2x2 max pooling
//! and nearest-neighbour 2x upsampling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::FeatureMap;
use crate::scalar::Scalar;

/// Learning-rate group of a parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    HeadWeight,
    HeadBias,
    LastWeight,
    LastBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] =
        [ParamGroup::HeadWeight, ParamGroup::HeadBias, ParamGroup::LastWeight, ParamGroup::LastBias];

    pub fn is_bias(self) -> bool {
        matches!(self, ParamGroup::HeadBias | ParamGroup::LastBias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: Vec<S>,
}

/// Named parameter arrays of one network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    pub tensors: Vec<ParamTensor<S>>,
}

impl<S: Scalar> Params<S> {
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    group: t.group,
                    data: vec![S::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<S>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    group: t.group,
                    data: t.data.iter().map(|v| T::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    /// Flat view of every value, in tensor order.
    pub fn iter_values(&self) -> impl Iterator<Item = &S> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }
}

/// A 2-D convolution with stride 1 and "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    /// Appends freshly initialized weight and bias arrays to `params`.
    pub fn register<S: Scalar, R: Rng>(
        params: &mut Params<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        last: bool,
        rng: &mut R,
    ) -> Conv {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = out_channels * fan_in;
        let weights = (0..n).map(|_| S::from_f64_lossy(normal.sample(rng))).collect();
        let (wg, bg) = if last {
            (ParamGroup::LastWeight, ParamGroup::LastBias)
        } else {
            (ParamGroup::HeadWeight, ParamGroup::HeadBias)
        };
        let weight = params.tensors.len();
        params.tensors.push(ParamTensor {
            name: format!("{name}.weight"),
            shape: vec![out_channels, in_channels, kernel, kernel],
            group: wg,
            data: weights,
        });
        params.tensors.push(ParamTensor {
            name: format!("{name}.bias"),
            shape: vec![out_channels],
            group: bg,
            data: vec![S::zero(); out_channels],
        });
        Conv { weight, bias: weight + 1, in_channels, out_channels, kernel }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Returns the pre-activation output and the unfolded input needed by
    /// [`Conv::backward`].
    pub fn forward<S: Scalar>(&self, params: &Params<S>, input: &FeatureMap<S>) -> (FeatureMap<S>, Vec<S>) {
        assert_eq!(input.channels, self.in_channels, "conv input channel mismatch");
        let (h, w) = (input.height, input.width);
        let hw = h * w;
        let col = if self.kernel == 1 { input.data.clone() } else { im2col(input, self.kernel) };
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        let bias = &params.tensors[self.bias].data;
        for (o, b) in bias.iter().enumerate() {
            out.data[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
        }
        let k = self.patch_len();
        S::gemm(
            self.out_channels,
            k,
            hw,
            S::one(),
            &params.tensors[self.weight].data,
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            S::one(),
            &mut out.data,
            (hw as isize, 1),
        );
        (out, col)
    }

    /// Accumulates parameter gradients into `grads` and, when requested,
    /// returns the gradient with respect to the input.
    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        col: &[S],
        grad_out: &FeatureMap<S>,
        grads: &mut Params<S>,
        need_input_grad: bool,
    ) -> Option<FeatureMap<S>> {
        let (h, w) = (grad_out.height, grad_out.width);
        let hw = h * w;
        let k = self.patch_len();
        S::gemm(
            self.out_channels,
            hw,
            k,
            S::one(),
            &grad_out.data,
            (hw as isize, 1),
            col,
            (1, hw as isize),
            S::one(),
            &mut grads.tensors[self.weight].data,
            (k as isize, 1),
        );
        let gb = &mut grads.tensors[self.bias].data;
        for (o, g) in gb.iter_mut().enumerate() {
            *g += grad_out.data[o * hw..(o + 1) * hw].iter().copied().sum::<S>();
        }
        if !need_input_grad {
            return None;
        }
        let mut dcol = vec![S::zero(); k * hw];
        S::gemm(
            k,
            self.out_channels,
            hw,
            S::one(),
            &params.tensors[self.weight].data,
            (1, k as isize),
            &grad_out.data,
            (hw as isize, 1),
            S::zero(),
            &mut dcol,
            (hw as isize, 1),
        );
        if self.kernel == 1 {
            return Some(FeatureMap { channels: self.in_channels, height: h, width: w, data: dcol });
        }
        Some(col2im(&dcol, self.in_channels, h, w, self.kernel))
    }
}

fn im2col<S: Scalar>(input: &FeatureMap<S>, kernel: usize) -> Vec<S> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let hw = h * w;
    let r = (kernel / 2) as isize;
    let mut col = vec![S::zero(); c * kernel * kernel * hw];
    let mut row = 0;
    for ci in 0..c {
        let plane = input.channel(ci);
        for ky in 0..kernel as isize {
            for kx in 0..kernel as isize {
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky - r;
                let dx = kx - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src_row[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im<S: Scalar>(dcol: &[S], channels: usize, h: usize, w: usize, kernel: usize) -> FeatureMap<S> {
    let hw = h * w;
    let r = (kernel / 2) as isize;
    let mut out = FeatureMap::zeros(channels, h, w);
    let mut row = 0;
    for ci in 0..channels {
        let plane = out.channel_mut(ci);
        for ky in 0..kernel as isize {
            for kx in 0..kernel as isize {
                let src = &dcol[row * hw..(row + 1) * hw];
                let dy = ky - r;
                let dx = kx - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let dst_row = &mut plane[sy as usize * w + sx_lo..sy as usize * w + sx_lo + (x_hi - x_lo)];
                    for (d, s) in dst_row.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

pub fn relu_inplace<S: Scalar>(x: &mut FeatureMap<S>) {
    x.data.iter_mut().for_each(|v| {
        if *v < S::zero() {
            *v = S::zero()
        }
    });
}

/// Zeroes `grad` wherever the (post-activation) output was not positive.
pub fn relu_backward<S: Scalar>(output: &FeatureMap<S>, grad: &mut FeatureMap<S>) {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= S::zero() {
            *g = S::zero();
        }
    }
}

/// 2x2 max pooling with stride 2; returns the flat argmax index per output.
pub fn max_pool2<S: Scalar>(x: &FeatureMap<S>) -> (FeatureMap<S>, Vec<u32>) {
    let (h2, w2) = (x.height / 2, x.width / 2);
    let mut out = FeatureMap::zeros(x.channels, h2, w2);
    let mut idx = vec![0u32; x.channels * h2 * w2];
    for c in 0..x.channels {
        let base = c * x.height * x.width;
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = base + 2 * y * x.width + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * x.width + 2 * xx + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = (c * h2 + y) * w2 + xx;
                out.data[o] = x.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn max_pool2_backward<S: Scalar>(grad_out: &FeatureMap<S>, idx: &[u32], into: &mut FeatureMap<S>) {
    for (g, &i) in grad_out.data.iter().zip(idx) {
        into.data[i as usize] += *g;
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<S: Scalar>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let srow = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            for (xx, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(grad_out: &FeatureMap<S>) -> FeatureMap<S> {
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut out = FeatureMap::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        let src = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                dst[(y / 2) * w + x / 2] += src[y * grad_out.width + x];
            }
        }
    }
    out
}
