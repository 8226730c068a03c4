//! Multi-level encoder–decoder used for both networks.
//!
//! Level `l` runs two 3x3 convolutions at resolution `H / 2^l`; levels are
//! joined by 2x2 max pooling on the way down and nearest upsampling on the
//! way up. The decoder merges the upsampled path with the encoder feature
//! of the same level either by channel concatenation (U-Net style) or by
//! summing two convolution branches (hourglass style).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    max_pool2, max_pool2_backward, relu_backward, relu_inplace, upsample2, upsample2_backward, Conv, Params,
};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width per level, shallowest first.
    pub widths: Vec<usize>,
    pub skip: SkipMode,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("architecture widths must be non-empty and positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("architecture channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    a: Conv,
    b: Conv,
}

#[derive(Debug, Clone)]
enum DecoderLevel {
    Concat { conv: Conv },
    Add { up: Conv, skip: Conv },
}

#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    config: ArchConfig,
    encoder: Vec<EncoderLevel>,
    /// `decoder[l]` produces level `l` from level `l + 1`.
    decoder: Vec<DecoderLevel>,
    head: Conv,
}

struct EncoderTrace<S> {
    pool_idx: Option<Vec<u32>>,
    col_a: Vec<S>,
    act_a: FeatureMap<S>,
    col_b: Vec<S>,
    act_b: FeatureMap<S>,
}

enum DecoderTrace<S> {
    Concat { col: Vec<S>, act: FeatureMap<S> },
    Add { col_up: Vec<S>, col_skip: Vec<S>, act: FeatureMap<S> },
}

/// Activations retained by a training forward pass.
pub struct Trace<S> {
    encoder: Vec<EncoderTrace<S>>,
    decoder: Vec<Option<DecoderTrace<S>>>,
    head_col: Vec<S>,
}

impl EncoderDecoder {
    /// Builds the layer table and initial parameters.
    pub fn new<S: Scalar, R: Rng>(config: ArchConfig, rng: &mut R) -> Result<(Self, Params<S>)> {
        config.validate()?;
        let mut params = Params { tensors: Vec::new() };
        let mut encoder = Vec::new();
        let mut cin = config.in_channels;
        for (l, &w) in config.widths.iter().enumerate() {
            let a = Conv::register(&mut params, &format!("enc{l}.a"), cin, w, 3, false, rng);
            let b = Conv::register(&mut params, &format!("enc{l}.b"), w, w, 3, false, rng);
            encoder.push(EncoderLevel { a, b });
            cin = w;
        }
        let mut decoder = Vec::new();
        for l in 0..config.levels() - 1 {
            let (w, deeper) = (config.widths[l], config.widths[l + 1]);
            decoder.push(match config.skip {
                SkipMode::Concat => DecoderLevel::Concat {
                    conv: Conv::register(&mut params, &format!("dec{l}"), deeper + w, w, 3, false, rng),
                },
                SkipMode::Add => DecoderLevel::Add {
                    up: Conv::register(&mut params, &format!("dec{l}.up"), deeper, w, 3, false, rng),
                    skip: Conv::register(&mut params, &format!("dec{l}.skip"), w, w, 3, false, rng),
                },
            });
        }
        let head = Conv::register(&mut params, "head", config.widths[0], config.out_channels, 1, true, rng);
        Ok((Self { config, encoder, decoder, head }, params))
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn check_input<S: Scalar>(&self, input: &FeatureMap<S>) -> Result<()> {
        if input.channels != self.config.in_channels {
            return Err(Error::Config(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels, input.channels
            )));
        }
        let m = self.config.size_multiple();
        if input.height % m != 0 || input.width % m != 0 || input.height == 0 || input.width == 0 {
            return Err(Error::Validation(format!(
                "input size {}x{} is not a positive multiple of {m}",
                input.height, input.width
            )));
        }
        Ok(())
    }

    /// Checks that `params` has the layout this network was built with.
    pub fn check_params<S: Scalar>(&self, params: &Params<S>) -> Result<()> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (_, reference) = EncoderDecoder::new::<f32, _>(self.config.clone(), &mut rng)?;
        if reference.tensors.len() != params.tensors.len() {
            return Err(Error::Config(format!(
                "parameter set has {} arrays, architecture needs {}",
                params.tensors.len(),
                reference.tensors.len()
            )));
        }
        for (r, p) in reference.tensors.iter().zip(&params.tensors) {
            if r.name != p.name || r.shape != p.shape || r.data.len() != p.data.len() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, architecture needs {} {:?}",
                    p.name, p.shape, r.name, r.shape
                )));
            }
        }
        Ok(())
    }

    /// Raw output scores (logits).
    pub fn forward<S: Scalar>(&self, params: &Params<S>, input: &FeatureMap<S>) -> FeatureMap<S> {
        self.run(params, input, false).0
    }

    pub fn forward_train<S: Scalar>(&self, params: &Params<S>, input: &FeatureMap<S>) -> (FeatureMap<S>, Trace<S>) {
        let (out, trace) = self.run(params, input, true);
        (out, trace.expect("trace requested"))
    }

    fn run<S: Scalar>(
        &self,
        params: &Params<S>,
        input: &FeatureMap<S>,
        keep: bool,
    ) -> (FeatureMap<S>, Option<Trace<S>>) {
        let levels = self.config.levels();
        let mut enc_traces: Vec<EncoderTrace<S>> = Vec::with_capacity(levels);
        let mut enc_out: Vec<FeatureMap<S>> = Vec::with_capacity(levels);
        for (l, level) in self.encoder.iter().enumerate() {
            let (x, pool_idx) = if l == 0 {
                (None, None)
            } else {
                let (p, idx) = max_pool2(&enc_out[l - 1]);
                (Some(p), Some(idx))
            };
            let x_ref = x.as_ref().unwrap_or(input);
            let (mut act_a, col_a) = level.a.forward(params, x_ref);
            relu_inplace(&mut act_a);
            let (mut act_b, col_b) = level.b.forward(params, &act_a);
            relu_inplace(&mut act_b);
            if keep {
                enc_traces.push(EncoderTrace { pool_idx, col_a, act_a, col_b, act_b: act_b.clone() });
            }
            enc_out.push(act_b);
        }

        let mut dec_traces: Vec<Option<DecoderTrace<S>>> = (0..levels.saturating_sub(1)).map(|_| None).collect();
        let mut current = enc_out.pop().expect("at least one level");
        for l in (0..levels - 1).rev() {
            let up = upsample2(&current);
            let skip_feat = &enc_out[l];
            current = match &self.decoder[l] {
                DecoderLevel::Concat { conv } => {
                    let cat = up.concat(skip_feat);
                    let (mut act, col) = conv.forward(params, &cat);
                    relu_inplace(&mut act);
                    if keep {
                        dec_traces[l] = Some(DecoderTrace::Concat { col, act: act.clone() });
                    }
                    act
                }
                DecoderLevel::Add { up: up_conv, skip } => {
                    let (mut act, col_up) = up_conv.forward(params, &up);
                    let (s, col_skip) = skip.forward(params, skip_feat);
                    for (a, b) in act.data.iter_mut().zip(&s.data) {
                        *a += *b;
                    }
                    relu_inplace(&mut act);
                    if keep {
                        dec_traces[l] = Some(DecoderTrace::Add { col_up, col_skip, act: act.clone() });
                    }
                    act
                }
            };
        }
        let (logits, head_col) = self.head.forward(params, &current);
        let trace = keep.then(|| Trace { encoder: enc_traces, decoder: dec_traces, head_col });
        (logits, trace)
    }

    /// Backpropagates `grad_logits` and accumulates into `grads`.
    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        trace: &Trace<S>,
        grad_logits: &FeatureMap<S>,
        grads: &mut Params<S>,
    ) {
        let levels = self.config.levels();
        let mut enc_grads: Vec<FeatureMap<S>> = trace
            .encoder
            .iter()
            .map(|t| FeatureMap::zeros(t.act_b.channels, t.act_b.height, t.act_b.width))
            .collect();

        let mut grad = self.head.backward(params, &trace.head_col, grad_logits, grads, true).expect("input grad");

        for l in 0..levels - 1 {
            let dec_trace = trace.decoder[l].as_ref().expect("decoder trace");
            let grad_up = match (&self.decoder[l], dec_trace) {
                (DecoderLevel::Concat { conv }, DecoderTrace::Concat { col, act }) => {
                    relu_backward(act, &mut grad);
                    let g_cat = conv.backward(params, col, &grad, grads, true).expect("input grad");
                    let deeper = self.config.widths[l + 1];
                    let n = g_cat.plane_len();
                    let (g_up, g_skip) = g_cat.data.split_at(deeper * n);
                    for (a, b) in enc_grads[l].data.iter_mut().zip(g_skip) {
                        *a += *b;
                    }
                    FeatureMap {
                        channels: deeper,
                        height: g_cat.height,
                        width: g_cat.width,
                        data: g_up.to_vec(),
                    }
                }
                (DecoderLevel::Add { up, skip }, DecoderTrace::Add { col_up, col_skip, act }) => {
                    relu_backward(act, &mut grad);
                    let g_skip = skip.backward(params, col_skip, &grad, grads, true).expect("input grad");
                    for (a, b) in enc_grads[l].data.iter_mut().zip(&g_skip.data) {
                        *a += *b;
                    }
                    up.backward(params, col_up, &grad, grads, true).expect("input grad")
                }
                _ => unreachable!("trace kind matches decoder kind"),
            };
            grad = upsample2_backward(&grad_up);
        }
        // `grad` now holds the gradient of the deepest encoder output.
        let deepest = levels - 1;
        for (a, b) in enc_grads[deepest].data.iter_mut().zip(&grad.data) {
            *a += *b;
        }

        for l in (0..levels).rev() {
            let t = &trace.encoder[l];
            let level = &self.encoder[l];
            let mut g = std::mem::replace(&mut enc_grads[l], FeatureMap::zeros(0, 0, 0));
            relu_backward(&t.act_b, &mut g);
            let mut g_a = level.b.backward(params, &t.col_b, &g, grads, true).expect("input grad");
            relu_backward(&t.act_a, &mut g_a);
            let g_in = level.a.backward(params, &t.col_a, &g_a, grads, l > 0);
            if let (Some(g_in), Some(idx)) = (g_in, t.pool_idx.as_ref()) {
                max_pool2_backward(&g_in, idx, &mut enc_grads[l - 1]);
            }
        }
    }
}
