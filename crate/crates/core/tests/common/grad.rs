//! Analytic gradients against central finite differences, in double precision.

use boxseed::mask::{BinaryMask, ClassBoxMap, ClassIndexMask, PixelLabels};
use boxseed::nets::arch::EncoderDecoder;
use boxseed::nets::{lpg_input, softmax_channels, softmax_cross_entropy, FeatureMap, Lpg, Params, SegNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-3;
pub const COORDS: usize = 20;

/// Mean `-ln p_target` over included pixels, computed from probabilities
/// rather than through the fused loss under test.
fn reference_loss(arch: &EncoderDecoder, params: &Params<f64>, x: &FeatureMap<f64>, t: &impl PixelLabels, inc: &[bool]) -> f64 {
    let probs = softmax_channels(&arch.forward(params, x));
    let n = probs.plane_len();
    let picked: Vec<f64> = (0..n).filter(|&i| inc[i]).map(|i| -probs.data[t.label(i) * n + i].ln()).collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn flat_mut(params: &mut Params<f64>, mut idx: usize) -> &mut f64 {
    for t in &mut params.tensors {
        if idx < t.data.len() {
            return &mut t.data[idx];
        }
        idx -= t.data.len();
    }
    panic!("index out of range")
}

pub fn check(arch: &EncoderDecoder, params: &Params<f64>, x: &FeatureMap<f64>, t: &impl PixelLabels, inc: &[bool], seed: u64) {
    let (logits, trace) = arch.forward_train(params, x);
    let (loss, grad_logits) = softmax_cross_entropy(&logits, t, Some(inc)).unwrap();
    let reference = reference_loss(arch, params, x, t, inc);
    assert!((loss - reference).abs() < 1e-12, "{loss} vs {reference}");
    let mut grads = params.zeros_like();
    arch.backward(params, &trace, &grad_logits, &mut grads);
    let analytic: Vec<f64> = grads.iter_values().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    for _ in 0..COORDS {
        let i = rng.random_range(0..analytic.len());
        let orig = *flat_mut(&mut probe, i);
        *flat_mut(&mut probe, i) = orig + STEP;
        let up = reference_loss(arch, &probe, x, t, inc);
        *flat_mut(&mut probe, i) = orig - STEP;
        let down = reference_loss(arch, &probe, x, t, inc);
        *flat_mut(&mut probe, i) = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[i] - numeric).abs() / scale;
        assert!(rel < MAX_REL_ERR, "param {i}: analytic {} numeric {numeric} rel {rel}", analytic[i]);
    }
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn segmenter(seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SegNet::<f64>::new(&[2, 3], 2, &mut rng).unwrap();
        assert!(net.params.num_values() <= 500, "{}", net.params.num_values());
        let x = random_map(&mut rng, 3, 4, 4);
        let t = ClassIndexMask::from_vec(4, 4, (0..16).map(|_| rng.random_range(0..3u8)).collect()).unwrap();
        check(net.arch(), &net.params, &x, &t, &[true; 16], seed + 100);
    }
}

pub fn generator(seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lpg = Lpg::<f64>::new(&[2, 3], &mut rng).unwrap();
        assert!(lpg.params.num_values() <= 500, "{}", lpg.params.num_values());
        let image = random_map(&mut rng, 3, 4, 4);
        let mut boxes = vec![false; 16];
        for y in 0..2 {
            for x in 0..2 {
                boxes[y * 4 + x] = true;
            }
        }
        let box_map = ClassBoxMap { class_id: 1, mask: BinaryMask::from_vec(4, 4, boxes).unwrap() };
        let prob: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = lpg_input(&image, &box_map, &prob).unwrap();
        let target = BinaryMask::from_vec(4, 4, (0..16).map(|_| rng.random_bool(0.5)).collect()).unwrap();
        let region = box_map.mask.dilate(1);
        assert!(region.count() < 16);
        check(lpg.arch(), &lpg.params, &x, &target, &region.data, seed + 200);
    }
}
