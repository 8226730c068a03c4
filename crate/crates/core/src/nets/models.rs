//! The segmentation network `f(x; θ)` and the class-agnostic pseudo-mask
//! generator `g(box map, x, f(x); ω)`.

use rand::Rng;

use super::arch::{ArchConfig, EncoderDecoder, SkipMode};
use super::layers::Params;
use super::tensor::{softmax_channels, FeatureMap};
use crate::error::{Error, Result};
use crate::mask::{ClassBoxMap, ClassIndexMask};
use crate::scalar::Scalar;

/// Image (3) + class box map (1) + class probability slice (1).
pub const LPG_INPUT_CHANNELS: usize = 5;
pub const IMAGE_CHANNELS: usize = 3;

/// Per-pixel probabilities over `num_classes + 1` classes (channel 0 is
/// background).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbMap<S>(pub FeatureMap<S>);

impl<S: Scalar> ClassProbMap<S> {
    pub fn num_classes(&self) -> usize {
        self.0.channels - 1
    }

    pub fn slice(&self, class_id: u8) -> Result<&[S]> {
        if class_id as usize >= self.0.channels {
            return Err(Error::Validation(format!(
                "class {class_id} outside probability map with {} channels",
                self.0.channels
            )));
        }
        Ok(self.0.channel(class_id as usize))
    }

    /// Per-pixel argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> ClassIndexMask {
        let fm = &self.0;
        let n = fm.plane_len();
        let data = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..fm.channels {
                    if fm.data[c * n + i] > fm.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        ClassIndexMask { height: fm.height, width: fm.width, data }
    }
}

/// Raw two-channel generator output; channel 0 scores background, channel 1
/// the object inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoChannelScore<S>(pub FeatureMap<S>);

impl<S: Scalar> TwoChannelScore<S> {
    pub fn softmax(&self) -> FeatureMap<S> {
        softmax_channels(&self.0)
    }
}

fn non_finite(what: &str, fm: &FeatureMap<impl Scalar>) -> Error {
    let bad = fm.data.iter().filter(|v| !v.is_finite()).count();
    Error::Numeric { step: None, detail: format!("{what} produced {bad} non-finite values of {}", fm.data.len()) }
}

/// Encoder–decoder segmentation network.
#[derive(Debug, Clone)]
pub struct SegNet<S> {
    arch: EncoderDecoder,
    pub params: Params<S>,
}

impl<S: Scalar> SegNet<S> {
    pub fn arch_config(widths: &[usize], num_classes: usize) -> ArchConfig {
        ArchConfig {
            in_channels: IMAGE_CHANNELS,
            out_channels: num_classes + 1,
            widths: widths.to_vec(),
            skip: SkipMode::Concat,
        }
    }

    pub fn new<R: Rng>(widths: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        let (arch, params) = EncoderDecoder::new(Self::arch_config(widths, num_classes), rng)?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(config: ArchConfig, params: Params<S>) -> Result<Self> {
        if config.in_channels != IMAGE_CHANNELS || config.out_channels < 2 {
            return Err(Error::Config(format!(
                "segmenter needs {IMAGE_CHANNELS} inputs and at least 2 outputs, got {} / {}",
                config.in_channels, config.out_channels
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (arch, _) = EncoderDecoder::new::<S, _>(config, &mut rng)?;
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &EncoderDecoder {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.config().out_channels - 1
    }
}

pub fn seg_forward<S: Scalar>(image: &FeatureMap<S>, net: &SegNet<S>) -> Result<ClassProbMap<S>> {
    net.arch.check_input(image)?;
    let logits = net.arch.forward(&net.params, image);
    let probs = softmax_channels(&logits);
    if !probs.is_finite() {
        return Err(non_finite("segmenter", &probs));
    }
    Ok(ClassProbMap(probs))
}

/// Hourglass-style pseudo-mask generator. It never sees a class id.
#[derive(Debug, Clone)]
pub struct Lpg<S> {
    arch: EncoderDecoder,
    pub params: Params<S>,
}

impl<S: Scalar> Lpg<S> {
    pub fn arch_config(widths: &[usize]) -> ArchConfig {
        ArchConfig { in_channels: LPG_INPUT_CHANNELS, out_channels: 2, widths: widths.to_vec(), skip: SkipMode::Add }
    }

    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let (arch, params) = EncoderDecoder::new(Self::arch_config(widths), rng)?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(config: ArchConfig, params: Params<S>) -> Result<Self> {
        if config.in_channels != LPG_INPUT_CHANNELS || config.out_channels != 2 {
            return Err(Error::Config(format!(
                "generator needs {LPG_INPUT_CHANNELS} inputs and 2 outputs, got {} / {}",
                config.in_channels, config.out_channels
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (arch, _) = EncoderDecoder::new::<S, _>(config, &mut rng)?;
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &EncoderDecoder {
        &self.arch
    }
}

/// Stacks `[image, box map, class probability]` into the generator input.
pub fn lpg_input<S: Scalar>(image: &FeatureMap<S>, box_map: &ClassBoxMap, class_prob: &[S]) -> Result<FeatureMap<S>> {
    let (h, w) = (image.height, image.width);
    if image.channels != IMAGE_CHANNELS {
        return Err(Error::Config(format!("image has {} channels, expected {IMAGE_CHANNELS}", image.channels)));
    }
    if (box_map.mask.height, box_map.mask.width) != (h, w) || class_prob.len() != h * w {
        return Err(Error::Validation("generator inputs do not share spatial dimensions".into()));
    }
    let mut data = Vec::with_capacity(LPG_INPUT_CHANNELS * h * w);
    data.extend_from_slice(&image.data);
    data.extend(box_map.mask.data.iter().map(|&b| if b { S::one() } else { S::zero() }));
    data.extend_from_slice(class_prob);
    FeatureMap::from_vec(LPG_INPUT_CHANNELS, h, w, data)
}

pub fn lpg_forward<S: Scalar>(
    image: &FeatureMap<S>,
    box_map: &ClassBoxMap,
    class_prob: &[S],
    lpg: &Lpg<S>,
) -> Result<TwoChannelScore<S>> {
    let input = lpg_input(image, box_map, class_prob)?;
    lpg_forward_stacked(&input, lpg)
}

fn lpg_forward_stacked<S: Scalar>(input: &FeatureMap<S>, lpg: &Lpg<S>) -> Result<TwoChannelScore<S>> {
    lpg.arch.check_input(input)?;
    let scores = lpg.arch.forward(&lpg.params, input);
    if !scores.is_finite() {
        return Err(non_finite("generator", &scores));
    }
    Ok(TwoChannelScore(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{psi, BinaryMask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image(h: usize, w: usize) -> FeatureMap<f32> {
        FeatureMap::from_vec(3, h, w, (0..3 * h * w).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect())
            .unwrap()
    }

    #[test]
    fn seg_output_is_normalized_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SegNet::<f32>::new(&[4, 8, 8], 3, &mut rng).unwrap();
        let img = test_image(16, 16);
        let a = seg_forward(&img, &net).unwrap();
        let b = seg_forward(&img, &net).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.0.channels, a.0.height, a.0.width), (4, 16, 16));
        assert!(a.0.is_finite());
        for p in 0..256 {
            let s: f32 = (0..4).map(|c| a.0.data[c * 256 + p]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn seg_rejects_bad_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SegNet::<f32>::new(&[4, 8, 8], 3, &mut rng).unwrap();
        assert!(seg_forward(&test_image(10, 16), &net).is_err());
    }

    #[test]
    fn lpg_output_shape_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lpg = Lpg::<f32>::new(&[4, 8], &mut rng).unwrap();
        let img = test_image(8, 8);
        let bm = ClassBoxMap { class_id: 1, mask: BinaryMask::zeros(8, 8) };
        let score = lpg_forward(&img, &bm, &[0.5; 64], &lpg).unwrap();
        assert_eq!((score.0.channels, score.0.height, score.0.width), (2, 8, 8));
        let p = score.softmax();
        for i in 0..64 {
            assert!((p.data[i] + p.data[64 + i] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zeroed_lpg_gives_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lpg = Lpg::<f32>::new(&[4, 8], &mut rng).unwrap();
        lpg.params.fill_zero();
        let img = test_image(8, 8);
        let bm = ClassBoxMap { class_id: 1, mask: BinaryMask::from_vec(8, 8, vec![true; 64]).unwrap() };
        let score = lpg_forward(&img, &bm, &[0.9; 64], &lpg).unwrap();
        assert_eq!(score.0.channel(0), score.0.channel(1));
        assert_eq!(psi(&score.softmax()).unwrap().count(), 0);
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let uniform = ClassProbMap(FeatureMap::from_vec(3, 1, 2, vec![1.0f32 / 3.0; 6]).unwrap());
        assert_eq!(uniform.argmax().data, vec![0, 0]);
    }

    #[test]
    fn from_parts_checks_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SegNet::<f32>::new(&[4, 8], 2, &mut rng).unwrap();
        assert!(SegNet::from_parts(net.arch().config().clone(), net.params.clone()).is_ok());
        let other = SegNet::<f32>::new(&[4, 6], 2, &mut rng).unwrap();
        assert!(SegNet::from_parts(net.arch().config().clone(), other.params).is_err());
    }
}
