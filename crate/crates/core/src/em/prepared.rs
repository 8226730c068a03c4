use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{assemble_multiclass, box_fill_mask, box_map, psi, ClassBoxMap, ClassIndexMask, ConfusionCounts, InstanceBox};
use crate::nets::{lpg_forward, seg_forward, ClassProbMap, Lpg, SegNet};
use crate::synth::{image_tensor, Dataset, Split};
use crate::{FeatureMap, Real};

/// One split of a dataset with images converted to network input once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub num_classes: usize,
    pub ids: Vec<String>,
    pub images: Vec<FeatureMap>,
    pub boxes: Vec<Vec<InstanceBox>>,
    /// Ground-truth masks; used for generator training and evaluation only.
    pub masks: Vec<ClassIndexMask>,
}

impl Prepared {
    pub fn new(dataset: &Dataset, split: Split) -> Prepared {
        let samples: Vec<_> = dataset.split(split).collect();
        Prepared {
            num_classes: dataset.num_classes(),
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            images: samples.par_iter().map(|s| image_tensor(&s.image)).collect(),
            boxes: samples.iter().map(|s| s.boxes.clone()).collect(),
            masks: samples.iter().map(|s| s.mask.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self, i: usize) -> (usize, usize) {
        (self.images[i].height, self.images[i].width)
    }

    /// Distinct box classes of image `i`, ascending.
    pub fn box_classes(&self, i: usize) -> Vec<u8> {
        let mut c: Vec<u8> = self.boxes[i].iter().map(|b| b.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_box_map(&self, i: usize, class_id: u8) -> Result<ClassBoxMap> {
        let (h, w) = self.dims(i);
        box_map(&self.boxes[i], class_id, h, w)
    }

    /// Pooled confusion counts of `pred` (aligned with `ids`) against the
    /// ground truth.
    pub fn confusion(&self, pred: &[ClassIndexMask]) -> Result<ConfusionCounts> {
        if pred.len() != self.len() {
            return Err(Error::Validation(format!("{} masks for {} images", pred.len(), self.len())));
        }
        let mut counts = ConfusionCounts::new(self.num_classes);
        for (p, g) in pred.iter().zip(&self.masks) {
            counts.add(p, g)?;
        }
        Ok(counts)
    }
}

/// Box-fill pseudo masks for every image of the split.
pub fn initialize_pseudo(data: &Prepared) -> Result<Vec<ClassIndexMask>> {
    (0..data.len())
        .map(|i| {
            let (h, w) = data.dims(i);
            box_fill_mask(&data.boxes[i], h, w)
        })
        .collect()
}

/// Segmenter prediction for every image.
pub fn predict_all(seg: &SegNet<Real>, data: &Prepared) -> Result<Vec<ClassIndexMask>> {
    data.images.par_iter().map(|img| seg_forward(img, seg).map(|p| p.argmax())).collect()
}

/// Pseudo mask for one image: per box class, the generator's binary mask
/// (softmax, then ψ), combined by [`assemble_multiclass`].
pub fn pseudo_mask(
    lpg: &Lpg<Real>,
    image: &FeatureMap,
    probs: &ClassProbMap<Real>,
    boxes: &[InstanceBox],
) -> Result<ClassIndexMask> {
    let (h, w) = (image.height, image.width);
    let mut classes: Vec<u8> = boxes.iter().map(|b| b.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut maps = Vec::with_capacity(classes.len());
    for &c in &classes {
        let bm = box_map(boxes, c, h, w)?;
        let score = lpg_forward(image, &bm, probs.slice(c)?, lpg)?;
        maps.push((psi(&score.softmax())?, bm));
    }
    let refs: Vec<_> = maps.iter().map(|(m, b)| (m, b)).collect();
    let out = assemble_multiclass(h, w, &refs)?;
    check_containment(&out, boxes)?;
    Ok(out)
}

/// Every foreground pixel must lie inside a box of its own class.
pub fn check_containment(mask: &ClassIndexMask, boxes: &[InstanceBox]) -> Result<()> {
    for y in 0..mask.height {
        for x in 0..mask.width {
            let c = mask.get(y, x);
            if c != 0 && !boxes.iter().any(|b| b.class_id == c && b.contains(y, x)) {
                return Err(Error::Validation(format!("pseudo mask pixel ({y},{x}) of class {c} lies outside its boxes")));
            }
        }
    }
    Ok(())
}

/// Runs the generator over every image, feeding it the segmenter's current
/// class probabilities.
pub fn generate_pseudo(lpg: &Lpg<Real>, seg: &SegNet<Real>, data: &Prepared) -> Result<Vec<ClassIndexMask>> {
    if seg.num_classes() != data.num_classes {
        return Err(Error::Config(format!(
            "segmenter predicts {} classes, dataset has {}",
            seg.num_classes(),
            data.num_classes
        )));
    }
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let probs = seg_forward(&data.images[i], seg)?;
            pseudo_mask(lpg, &data.images[i], &probs, &data.boxes[i])
        })
        .collect()
}
