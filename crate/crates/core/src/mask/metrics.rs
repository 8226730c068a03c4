use serde::{Deserialize, Serialize};

use super::types::ClassIndexMask;
use crate::error::{Error, Result};

/// Pixel confusion counts over classes `0..=num_classes`; `counts[gt][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        let k = num_classes + 1;
        Self { num_classes, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn add(&mut self, pred: &ClassIndexMask, gt: &ClassIndexMask) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::Validation(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        pred.check_classes(self.num_classes)?;
        gt.check_classes(self.num_classes)?;
        let k = self.num_classes + 1;
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.num_classes, other.num_classes, "merging counts of different class sets");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    /// `(intersection, union)` for one class.
    pub fn intersection_union(&self, class: usize) -> (u64, u64) {
        let k = self.num_classes + 1;
        let tp = self.get(class, class);
        let gt_total: u64 = (0..k).map(|p| self.get(class, p)).sum();
        let pred_total: u64 = (0..k).map(|g| self.get(g, class)).sum();
        (tp, gt_total + pred_total - tp)
    }

    pub fn report(&self) -> IoUReport {
        let per_class_iou: Vec<Option<f64>> = (0..=self.num_classes)
            .map(|c| {
                let (i, u) = self.intersection_union(c);
                (u > 0).then(|| i as f64 / u as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean_iou = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
        IoUReport { per_class_iou, mean_iou }
    }
}

/// Per-class IoU (indexed by class id, `None` when the class is absent from
/// both prediction and ground truth) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

pub fn miou(pred: &ClassIndexMask, gt: &ClassIndexMask, num_classes: usize) -> Result<IoUReport> {
    let mut counts = ConfusionCounts::new(num_classes);
    counts.add(pred, gt)?;
    Ok(counts.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_masks_score_one() {
        let a = ClassIndexMask::from_vec(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let r = miou(&a, &a, 3).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.per_class_iou[3], None);
    }

    #[test]
    fn disjoint_pixels_score_zero() {
        let pred = ClassIndexMask::from_vec(1, 4, vec![1, 1, 0, 0]).unwrap();
        let gt = ClassIndexMask::from_vec(1, 4, vec![0, 0, 1, 1]).unwrap();
        let r = miou(&pred, &gt, 1).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.0));
    }

    #[test]
    fn hand_counted_four_by_four() {
        // gt: 8 px of class 1 (top two rows); pred: 6 of them plus 2 from row 2.
        let mut gt = vec![0u8; 16];
        gt[..8].iter_mut().for_each(|v| *v = 1);
        let mut pred = vec![0u8; 16];
        pred[..6].iter_mut().for_each(|v| *v = 1);
        pred[8] = 1;
        pred[9] = 1;
        let r = miou(
            &ClassIndexMask::from_vec(4, 4, pred).unwrap(),
            &ClassIndexMask::from_vec(4, 4, gt).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.6));
        // background: 6 shared px out of 10 in the union
        assert_eq!(r.per_class_iou[0], Some(0.6));
        assert_eq!(r.mean_iou, 0.6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = ClassIndexMask::background(2, 2);
        let b = ClassIndexMask::background(2, 3);
        assert!(matches!(miou(&a, &b, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let a = ClassIndexMask::from_vec(1, 1, vec![4]).unwrap();
        assert!(miou(&a, &a, 3).is_err());
    }
}
