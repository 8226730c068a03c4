use std::cmp::Ordering;
use std::collections::VecDeque;

use super::types::{BinaryMask, ClassBoxMap, ClassIndexMask, InstanceBox};
use crate::error::{Error, Result};
use crate::nets::FeatureMap;
use crate::scalar::Scalar;

/// Rasterizes the union of the boxes of `class_id`; other classes are ignored.
pub fn box_map(boxes: &[InstanceBox], class_id: u8, height: usize, width: usize) -> Result<ClassBoxMap> {
    let mut mask = BinaryMask::zeros(height, width);
    for b in boxes {
        b.validate(height, width)?;
        if b.class_id != class_id {
            continue;
        }
        for y in b.y0..=b.y1 {
            mask.data[y * width + b.x0..=y * width + b.x1].iter_mut().for_each(|v| *v = true);
        }
    }
    Ok(ClassBoxMap { class_id, mask })
}

/// Labels every covered pixel with the class of the smallest box covering it.
///
/// Equal-area boxes covering the same pixel resolve to the lower class id.
pub fn box_fill_mask(boxes: &[InstanceBox], height: usize, width: usize) -> Result<ClassIndexMask> {
    for b in boxes {
        b.validate(height, width)?;
    }
    let mut order: Vec<&InstanceBox> = boxes.iter().collect();
    // Paint largest first so smaller boxes overwrite.
    order.sort_by(|a, b| b.area().cmp(&a.area()).then(b.class_id.cmp(&a.class_id)));
    let mut out = ClassIndexMask::background(height, width);
    for b in order {
        for y in b.y0..=b.y1 {
            out.data[y * width + b.x0..=y * width + b.x1].iter_mut().for_each(|v| *v = b.class_id);
        }
    }
    Ok(out)
}

/// Tolerance on `p_bg + p_fg = 1` accepted by [`psi`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

/// Extracts the foreground mask from a two-channel probability map
/// (channel 0 background, channel 1 foreground). Ties go to background.
pub fn psi<S: Scalar>(probs: &FeatureMap<S>) -> Result<BinaryMask> {
    if probs.channels != 2 {
        return Err(Error::Validation(format!("expected a 2-channel probability map, got {}", probs.channels)));
    }
    let n = probs.plane_len();
    let (bg, fg) = probs.data.split_at(n);
    let mut data = Vec::with_capacity(n);
    for (i, (&b, &f)) in bg.iter().zip(fg).enumerate() {
        let (b, f) = (b.to_f64_lossy(), f.to_f64_lossy());
        if !(0.0..=1.0).contains(&b) || !(0.0..=1.0).contains(&f) || ((b + f) - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "pixel {i} has probability pair ({f}, {b}) that is not a distribution"
            )));
        }
        data.push(f > b);
    }
    BinaryMask::from_vec(probs.height, probs.width, data)
}

/// Overlapping area over a class's predicted area, compared exactly.
#[derive(Debug, Clone, Copy)]
pub struct OverlapRate {
    pub overlap: usize,
    pub area: usize,
}

impl OverlapRate {
    pub fn value(&self) -> f64 {
        self.overlap as f64 / self.area as f64
    }
}

impl PartialEq for OverlapRate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OverlapRate {}

impl PartialOrd for OverlapRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OverlapRate {
    fn cmp(&self, other: &Self) -> Ordering {
        ((self.overlap as u128) * (other.area as u128)).cmp(&((other.overlap as u128) * (self.area as u128)))
    }
}

/// Combines per-class foreground masks into one class-index mask.
///
/// Each class claims `fg AND box_map`. Pixels claimed by one class take that
/// class. Pixels claimed by several classes are grouped into 4-connected
/// regions sharing the same claimant set; each region goes to the claimant
/// with the highest overlapping rate `|region| / claimed_area(class)`, ties
/// to the lower class id.
pub fn assemble_multiclass(
    height: usize,
    width: usize,
    per_class: &[(&BinaryMask, &ClassBoxMap)],
) -> Result<ClassIndexMask> {
    let n = height * width;
    let mut ids: Vec<u8> = Vec::with_capacity(per_class.len());
    for (fg, boxes) in per_class {
        if (fg.height, fg.width) != (height, width) || (boxes.mask.height, boxes.mask.width) != (height, width) {
            return Err(Error::Validation(format!(
                "class {} rasters do not match {height}x{width}",
                boxes.class_id
            )));
        }
        if boxes.class_id == 0 {
            return Err(Error::Validation("class id 0 is reserved for background".into()));
        }
        if ids.contains(&boxes.class_id) {
            return Err(Error::Validation(format!("class {} listed twice", boxes.class_id)));
        }
        ids.push(boxes.class_id);
    }

    let claims: Vec<Vec<bool>> = per_class
        .iter()
        .map(|(fg, boxes)| fg.data.iter().zip(&boxes.mask.data).map(|(&a, &b)| a && b).collect())
        .collect();
    let areas: Vec<usize> = claims.iter().map(|c| c.iter().filter(|&&v| v).count()).collect();

    // Claimant list per pixel, as indices into `per_class`.
    let claimants: Vec<Vec<usize>> =
        (0..n).map(|p| (0..per_class.len()).filter(|&k| claims[k][p]).collect()).collect();

    let mut out = ClassIndexMask::background(height, width);
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    for start in 0..n {
        match claimants[start].len() {
            0 => continue,
            1 => {
                out.data[start] = ids[claimants[start][0]];
                continue;
            }
            _ if visited[start] => continue,
            _ => {}
        }
        let set = &claimants[start];
        let mut region = vec![start];
        visited[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / width, p % width);
            let mut neighbours = [None; 4];
            if y > 0 {
                neighbours[0] = Some(p - width);
            }
            if y + 1 < height {
                neighbours[1] = Some(p + width);
            }
            if x > 0 {
                neighbours[2] = Some(p - 1);
            }
            if x + 1 < width {
                neighbours[3] = Some(p + 1);
            }
            for q in neighbours.into_iter().flatten() {
                if !visited[q] && claimants[q] == *set {
                    visited[q] = true;
                    region.push(q);
                    queue.push_back(q);
                }
            }
        }
        let winner = set
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let ra = OverlapRate { overlap: region.len(), area: areas[a] };
                let rb = OverlapRate { overlap: region.len(), area: areas[b] };
                // Higher rate wins; on equal rates the lower class id wins.
                ra.cmp(&rb).then(ids[b].cmp(&ids[a]))
            })
            .expect("non-empty claimant set");
        for p in region {
            out.data[p] = ids[winner];
        }
    }
    Ok(out)
}

/// Smallest inclusive rectangle containing every foreground pixel.
pub fn tight_box(mask: &BinaryMask, class_id: u8) -> Result<InstanceBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.ok_or_else(|| Error::EmptyRegion("mask has no foreground pixels".into()))?;
    Ok(InstanceBox { class_id, x0, y0, x1, y1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(class_id: u8, x0: usize, y0: usize, x1: usize, y1: usize) -> InstanceBox {
        InstanceBox { class_id, x0, y0, x1, y1 }
    }

    #[test]
    fn box_map_examples() {
        let empty = box_map(&[bx(2, 0, 0, 2, 2)], 1, 3, 3).unwrap();
        assert_eq!(empty.mask.count(), 0);

        let one = box_map(&[bx(1, 0, 0, 1, 1)], 1, 3, 3).unwrap();
        let expected = [1, 1, 0, 1, 1, 0, 0, 0, 0];
        assert_eq!(one.mask.data, expected.map(|v| v == 1));

        let two = box_map(&[bx(1, 0, 0, 1, 1), bx(1, 1, 1, 2, 2)], 1, 3, 3).unwrap();
        assert_eq!(two.mask.count(), 7);
        assert!(!two.mask.get(0, 2) && !two.mask.get(2, 0));
    }

    #[test]
    fn box_map_rejects_out_of_bounds() {
        assert!(matches!(box_map(&[bx(1, 0, 0, 3, 1)], 1, 3, 3), Err(Error::Annotation(_))));
        assert!(matches!(box_map(&[bx(0, 0, 0, 1, 1)], 1, 3, 3), Err(Error::Annotation(_))));
    }

    #[test]
    fn box_fill_examples() {
        assert_eq!(box_fill_mask(&[], 2, 2).unwrap().data, vec![0; 4]);
        assert_eq!(box_fill_mask(&[bx(2, 0, 0, 1, 1)], 2, 2).unwrap().data, vec![2; 4]);

        // class 1: 3x3 at origin (area 9); class 2: 2x2 at (1,1) (area 4)
        let m = box_fill_mask(&[bx(1, 0, 0, 2, 2), bx(2, 1, 1, 2, 2)], 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1, 1, 1, 0,
            1, 2, 2, 0,
            1, 2, 2, 0,
            0, 0, 0, 0,
        ];
        assert_eq!(m.data, expected);
        // order of the input list does not matter
        let m2 = box_fill_mask(&[bx(2, 1, 1, 2, 2), bx(1, 0, 0, 2, 2)], 4, 4).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn psi_examples() {
        let p = FeatureMap::from_vec(2, 1, 1, vec![0.3f64, 0.7]).unwrap();
        assert_eq!(psi(&p).unwrap().data, vec![true]);
        let tie = FeatureMap::from_vec(2, 1, 1, vec![0.5f32, 0.5]).unwrap();
        assert_eq!(psi(&tie).unwrap().data, vec![false]);
        // pixels (fg,bg): (0.9,.1),(0.2,.8),(0.5,.5),(0.6,.4)
        let fg = [0.9, 0.2, 0.5, 0.6];
        let mut data: Vec<f64> = fg.iter().map(|f| 1.0 - f).collect();
        data.extend(fg);
        let m = psi(&FeatureMap::from_vec(2, 2, 2, data).unwrap()).unwrap();
        assert_eq!(m.data, vec![true, false, false, true]);
    }

    #[test]
    fn psi_rejects_malformed() {
        let bad = FeatureMap::from_vec(2, 1, 1, vec![0.5f64, 0.6]).unwrap();
        assert!(matches!(psi(&bad), Err(Error::Validation(_))));
        let three = FeatureMap::from_vec(3, 1, 1, vec![0.2f64, 0.3, 0.5]).unwrap();
        assert!(psi(&three).is_err());
        let nan = FeatureMap::from_vec(2, 1, 1, vec![f64::NAN, 0.5]).unwrap();
        assert!(psi(&nan).is_err());
    }

    #[test]
    fn assemble_single_class_all_ones() {
        let fg = BinaryMask::from_vec(2, 2, vec![true; 4]).unwrap();
        let bm = ClassBoxMap { class_id: 3, mask: fg.clone() };
        let out = assemble_multiclass(2, 2, &[(&fg, &bm)]).unwrap();
        assert_eq!(out.data, vec![3; 4]);
    }

    #[test]
    fn assemble_rate_rule_example() {
        // class 1 claims 4 px, class 2 claims 10 px, they share a 2 px region.
        let (h, w) = (4, 5);
        let mut c1 = BinaryMask::zeros(h, w);
        let mut c2 = BinaryMask::zeros(h, w);
        for p in [0, 1, 5, 6] {
            c1.data[p] = true;
        }
        for p in [1, 6, 2, 3, 4, 7, 8, 9, 12, 13] {
            c2.data[p] = true;
        }
        let full = BinaryMask::from_vec(h, w, vec![true; h * w]).unwrap();
        let b1 = ClassBoxMap { class_id: 1, mask: full.clone() };
        let b2 = ClassBoxMap { class_id: 2, mask: full };
        let out = assemble_multiclass(h, w, &[(&c1, &b1), (&c2, &b2)]).unwrap();
        assert_eq!(out.data[1], 1);
        assert_eq!(out.data[6], 1);
        assert_eq!(out.data[2], 2);
        assert_eq!(out.data[0], 1);
        let r1 = OverlapRate { overlap: 2, area: 4 };
        let r2 = OverlapRate { overlap: 2, area: 10 };
        assert_eq!(r1.value(), 0.5);
        assert_eq!(r2.value(), 0.2);
        assert!(r1 > r2);
    }

    #[test]
    fn assemble_rate_tie_goes_to_lower_class() {
        let fg = BinaryMask::from_vec(1, 2, vec![true, true]).unwrap();
        let b5 = ClassBoxMap { class_id: 5, mask: fg.clone() };
        let b4 = ClassBoxMap { class_id: 4, mask: fg.clone() };
        let out = assemble_multiclass(1, 2, &[(&fg, &b5), (&fg, &b4)]).unwrap();
        assert_eq!(out.data, vec![4, 4]);
    }

    #[test]
    fn assemble_validates_inputs() {
        let fg = BinaryMask::zeros(2, 2);
        let bm = ClassBoxMap { class_id: 1, mask: BinaryMask::zeros(2, 3) };
        assert!(matches!(assemble_multiclass(2, 2, &[(&fg, &bm)]), Err(Error::Validation(_))));
        let bm = ClassBoxMap { class_id: 1, mask: BinaryMask::zeros(2, 2) };
        assert!(assemble_multiclass(2, 2, &[(&fg, &bm), (&fg, &bm)]).is_err());
        assert_eq!(assemble_multiclass(2, 2, &[]).unwrap().data, vec![0; 4]);
    }

    #[test]
    fn tight_box_examples() {
        let mut m = BinaryMask::zeros(5, 5);
        m.data[2 * 5 + 3] = true;
        assert_eq!(tight_box(&m, 1).unwrap(), bx(1, 3, 2, 3, 2));
        assert!(matches!(tight_box(&BinaryMask::zeros(3, 3), 1), Err(Error::EmptyRegion(_))));

        let mut l = BinaryMask::zeros(6, 6);
        for y in 1..=4 {
            l.data[y * 6] = true;
        }
        for x in 0..=2 {
            l.data[4 * 6 + x] = true;
        }
        assert_eq!(tight_box(&l, 2).unwrap(), bx(2, 0, 1, 2, 4));
    }
}
