//! Independent re-derivation of multi-class pseudo-mask assembly, and a
//! seeded generator of small random instances.

#![allow(dead_code)]

pub mod grad;

use boxseed::mask::{box_map, BinaryMask, ClassBoxMap, ClassIndexMask, InstanceBox};
use num_rational::Ratio;
use rand::Rng;

/// One random assembly problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub height: usize,
    pub width: usize,
    pub fg: Vec<BinaryMask>,
    pub boxes: Vec<ClassBoxMap>,
}

impl Instance {
    pub fn pairs(&self) -> Vec<(&BinaryMask, &ClassBoxMap)> {
        self.fg.iter().zip(&self.boxes).collect()
    }
}

fn random_bits<R: Rng>(rng: &mut R, n: usize) -> Vec<bool> {
    let density: f64 = rng.random_range(0.1..0.9);
    (0..n).map(|_| rng.random_bool(density)).collect()
}

/// Up to 3 distinct classes on a raster of at most 8x8. Box maps are either
/// rasterized random boxes or arbitrary bit patterns.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let height = rng.random_range(1..=8);
    let width = rng.random_range(1..=8);
    let n_classes = rng.random_range(1..=3);
    let mut ids: Vec<u8> = Vec::new();
    while ids.len() < n_classes {
        let c = rng.random_range(1..=5u8);
        if !ids.contains(&c) {
            ids.push(c);
        }
    }
    let n = height * width;
    let mut fg = Vec::new();
    let mut boxes = Vec::new();
    for &c in &ids {
        fg.push(BinaryMask::from_vec(height, width, random_bits(rng, n)).unwrap());
        let map = if rng.random_bool(0.5) {
            let k = rng.random_range(1..=2);
            let bs: Vec<InstanceBox> = (0..k)
                .map(|_| {
                    let (x0, x1) = ordered(rng.random_range(0..width), rng.random_range(0..width));
                    let (y0, y1) = ordered(rng.random_range(0..height), rng.random_range(0..height));
                    InstanceBox { class_id: c, x0, y0, x1, y1 }
                })
                .collect();
            box_map(&bs, c, height, width).unwrap()
        } else {
            ClassBoxMap { class_id: c, mask: BinaryMask::from_vec(height, width, random_bits(rng, n)).unwrap() }
        };
        boxes.push(map);
    }
    Instance { height, width, fg, boxes }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Literal re-derivation: claims are `fg AND box`; contested pixels are
/// joined into 4-connected components with identical claimant sets by
/// union-find; each component goes to the claimant with the largest exact
/// rational rate `|component| / claimed area`, ties to the smaller class id.
pub fn oracle(inst: &Instance) -> ClassIndexMask {
    let (h, w) = (inst.height, inst.width);
    let n = h * w;
    let ids: Vec<u8> = inst.boxes.iter().map(|b| b.class_id).collect();
    let claim = |k: usize, p: usize| inst.fg[k].data[p] && inst.boxes[k].mask.data[p];
    let area: Vec<u64> = (0..ids.len()).map(|k| (0..n).filter(|&p| claim(k, p)).count() as u64).collect();
    let set: Vec<u32> = (0..n).map(|p| (0..ids.len()).filter(|&k| claim(k, p)).map(|k| 1u32 << k).sum()).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
                if set[p].count_ones() >= 2 && set[p] == set[q] {
                    let (a, b) = (find(&mut parent, p), find(&mut parent, q));
                    parent[a] = b;
                }
            }
        }
    }
    let mut size = vec![0u64; n];
    for p in 0..n {
        let r = find(&mut parent, p);
        size[r] += 1;
    }

    let mut out = vec![0u8; n];
    for p in 0..n {
        let claimants: Vec<usize> = (0..ids.len()).filter(|&k| set[p] & (1 << k) != 0).collect();
        out[p] = match claimants.len() {
            0 => 0,
            1 => ids[claimants[0]],
            _ => {
                let region = size[find(&mut parent, p)];
                let mut order = claimants.clone();
                order.sort_by_key(|&k| ids[k]);
                let mut best = order[0];
                for &k in &order[1..] {
                    if Ratio::new(region, area[k]) > Ratio::new(region, area[best]) {
                        best = k;
                    }
                }
                ids[best]
            }
        };
    }
    ClassIndexMask::from_vec(h, w, out).unwrap()
}

/// Every file under `root` except the run lock, keyed by relative path.
pub fn snapshot(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != ".lock" {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
