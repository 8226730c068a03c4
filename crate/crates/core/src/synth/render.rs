use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::ShapeKind;
use crate::error::{Error, Result};
use crate::mask::{tight_box, BinaryMask, ClassIndexMask, InstanceBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectTexture {
    Flat,
    Stripes { period: f64, angle: f64 },
    Checker { period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: ShapeKind,
    pub class_id: u8,
    pub cx: f64,
    pub cy: f64,
    /// Radius of the disc the shape is inscribed in, in pixels.
    pub radius: f64,
    pub angle: f64,
    pub aspect: f64,
    pub phase: f64,
    pub texture: ObjectTexture,
    pub color: [u8; 3],
    pub shade: [u8; 3],
    pub noise: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Texture variant; 0 = plain noise, 1 = noise with soft blotches.
    pub texture: u8,
    pub base: [u8; 3],
    pub gradient: [f64; 2],
    pub noise: f64,
    pub noise_seed: u64,
}

/// Unlabeled clutter stroke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scribble {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    pub scribbles: Vec<Scribble>,
    /// Drawn in order; later instances occlude earlier ones.
    pub instances: Vec<InstanceSpec>,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: RgbImage,
    pub mask: ClassIndexMask,
    pub boxes: Vec<InstanceBox>,
    /// Indices of instances that ended up fully occluded.
    pub dropped: Vec<usize>,
}

impl InstanceSpec {
    fn covers(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.radius;
        let v = (-s * dx + c * dy) / self.radius;
        self.kind.contains(u, v, self.aspect, self.phase)
    }

    fn base_color(&self, x: usize, y: usize) -> [u8; 3] {
        let alt = match self.texture {
            ObjectTexture::Flat => false,
            ObjectTexture::Stripes { period, angle } => {
                let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) / period;
                t.rem_euclid(2.0) >= 1.0
            }
            ObjectTexture::Checker { period } => {
                ((x as f64 / period).floor() as i64 + (y as f64 / period).floor() as i64).rem_euclid(2) == 1
            }
        };
        if alt {
            self.shade
        } else {
            self.color
        }
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn validate_spec(spec: &SceneSpec) -> Result<()> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::Validation("scene has zero size".into()));
    }
    for (i, inst) in spec.instances.iter().enumerate() {
        if inst.class_id == 0 {
            return Err(Error::Validation(format!("instance {i} has background class")));
        }
        if inst.radius < 1.5 || !(inst.aspect > 0.0 && inst.aspect <= 1.0) {
            return Err(Error::Validation(format!("instance {i} is smaller than 3x3 px or has bad aspect")));
        }
        if inst.cx - inst.radius < 0.0
            || inst.cy - inst.radius < 0.0
            || inst.cx + inst.radius > spec.width as f64
            || inst.cy + inst.radius > spec.height as f64
        {
            return Err(Error::Validation(format!("instance {i} extends outside the image")));
        }
    }
    Ok(())
}

/// Paints background, clutter and instances; masks and boxes record only
/// the visible pixels of each instance.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    validate_spec(spec)?;
    let (h, w) = (spec.height, spec.width);
    let mut image = RgbImage::new(w as u32, h as u32);

    let bg = &spec.background;
    let mut rng = ChaCha8Rng::seed_from_u64(bg.noise_seed);
    let blotches: Vec<(f64, f64, f64, f64)> = if bg.texture == 1 {
        (0..4)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(4.0..12.0),
                    rng.random_range(-40.0..40.0),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    for y in 0..h {
        for x in 0..w {
            let mut shift = bg.gradient[0] * (x as f64 / w as f64 - 0.5) + bg.gradient[1] * (y as f64 / h as f64 - 0.5);
            for &(bx, by, r, amp) in &blotches {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                shift += amp * (-d2 / (2.0 * r * r)).exp();
            }
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let n: f64 = rng.random_range(-1.0..1.0) * bg.noise;
                *p = clamp_u8(bg.base[c] as f64 + shift + n);
            }
            image.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }

    for s in &spec.scribbles {
        let r = s.thickness / 2.0;
        for seg in s.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let steps = (len * 2.0).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let (cx, cy) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                let (ylo, yhi) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h));
                let (xlo, xhi) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w));
                for y in ylo..yhi {
                    for x in xlo..xhi {
                        if (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r + 0.25 {
                            image.put_pixel(x as u32, y as u32, Rgb(s.color));
                        }
                    }
                }
            }
        }
    }

    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (idx, inst) in spec.instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.noise_seed);
        let ylo = (inst.cy - inst.radius).floor().max(0.0) as usize;
        let yhi = ((inst.cy + inst.radius).ceil() as usize).min(h);
        let xlo = (inst.cx - inst.radius).floor().max(0.0) as usize;
        let xhi = ((inst.cx + inst.radius).ceil() as usize).min(w);
        for y in ylo..yhi {
            for x in xlo..xhi {
                if !inst.covers(x as f64 + 0.5, y as f64 + 0.5) {
                    continue;
                }
                owner[y * w + x] = Some(idx);
                let base = inst.base_color(x, y);
                let n: f64 = rng.random_range(-1.0..1.0) * inst.noise;
                image.put_pixel(x as u32, y as u32, Rgb(base.map(|c| clamp_u8(c as f64 + n))));
            }
        }
    }

    let mut mask = ClassIndexMask::background(h, w);
    for (p, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            mask.data[p] = spec.instances[*i].class_id;
        }
    }
    let mut boxes = Vec::new();
    let mut dropped = Vec::new();
    for (idx, inst) in spec.instances.iter().enumerate() {
        let visible = BinaryMask { height: h, width: w, data: owner.iter().map(|o| *o == Some(idx)).collect() };
        match tight_box(&visible, inst.class_id) {
            Ok(b) => boxes.push(b),
            Err(_) => {
                log::debug!("instance {idx} ({:?}) is fully occluded; dropping its box", inst.kind);
                dropped.push(idx);
            }
        }
    }
    Ok(RenderedScene { image, mask, boxes, dropped })
}
