use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel class index map, row-major, `0` is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassIndexMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl ClassIndexMask {
    pub fn background(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Validation(format!(
                "mask has {} pixels, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Fails if any pixel is outside `0..=num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize > num_classes) {
            Some(v) => Err(Error::Validation(format!("class index {v} exceeds class count {num_classes}"))),
            None => Ok(()),
        }
    }

    pub fn binary_of(&self, class_id: u8) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().map(|&v| v == class_id).collect() }
    }

    /// Distinct non-background classes, ascending.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

/// Per-pixel foreground flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Validation(format!(
                "binary mask has {} pixels, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Chebyshev dilation by `radius` pixels (square structuring element).
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let (h, w) = (self.height, self.width);
        // Separable: rows then columns.
        let mut rows = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if self.data[y * w + x] {
                    let lo = x.saturating_sub(radius);
                    let hi = (x + radius).min(w - 1);
                    rows[y * w + lo..=y * w + hi].iter_mut().for_each(|v| *v = true);
                }
            }
        }
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    let lo = y.saturating_sub(radius);
                    let hi = (y + radius).min(h - 1);
                    for yy in lo..=hi {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        BinaryMask { height: h, width: w, data: out }
    }
}

/// Rectangle annotation with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceBox {
    pub class_id: u8,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl InstanceBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.class_id == 0 {
            return Err(Error::Annotation(format!("box {self:?} annotates background")));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 || self.x1 >= width || self.y1 >= height {
            return Err(Error::Annotation(format!("box {self:?} does not fit a {height}x{width} raster")));
        }
        Ok(())
    }
}

/// Binary raster marking the pixels inside any box of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBoxMap {
    pub class_id: u8,
    pub mask: BinaryMask,
}

/// Anything that assigns an integer label to every pixel.
pub trait PixelLabels {
    fn dims(&self) -> (usize, usize);
    fn label(&self, index: usize) -> usize;
}

impl PixelLabels for ClassIndexMask {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn label(&self, index: usize) -> usize {
        self.data[index] as usize
    }
}

impl PixelLabels for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn label(&self, index: usize) -> usize {
        self.data[index] as usize
    }
}
