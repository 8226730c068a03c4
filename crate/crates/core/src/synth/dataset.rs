//! Dataset container.
//!
//! ```text
//! <dir>/manifest.json     name, classes, splits, seed, config_hash
//! <dir>/images/<id>.png   8-bit RGB
//! <dir>/masks/<id>.png    8-bit single channel, class index per pixel
//! <dir>/boxes.jsonl       {"image_id","class_id","x0","y0","x1","y1"} per box
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ClassIndexMask, InstanceBox};
use crate::nets::FeatureMap;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train or val)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<ClassInfo>,
    pub splits: Splits,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: ClassIndexMask,
    pub boxes: Vec<InstanceBox>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    /// Distinct box classes, ascending.
    pub fn box_classes(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.boxes.iter().map(|b| b.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: BTreeMap<String, Sample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    image_id: String,
    class_id: u8,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

/// Scales 8-bit RGB to a zero-centred network input.
pub fn image_tensor<S: Scalar>(image: &RgbImage) -> FeatureMap<S> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![S::zero(); 3 * h * w];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = S::from_f64_lossy((px.0[c] as f64 / 255.0 - 0.5) / 0.25);
        }
    }
    FeatureMap { channels: 3, height: h, width: w, data }
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.manifest.splits.get(split).iter().map(move |id| &self.samples[id])
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.values().next().map(|s| (s.height(), s.width()))
    }

    /// Every class has boxes in at least 1% of training images.
    pub fn class_balance_ok(&self) -> bool {
        let train = &self.manifest.splits.train;
        let needed = (train.len() as f64 * 0.01).ceil().max(1.0) as usize;
        self.manifest.classes.iter().all(|c| {
            train.iter().filter(|id| self.samples[*id].boxes.iter().any(|b| b.class_id == c.id)).count() >= needed
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        let mut seen = std::collections::HashSet::new();
        for id in self.manifest.splits.train.iter().chain(&self.manifest.splits.val) {
            if !seen.insert(id) {
                return Err(Error::Validation(format!("image {id} appears in more than one split entry")));
            }
            let s = self
                .samples
                .get(id)
                .ok_or_else(|| Error::Missing(format!("image {id} listed in manifest but not loaded")))?;
            s.mask.check_classes(n)?;
            for b in &s.boxes {
                b.validate(s.height(), s.width())?;
                if b.class_id as usize > n {
                    return Err(Error::Annotation(format!("box class {} exceeds class count {n}", b.class_id)));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        let masks = dir.join("masks");
        for d in [&images, &masks] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

        let mut lines = Vec::new();
        for s in self.samples.values() {
            let p = images.join(format!("{}.png", s.id));
            s.image.save(&p).map_err(|e| Error::Image { path: p.clone(), source: e })?;
            write_mask(&masks.join(format!("{}.png", s.id)), &s.mask)?;
            for b in &s.boxes {
                let rec = BoxRecord { image_id: s.id.clone(), class_id: b.class_id, x0: b.x0, y0: b.y0, x1: b.x1, y1: b.y1 };
                lines.push(serde_json::to_string(&rec).expect("box record serializes"));
            }
        }
        let path = dir.join("boxes.jsonl");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for l in lines {
            writeln!(f, "{l}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let manifest = read_manifest(dir)?;
        let boxes = read_boxes(&dir.join("boxes.jsonl"))?;
        let mut samples = BTreeMap::new();
        for id in manifest.splits.train.iter().chain(&manifest.splits.val) {
            let ip = dir.join("images").join(format!("{id}.png"));
            let image = image::open(&ip).map_err(|e| Error::Image { path: ip.clone(), source: e })?.to_rgb8();
            let mask = read_mask(&dir.join("masks").join(format!("{id}.png")))?;
            if (mask.height, mask.width) != (image.height() as usize, image.width() as usize) {
                return Err(Error::Validation(format!("image {id}: mask size differs from image size")));
            }
            let b = boxes.get(id).cloned().unwrap_or_default();
            samples.insert(id.clone(), Sample { id: id.clone(), image, mask, boxes: b });
        }
        let ds = Dataset { manifest, samples };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

fn read_boxes(path: &Path) -> Result<BTreeMap<String, Vec<InstanceBox>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, Vec<InstanceBox>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: BoxRecord = serde_json::from_str(line).map_err(|e| Error::json(path, e))?;
        out.entry(r.image_id).or_default().push(InstanceBox {
            class_id: r.class_id,
            x0: r.x0,
            y0: r.y0,
            x1: r.x1,
            y1: r.y1,
        });
    }
    Ok(out)
}

pub fn write_mask(path: &Path, mask: &ClassIndexMask) -> Result<()> {
    let img = GrayImage::from_raw(mask.width as u32, mask.height as u32, mask.data.clone()).expect("mask buffer size");
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

pub fn read_mask(path: &Path) -> Result<ClassIndexMask> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Validation(format!(
                "{}: mask must be 8-bit single channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    ClassIndexMask::from_vec(h, w, img.into_raw())
}
