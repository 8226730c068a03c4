use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{ClassInfo, Dataset, DatasetManifest, Sample, Split, Splits};
use super::render::{render_scene, Background, InstanceSpec, ObjectTexture, SceneSpec, Scribble};
use super::shapes::ShapeKind;
use crate::error::{Error, Result};
use crate::seed::{config_hash, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub image_size: usize,
    pub aux_classes: usize,
    pub target_classes: usize,
    pub aux_train: usize,
    pub aux_val: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub max_instances: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_scribbles: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            aux_classes: 6,
            target_classes: 3,
            aux_train: 500,
            aux_val: 100,
            target_train: 200,
            target_val: 100,
            max_instances: 3,
            min_radius: 7.0,
            max_radius: 16.0,
            max_scribbles: 5,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aux_classes < 2 || self.target_classes < 2 {
            return Err(Error::Config("data: aux_classes and target_classes must both be at least 2".into()));
        }
        if self.aux_classes + self.target_classes > ShapeKind::VOCABULARY.len() {
            return Err(Error::Config(format!(
                "data: {} + {} classes exceed the shape vocabulary of {}",
                self.aux_classes,
                self.target_classes,
                ShapeKind::VOCABULARY.len()
            )));
        }
        if self.image_size < 16 || self.image_size > 1024 {
            return Err(Error::Config("data: image_size must be in 16..=1024".into()));
        }
        if self.aux_train == 0 || self.target_train == 0 || self.aux_val == 0 || self.target_val == 0 {
            return Err(Error::Config("data: every split needs at least one image".into()));
        }
        if self.max_instances == 0 {
            return Err(Error::Config("data: max_instances must be at least 1".into()));
        }
        if !(self.min_radius >= 1.5 && self.min_radius <= self.max_radius && 2.0 * self.max_radius <= self.image_size as f64)
        {
            return Err(Error::Config("data: need 1.5 <= min_radius <= max_radius <= image_size / 2".into()));
        }
        Ok(())
    }
}

/// Hue (degrees) associated with a vocabulary entry; spread so that both
/// class sets cover the colour wheel.
fn class_hue(kind: ShapeKind) -> f64 {
    let j = ShapeKind::VOCABULARY.iter().position(|&k| k == kind).expect("in vocabulary");
    (j as f64 * 160.0) % 360.0
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn random_scene<R: Rng>(rng: &mut R, cfg: &DataConfig, classes: &[(u8, ShapeKind)]) -> SceneSpec {
    let size = cfg.image_size;
    let grey = rng.random_range(60.0..190.0);
    let background = Background {
        texture: rng.random_range(0..2),
        base: hsv(rng.random_range(0.0..360.0), rng.random_range(0.0..0.2), grey / 255.0),
        gradient: [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)],
        noise: rng.random_range(15.0..30.0),
        noise_seed: rng.random(),
    };
    let scribbles = (0..rng.random_range(0..=cfg.max_scribbles))
        .map(|_| {
            let n = rng.random_range(2..=4);
            Scribble {
                points: (0..n)
                    .map(|_| (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64)))
                    .collect(),
                color: hsv(rng.random_range(0.0..360.0), rng.random_range(0.2..0.8), rng.random_range(0.3..0.9)),
                thickness: rng.random_range(1.0..2.5),
            }
        })
        .collect();
    let instances = (0..rng.random_range(1..=cfg.max_instances))
        .map(|_| {
            let &(class_id, kind) = classes.choose(rng).expect("non-empty class list");
            let radius = rng.random_range(cfg.min_radius..=cfg.max_radius);
            let hue = class_hue(kind) + rng.random_range(-20.0..20.0);
            let sat = rng.random_range(0.55..0.95);
            let val = rng.random_range(0.55..0.95);
            let texture = match rng.random_range(0..3) {
                0 => ObjectTexture::Flat,
                1 => ObjectTexture::Stripes { period: rng.random_range(2.0..5.0), angle: rng.random_range(0.0..TAU) },
                _ => ObjectTexture::Checker { period: rng.random_range(2.0..5.0) },
            };
            InstanceSpec {
                kind,
                class_id,
                cx: rng.random_range(radius..=size as f64 - radius),
                cy: rng.random_range(radius..=size as f64 - radius),
                radius,
                angle: rng.random_range(0.0..TAU),
                aspect: rng.random_range(0.55..=1.0),
                phase: rng.random_range(0.0..TAU),
                texture,
                color: hsv(hue, sat, val),
                shade: hsv(hue, sat, val * 0.65),
                noise: rng.random_range(6.0..14.0),
                noise_seed: rng.random(),
            }
        })
        .collect();
    SceneSpec { height: size, width: size, background, scribbles, instances }
}

fn image_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.name())
}

fn generate_dataset(
    name: &str,
    cfg: &DataConfig,
    kinds: &[ShapeKind],
    counts: (usize, usize),
    seed: u64,
    hash: &str,
) -> Result<Dataset> {
    let classes: Vec<(u8, ShapeKind)> = kinds.iter().enumerate().map(|(i, &k)| (i as u8 + 1, k)).collect();
    const MAX_ATTEMPTS: usize = 8;
    for attempt in 0..MAX_ATTEMPTS {
        let mut samples = BTreeMap::new();
        let mut splits = Splits::default();
        for (split, count) in [(Split::Train, counts.0), (Split::Val, counts.1)] {
            let rendered: Vec<Result<Sample>> = (0..count)
                .into_par_iter()
                .map(|i| {
                    let id = image_id(split, i);
                    let label = format!("data/{name}/{attempt}/{id}");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &label));
                    let spec = random_scene(&mut rng, cfg, &classes);
                    let scene = render_scene(&spec)?;
                    Ok(Sample { id, image: scene.image, mask: scene.mask, boxes: scene.boxes })
                })
                .collect();
            for s in rendered {
                let s = s?;
                splits.get_mut(split).push(s.id.clone());
                samples.insert(s.id.clone(), s);
            }
        }
        let manifest = DatasetManifest {
            name: name.to_string(),
            classes: classes.iter().map(|&(id, k)| ClassInfo { id, name: k.name().to_string() }).collect(),
            splits,
            seed,
            config_hash: hash.to_string(),
        };
        let dataset = Dataset { manifest, samples };
        if dataset.class_balance_ok() {
            return Ok(dataset);
        }
        log::info!("{name}: class balance check failed on attempt {attempt}, regenerating");
    }
    Err(Error::Config(format!("{name}: could not satisfy class balance in {MAX_ATTEMPTS} attempts")))
}

/// Generates the class-disjoint auxiliary and target datasets.
pub fn generate_pair(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    let vocab = ShapeKind::VOCABULARY;
    let aux_kinds = &vocab[..cfg.aux_classes];
    let target_kinds = &vocab[cfg.aux_classes..cfg.aux_classes + cfg.target_classes];
    let aux = generate_dataset("aux", cfg, aux_kinds, (cfg.aux_train, cfg.aux_val), seed, &hash)?;
    let target = generate_dataset("target", cfg, target_kinds, (cfg.target_train, cfg.target_val), seed, &hash)?;
    Ok((aux, target))
}

/// Keeps a seeded uniform sample of `fraction` of the training images
/// (at least one); the validation split is untouched.
pub fn subsample_aux(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} is outside (0, 1]")));
    }
    let train = &dataset.manifest.splits.train;
    let keep = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len());
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subsample"));
    idx.shuffle(&mut rng);
    let mut chosen: Vec<usize> = idx[..keep].to_vec();
    chosen.sort_unstable();
    let kept: Vec<String> = chosen.iter().map(|&i| train[i].clone()).collect();
    let mut out = dataset.clone();
    for id in train {
        if !kept.contains(id) {
            out.samples.remove(id);
        }
    }
    out.manifest.splits.train = kept;
    Ok(out)
}
