//! Deployment of trained stage-wise generators to a box-only target dataset.
//!
//! Stage 0 trains a fresh segmenter on box-fill masks. Stage `k` generates
//! pseudo masks with generator `k` and the stage `k-1` segmenter, then
//! retrains. Semi mode swaps in ground truth for a fixed seeded subset of
//! training images; full mode uses ground truth everywhere and never runs a
//! generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::em::{default_seg_optim, generate_pseudo, initialize_pseudo, m_step, new_seg, predict_all, write_masks, Prepared, RunRecord};
use crate::error::{Error, Result};
use crate::eval::{pseudo_row, StageMetrics};
use crate::mask::ClassIndexMask;
use crate::nets::checkpoint::{self, Role};
use crate::nets::{seg_forward, OptimConfig};
use crate::rundir::{write_json, RunDir};
use crate::seed::derive_seed;
use crate::synth::{Dataset, Split};
use crate::{FeatureMap, Lpg, SegNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployMode {
    Weak,
    Semi,
    Full,
}

impl DeployMode {
    pub fn parse(s: &str) -> Result<DeployMode> {
        match s {
            "weak" => Ok(DeployMode::Weak),
            "semi" => Ok(DeployMode::Semi),
            "full" => Ok(DeployMode::Full),
            other => Err(Error::Config(format!("unknown deploy mode {other:?} (expected weak, semi or full)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeployMode::Weak => "weak",
            DeployMode::Semi => "semi",
            DeployMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployConfig {
    pub mode: DeployMode,
    /// Semi mode only; weak implies 0 and full implies 1.
    pub gt_fraction: f64,
    /// Generator stages to apply; `None` uses every published stage.
    pub n_stages: Option<usize>,
    pub optim: OptimConfig,
    pub warm_start: bool,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self { mode: DeployMode::Weak, gt_fraction: 0.15, n_stages: None, optim: default_seg_optim(), warm_start: true }
    }
}

impl DeployConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gt_fraction) {
            return Err(Error::Config(format!("deploy.gt_fraction {} is outside [0, 1]", self.gt_fraction)));
        }
        if self.n_stages == Some(0) && self.mode != DeployMode::Full {
            return Err(Error::Config("deploy.n_stages must be at least 1".into()));
        }
        self.optim.validate().map_err(|e| Error::Config(format!("deploy.optim: {e}")))
    }

    /// Fraction of training images supervised by ground truth.
    pub fn effective_gt_fraction(&self) -> f64 {
        match self.mode {
            DeployMode::Weak => 0.0,
            DeployMode::Semi => self.gt_fraction,
            DeployMode::Full => 1.0,
        }
    }
}

/// Per-pixel argmax of the segmenter; ties go to the lowest class index.
/// The image must have the training resolution; nothing is resized.
pub fn predict(seg: &SegNet, image: &FeatureMap, trained_size: (usize, usize)) -> Result<ClassIndexMask> {
    if (image.height, image.width) != trained_size {
        return Err(Error::Config(format!(
            "image is {}x{} but the segmenter was trained at {}x{}; resize explicitly before predicting",
            image.height, image.width, trained_size.0, trained_size.1
        )));
    }
    Ok(seg_forward(image, seg)?.argmax())
}

/// Training images whose ground truth is used directly, as a mask over `ids`.
pub fn gt_subset(ids: &[String], fraction: f64, seed: u64) -> Vec<bool> {
    let keep = (ids.len() as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "deploy/semi")));
    let mut chosen = vec![false; ids.len()];
    for &i in &order[..keep.min(ids.len())] {
        chosen[i] = true;
    }
    chosen
}

fn override_gt(pseudo: &mut [ClassIndexMask], data: &Prepared, chosen: &[bool]) {
    for ((p, g), &c) in pseudo.iter_mut().zip(&data.masks).zip(chosen) {
        if c {
            *p = g.clone();
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeployOutcome {
    pub seg: SegNet,
    pub stages: Vec<StageMetrics>,
}

fn deploy_seeds(cfg: &RunConfig, stages: usize) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::from([("global".to_string(), cfg.seed)]);
    for label in ["deploy/seg/init", "deploy/semi"] {
        seeds.insert(label.to_string(), derive_seed(cfg.seed, label));
    }
    for k in 0..=stages {
        let label = format!("deploy/stage{k}/m");
        seeds.insert(label.clone(), derive_seed(cfg.seed, &label));
    }
    seeds
}

/// Runs a deployment into `run`. `generators` are the stage-ordered
/// generators; full mode ignores them.
pub fn deploy_run(
    cfg: &RunConfig,
    target: &Dataset,
    generators: &[Lpg],
    inputs: BTreeMap<String, String>,
    run: &RunDir,
) -> Result<DeployOutcome> {
    cfg.validate()?;
    let dc = &cfg.deploy;
    let n_stages = match (dc.mode, dc.n_stages) {
        (DeployMode::Full, Some(n)) => n,
        (DeployMode::Full, None) if generators.is_empty() => cfg.em.n_stages,
        (_, Some(n)) if n > generators.len() => {
            return Err(Error::Missing(format!("{n} deployment stages requested, {} generators available", generators.len())))
        }
        (_, Some(n)) => n,
        (_, None) => generators.len(),
    };
    if dc.mode == DeployMode::Full && !generators.is_empty() {
        log::info!("full mode: ignoring {} generator checkpoint(s)", generators.len());
    }
    if dc.mode != DeployMode::Full && n_stages == 0 {
        return Err(Error::Missing("no generator checkpoints to deploy".into()));
    }
    let hash = cfg.hash();
    let train = Prepared::new(target, Split::Train);
    let val = Prepared::new(target, Split::Val);
    write_json(
        &run.root().join("run.json"),
        &RunRecord {
            kind: "deploy".into(),
            config: cfg.clone(),
            config_hash: hash.clone(),
            stages: n_stages,
            seeds: deploy_seeds(cfg, n_stages),
            inputs,
        },
    )?;

    let chosen = gt_subset(&train.ids, dc.effective_gt_fraction(), cfg.seed);
    let gt_images = chosen.iter().filter(|&&c| c).count();
    let mut seg = new_seg(cfg, train.num_classes, "deploy/seg/init")?;
    let mut stages = Vec::with_capacity(n_stages + 1);
    for k in 0..=n_stages {
        let dir = run.stage(k);
        let mut metrics = StageMetrics::new(k, &hash, cfg.seed);
        let pseudo_train = if dc.mode == DeployMode::Full {
            train.masks.clone()
        } else {
            let (mut p, pseudo_val) = if k == 0 {
                (initialize_pseudo(&train)?, initialize_pseudo(&val)?)
            } else {
                let g = &generators[k - 1];
                (generate_pseudo(g, &seg, &train)?, generate_pseudo(g, &seg, &val)?)
            };
            write_masks(&dir.join("pseudo"), &val.ids, &pseudo_val)?;
            metrics.set_pseudo(pseudo_row(&val, &pseudo_val)?);
            override_gt(&mut p, &train, &chosen);
            write_masks(&dir.join("pseudo"), &train.ids, &p)?;
            p
        };
        metrics.gt_images = Some(gt_images);
        if k > 0 && !dc.warm_start {
            seg = new_seg(cfg, train.num_classes, &format!("deploy/stage{k}/seg/init"))?;
        }
        log::info!("deploy stage {k} ({}): training segmenter", dc.mode.name());
        let trace = m_step(&mut seg, &train, &pseudo_train, &dc.optim, derive_seed(cfg.seed, &format!("deploy/stage{k}/m")))?;
        let preds = predict_all(&seg, &val)?;
        metrics.set_seg(val.confusion(&preds)?.report());
        let k10 = trace.losses.len().min(10);
        metrics.losses.insert("m_loss_start".into(), trace.losses[..k10].iter().sum::<f64>() / k10 as f64);
        metrics.losses.insert(
            "m_loss_end".into(),
            trace.losses[trace.losses.len() - k10..].iter().sum::<f64>() / k10 as f64,
        );
        let meta = checkpoint::meta_for(k, Role::Seg, cfg.seed, &hash, metrics.headline(), seg.arch().config(), &seg.params);
        checkpoint::save(&dir.join("seg"), &meta, &seg.params)?;
        if k == n_stages {
            write_masks(&run.root().join("predictions"), &val.ids, &preds)?;
        }
        write_json(&dir.join("metrics.json"), &metrics)?;
        stages.push(metrics);
    }
    Ok(DeployOutcome { seg, stages })
}

/// Loads the generators of an EM run and the dataset for deployment.
pub fn load_generators(em_run: &Path, n: Option<usize>) -> Result<Vec<Lpg>> {
    let gens = crate::em::stage_generators(em_run)?;
    let n = n.unwrap_or(gens.len());
    if n > gens.len() {
        return Err(Error::Missing(format!("{} publishes {} stages, {n} requested", em_run.display(), gens.len())));
    }
    Ok(gens.into_iter().take(n).map(|(_, g)| g).collect())
}
