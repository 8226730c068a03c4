//! Stage-wise EM training on the auxiliary dataset.
//!
//! Stage `k` trains the segmenter on the stage `k-1` pseudo masks (stage 0 is
//! box-fill), trains the generator against ground truth using the new
//! segmenter's class probabilities, then generates the stage `k` pseudo masks.

mod prepared;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use prepared::{check_containment, generate_pseudo, initialize_pseudo, predict_all, pseudo_mask, Prepared};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{pseudo_row, StageMetrics};
use crate::mask::ClassIndexMask;
use crate::nets::checkpoint::{self, Role};
use crate::nets::{
    fit, seg_forward, FitTrace, GroupRates, LpgObjective, LpgSample, OptimConfig, OptimizerKind, SegObjective,
};
use crate::rundir::{completed_stages, read_json, write_json, RunDir};
use crate::seed::derive_seed;
use crate::synth::{read_mask, subsample_aux, write_mask, Dataset, Split};
use crate::{Lpg, Real, SegNet};

/// Source of the stage 0 pseudo masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPseudo {
    BoxFill,
    /// Oracle injection: the ground-truth masks.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub n_stages: usize,
    /// Segmenter training per stage.
    pub m_step: OptimConfig,
    /// Generator training per stage.
    pub e_step: OptimConfig,
    pub initial_pseudo: InitialPseudo,
    pub warm_start_seg: bool,
    pub warm_start_lpg: bool,
    /// Publish the final stage's generator for every stage.
    pub fixed_lpg: bool,
    /// Generator loss covers the class box map dilated by this many pixels.
    pub box_dilation: usize,
    /// Fraction of auxiliary training images used.
    pub aux_fraction: f64,
    /// Validation metrics are computed every `eval_every` stages and at the last.
    pub eval_every: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_stages: 3,
            m_step: default_seg_optim(),
            e_step: OptimConfig {
                optimizer: OptimizerKind::adam(),
                lr: GroupRates::uniform(2e-3),
                max_iter: 300,
                batch_size: 4,
            },
            initial_pseudo: InitialPseudo::BoxFill,
            warm_start_seg: true,
            warm_start_lpg: true,
            fixed_lpg: false,
            box_dilation: 4,
            aux_fraction: 1.0,
            eval_every: 1,
        }
    }
}

pub(crate) fn default_seg_optim() -> OptimConfig {
    OptimConfig {
        optimizer: OptimizerKind::Sgd { momentum: 0.9, weight_decay: 5e-4 },
        lr: GroupRates::deeplab_style(0.01),
        max_iter: 200,
        batch_size: 4,
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::Config("em.n_stages must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("em.eval_every must be at least 1".into()));
        }
        if !(self.aux_fraction > 0.0 && self.aux_fraction <= 1.0) {
            return Err(Error::Config(format!("em.aux_fraction {} is outside (0, 1]", self.aux_fraction)));
        }
        self.m_step.validate().map_err(|e| Error::Config(format!("em.m_step: {e}")))?;
        self.e_step.validate().map_err(|e| Error::Config(format!("em.e_step: {e}")))
    }

    fn evaluates(&self, stage: usize) -> bool {
        stage % self.eval_every == 0 || stage == self.n_stages
    }
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// `"em"` or `"deploy"`.
    pub kind: String,
    pub config: RunConfig,
    pub config_hash: String,
    /// Index of the last stage the run produces.
    pub stages: usize,
    pub seeds: BTreeMap<String, u64>,
    /// Input artifacts by role (dataset directories, generator runs).
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn read(run: &Path) -> Result<RunRecord> {
        let rec: RunRecord = read_json(&run.join("run.json"))?;
        if rec.config.hash() != rec.config_hash {
            return Err(Error::Validation(format!(
                "{}: stored config does not match its hash",
                run.join("run.json").display()
            )));
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCheckpoint {
    pub stage: usize,
    pub lpg: PathBuf,
    pub seg: PathBuf,
    pub pseudo_miou: Option<f64>,
    pub seg_miou: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

/// Generator choice when several stages are published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedSummary {
    pub lpg_stage: usize,
}

/// Trains the segmenter on `(image, pseudo mask)` pairs.
pub fn m_step(
    seg: &mut SegNet,
    data: &Prepared,
    pseudo: &[ClassIndexMask],
    optim: &OptimConfig,
    seed: u64,
) -> Result<FitTrace> {
    if pseudo.len() != data.len() {
        return Err(Error::Missing(format!("pseudo masks for {} of {} images", pseudo.len(), data.len())));
    }
    let arch = seg.arch().clone();
    let objective = SegObjective { arch: &arch, samples: data.images.iter().zip(pseudo).collect() };
    fit(&mut seg.params, &objective, optim, seed)
}

/// Generator training samples: one per (image, box class), with the
/// segmenter's probability slice for that class as input and the class's
/// ground-truth mask as target. Images without boxes contribute nothing.
pub fn lpg_samples(seg: &SegNet, data: &Prepared, dilation: usize) -> Result<Vec<LpgSample<Real>>> {
    use rayon::prelude::*;
    let per_image: Vec<Vec<LpgSample<Real>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let classes = data.box_classes(i);
            if classes.is_empty() {
                return Ok(Vec::new());
            }
            let probs = seg_forward(&data.images[i], seg)?;
            classes
                .iter()
                .map(|&c| {
                    let bm = data.class_box_map(i, c)?;
                    let input = crate::nets::lpg_input(&data.images[i], &bm, probs.slice(c)?)?;
                    Ok(LpgSample { input, target: data.masks[i].binary_of(c), region: bm.mask.dilate(dilation).data })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn e_step(
    seg: &SegNet,
    data: &Prepared,
    lpg: &mut Lpg,
    optim: &OptimConfig,
    dilation: usize,
    seed: u64,
) -> Result<FitTrace> {
    let samples = lpg_samples(seg, data, dilation)?;
    if samples.is_empty() {
        return Err(Error::Validation("no annotated classes in the generator training set".into()));
    }
    let arch = lpg.arch().clone();
    fit(&mut lpg.params, &LpgObjective { arch: &arch, samples: &samples }, optim, seed)
}

pub fn new_seg(cfg: &RunConfig, num_classes: usize, label: &str) -> Result<SegNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, label));
    SegNet::new(&cfg.nets.seg_widths, num_classes, &mut rng)
}

pub fn new_lpg(cfg: &RunConfig, label: &str) -> Result<Lpg> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, label));
    Lpg::new(&cfg.nets.lpg_widths, &mut rng)
}

pub(crate) fn write_masks(dir: &Path, ids: &[String], masks: &[ClassIndexMask]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, m) in ids.iter().zip(masks) {
        write_mask(&dir.join(format!("{id}.png")), m)?;
    }
    Ok(())
}

pub(crate) fn read_masks(dir: &Path, ids: &[String]) -> Result<Vec<ClassIndexMask>> {
    ids.iter().map(|id| read_mask(&dir.join(format!("{id}.png")))).collect()
}

fn loss_summary(m: &mut StageMetrics, key: &str, trace: &FitTrace) {
    let k = trace.losses.len().min(10);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    m.losses.insert(format!("{key}_start"), mean(&trace.losses[..k]));
    m.losses.insert(format!("{key}_end"), mean(&trace.losses[trace.losses.len() - k..]));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue after the last complete stage instead of starting fresh.
    pub resume: bool,
    /// Stop once this stage is complete (simulates an interrupted run).
    pub stop_after: Option<usize>,
}

fn em_seeds(cfg: &RunConfig) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    seeds.insert("global".to_string(), cfg.seed);
    for label in ["em/seg/init", "em/lpg/init", "em/aux_fraction"] {
        seeds.insert(label.to_string(), derive_seed(cfg.seed, label));
    }
    for k in 1..=cfg.em.n_stages {
        for step in ["m", "e"] {
            let label = format!("em/stage{k}/{step}");
            seeds.insert(label.clone(), derive_seed(cfg.seed, &label));
        }
    }
    seeds
}

/// Runs (or resumes) the EM stages into `run`, returning one checkpoint per stage.
pub fn run_stages(
    cfg: &RunConfig,
    aux: &Dataset,
    dataset_path: &str,
    run: &RunDir,
    opts: RunOptions,
) -> Result<Vec<StageCheckpoint>> {
    cfg.validate()?;
    let root = run.root();
    let hash = cfg.hash();
    let em = &cfg.em;
    let aux = if em.aux_fraction < 1.0 {
        subsample_aux(aux, em.aux_fraction, derive_seed(cfg.seed, "em/aux_fraction"))?
    } else {
        aux.clone()
    };
    let train = Prepared::new(&aux, Split::Train);
    let val = Prepared::new(&aux, Split::Val);
    let record = RunRecord {
        kind: "em".into(),
        config: cfg.clone(),
        config_hash: hash.clone(),
        stages: em.n_stages,
        seeds: em_seeds(cfg),
        inputs: BTreeMap::from([("aux".to_string(), dataset_path.to_string())]),
    };

    let done = if opts.resume && root.join("run.json").is_file() {
        let prev = RunRecord::read(root)?;
        if prev.config_hash != hash {
            return Err(Error::Config(format!(
                "cannot resume {}: config hash {} differs from stored {}",
                root.display(),
                hash,
                prev.config_hash
            )));
        }
        completed_stages(root, 0).min(em.n_stages + 1)
    } else {
        write_json(&root.join("run.json"), &record)?;
        0
    };
    let stop = opts.stop_after.unwrap_or(em.n_stages).min(em.n_stages);
    log::info!("em run {}: {} stage(s) already complete", root.display(), done.saturating_sub(1));

    // Stage 0: the initial pseudo masks.
    let mut pseudo_train = match em.initial_pseudo {
        InitialPseudo::BoxFill => initialize_pseudo(&train)?,
        InitialPseudo::GroundTruth => train.masks.clone(),
    };
    if done == 0 {
        run.clear_stage(0)?;
        let pseudo_val = initialize_pseudo(&val)?;
        let dir = run.stage(0).join("pseudo");
        write_masks(&dir, &train.ids, &pseudo_train)?;
        write_masks(&dir, &val.ids, &pseudo_val)?;
        let mut m = StageMetrics::new(0, &hash, cfg.seed);
        m.set_pseudo(pseudo_row(&val, &pseudo_val)?);
        write_json(&run.stage(0).join("metrics.json"), &m)?;
    }

    let mut seg: Option<SegNet> = None;
    let mut lpg: Option<Lpg> = None;
    if done >= 2 {
        let last = done - 1;
        seg = Some(checkpoint::load_seg(&run.stage(last).join("seg"))?.0);
        lpg = Some(checkpoint::load_lpg(&run.stage(last).join("lpg"))?.0);
        pseudo_train = read_masks(&run.stage(last).join("pseudo"), &train.ids)
            .map_err(|e| Error::checkpoint(run.stage(last), format!("cannot resume: {e}")))?;
    }

    for k in done.max(1)..=stop {
        run.clear_stage(k)?;
        log::info!("stage {k}: M-step on {} images", train.len());
        let mut s = match (seg.take(), em.warm_start_seg) {
            (Some(prev), true) => prev,
            _ => new_seg(cfg, train.num_classes, if k == 1 { "em/seg/init".into() } else { format!("em/stage{k}/seg/init") }.as_str())?,
        };
        let m_trace = m_step(&mut s, &train, &pseudo_train, &em.m_step, derive_seed(cfg.seed, &format!("em/stage{k}/m")))?;

        log::info!("stage {k}: E-step");
        let mut g = match (lpg.take(), em.warm_start_lpg) {
            (Some(prev), true) => prev,
            _ => new_lpg(cfg, if k == 1 { "em/lpg/init".into() } else { format!("em/stage{k}/lpg/init") }.as_str())?,
        };
        let e_trace =
            e_step(&s, &train, &mut g, &em.e_step, em.box_dilation, derive_seed(cfg.seed, &format!("em/stage{k}/e")))?;

        log::info!("stage {k}: generating pseudo masks");
        pseudo_train = generate_pseudo(&g, &s, &train)?;
        let dir = run.stage(k);
        write_masks(&dir.join("pseudo"), &train.ids, &pseudo_train)?;

        let mut m = StageMetrics::new(k, &hash, cfg.seed);
        loss_summary(&mut m, "m_loss", &m_trace);
        loss_summary(&mut m, "e_loss", &e_trace);
        if em.evaluates(k) {
            let pseudo_val = generate_pseudo(&g, &s, &val)?;
            write_masks(&dir.join("pseudo"), &val.ids, &pseudo_val)?;
            m.set_pseudo(pseudo_row(&val, &pseudo_val)?);
            let preds = predict_all(&s, &val)?;
            m.set_seg(val.confusion(&preds)?.report());
            if k == em.n_stages {
                write_masks(&root.join("predictions"), &val.ids, &preds)?;
            }
        }
        let metrics: BTreeMap<String, f64> = m.headline();
        checkpoint::save(&dir.join("seg"), &checkpoint::meta_for(k, Role::Seg, cfg.seed, &hash, metrics.clone(), s.arch().config(), &s.params), &s.params)?;
        checkpoint::save(&dir.join("lpg"), &checkpoint::meta_for(k, Role::Lpg, cfg.seed, &hash, metrics, g.arch().config(), &g.params), &g.params)?;
        write_json(&dir.join("metrics.json"), &m)?;
        seg = Some(s);
        lpg = Some(g);
    }

    if stop == em.n_stages && em.fixed_lpg {
        apply_fixed_generator(cfg, run, &val)?;
    }
    load_stage_checkpoints(root)
}

/// Scores every stage's segmenter paired with the final generator.
fn apply_fixed_generator(cfg: &RunConfig, run: &RunDir, val: &Prepared) -> Result<()> {
    let n = cfg.em.n_stages;
    let (g, _) = checkpoint::load_lpg::<Real>(&run.stage(n).join("lpg"))?;
    for k in 1..=n {
        let (s, _) = checkpoint::load_seg::<Real>(&run.stage(k).join("seg"))?;
        let path = run.stage(k).join("metrics.json");
        let mut m: StageMetrics = read_json(&path)?;
        let row = pseudo_row(val, &generate_pseudo(&g, &s, val)?)?;
        m.fixed_pseudo_miou = Some(row.mean_iou);
        write_json(&path, &m)?;
    }
    write_json(&run.root().join("fixed.json"), &FixedSummary { lpg_stage: n })
}

/// Reads and validates every complete stage `1..` of an EM run.
pub fn load_stage_checkpoints(root: &Path) -> Result<Vec<StageCheckpoint>> {
    let n = completed_stages(root, 0).saturating_sub(1);
    (1..=n)
        .map(|k| {
            let dir = crate::rundir::stage_dir(root, k);
            let m: StageMetrics = read_json(&dir.join("metrics.json"))?;
            let (lpg, seg) = (dir.join("lpg"), dir.join("seg"));
            let (_, meta) = checkpoint::load_seg::<Real>(&seg)?;
            checkpoint::load_lpg::<Real>(&lpg)?;
            if meta.stage != k {
                return Err(Error::checkpoint(&seg, format!("checkpoint says stage {}, directory says {k}", meta.stage)));
            }
            Ok(StageCheckpoint {
                stage: k,
                lpg,
                seg,
                pseudo_miou: m.pseudo_miou,
                seg_miou: m.seg_miou,
                config_hash: meta.config_hash,
                seed: meta.seed,
            })
        })
        .collect()
}

/// The generators a deployment should use, one per stage, honouring the
/// fixed-generator ablation.
pub fn stage_generators(em_run: &Path) -> Result<Vec<(usize, Lpg)>> {
    let record = RunRecord::read(em_run)?;
    let stages = load_stage_checkpoints(em_run)?;
    if stages.len() < record.config.em.n_stages {
        return Err(Error::Missing(format!(
            "{} has {} of {} stages complete",
            em_run.display(),
            stages.len(),
            record.config.em.n_stages
        )));
    }
    if record.config.em.fixed_lpg {
        let fixed: FixedSummary = read_json(&em_run.join("fixed.json"))?;
        let (g, _) = checkpoint::load_lpg(&stages[fixed.lpg_stage - 1].lpg)?;
        log::info!("{} is a fixed-generator run: stage {} generator used at every stage", em_run.display(), fixed.lpg_stage);
        return Ok(stages.iter().map(|_| (fixed.lpg_stage, g.clone())).collect());
    }
    stages.iter().map(|s| Ok((s.stage, checkpoint::load_lpg(&s.lpg)?.0))).collect()
}
