//! Pseudo-mask and segmentation quality, and run reports.

mod plot;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use report::{emit_report, ReportOutcome, Timing};

use crate::em::{predict_all, read_masks, Prepared, RunRecord};
use crate::error::{Error, Result};
use crate::mask::{ClassIndexMask, IoUReport};
use crate::nets::checkpoint;
use crate::rundir::{completed_stages, read_json, stage_dir};
use crate::synth::{Dataset, Split};
use crate::{Real, SegNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Qualitative panels per run in a report.
    pub panels: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { panels: 4 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.panels > 64 {
            return Err(Error::Config("eval.panels must be at most 64".into()));
        }
        Ok(())
    }
}

/// Contents of `stage<k>/metrics.json`. Pseudo metrics compare the stage's
/// pseudo masks on the validation split with ground truth; segmentation
/// metrics compare the stage's segmenter predictions on the same split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageMetrics {
    pub stage: usize,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_miou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_per_class: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_miou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_per_class: Option<Vec<Option<f64>>>,
    /// Pseudo mIoU of this stage's segmenter paired with the final generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_pseudo_miou: Option<f64>,
    /// Training images whose ground truth replaced the pseudo mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_images: Option<usize>,
    #[serde(default)]
    pub losses: BTreeMap<String, f64>,
}

impl StageMetrics {
    pub fn new(stage: usize, config_hash: &str, seed: u64) -> Self {
        Self {
            stage,
            config_hash: config_hash.to_string(),
            seed,
            pseudo_miou: None,
            pseudo_per_class: None,
            seg_miou: None,
            seg_per_class: None,
            fixed_pseudo_miou: None,
            gt_images: None,
            losses: BTreeMap::new(),
        }
    }

    pub fn set_pseudo(&mut self, r: IoUReport) {
        self.pseudo_miou = Some(r.mean_iou);
        self.pseudo_per_class = Some(r.per_class_iou);
    }

    pub fn set_seg(&mut self, r: IoUReport) {
        self.seg_miou = Some(r.mean_iou);
        self.seg_per_class = Some(r.per_class_iou);
    }

    /// Scalar metrics for checkpoint metadata.
    pub fn headline(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in [("pseudo_miou", self.pseudo_miou), ("seg_miou", self.seg_miou)] {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }
}

/// Dataset-level pooled IoU of pseudo masks against the split's ground truth.
pub fn pseudo_row(data: &Prepared, pseudo: &[ClassIndexMask]) -> Result<IoUReport> {
    Ok(data.confusion(pseudo)?.report())
}

/// One row per pseudo-mask store (box-fill first, then each stage).
pub fn evaluate_pseudo_quality(stores: &[Vec<ClassIndexMask>], gt: &Prepared) -> Result<Vec<IoUReport>> {
    stores.iter().map(|s| pseudo_row(gt, s)).collect()
}

/// Predicts every image of the split and pools intersection and union
/// counts over the whole split before dividing.
pub fn evaluate_segmentation(seg: &SegNet, data: &Prepared) -> Result<IoUReport> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty split".into()));
    }
    Ok(data.confusion(&predict_all(seg, data)?)?.report())
}

/// Dataset directory a run was trained or deployed on.
pub fn run_dataset(record: &RunRecord) -> Result<&str> {
    let role = if record.kind == "em" { "aux" } else { "target" };
    record
        .inputs
        .get(role)
        .map(String::as_str)
        .ok_or_else(|| Error::Missing(format!("run.json names no {role} dataset")))
}

/// Pseudo-quality table of a run read back from disk: box-fill row plus
/// every complete stage that stored validation pseudo masks.
pub fn pseudo_table(run: &Path) -> Result<Vec<(usize, IoUReport)>> {
    let record = RunRecord::read(run)?;
    let dataset = Dataset::read(Path::new(run_dataset(&record)?))?;
    let val = Prepared::new(&dataset, Split::Val);
    let mut rows = Vec::new();
    for k in 0..completed_stages(run, 0) {
        let dir = stage_dir(run, k).join("pseudo");
        if val.ids.iter().all(|id| dir.join(format!("{id}.png")).is_file()) {
            rows.push((k, pseudo_row(&val, &read_masks(&dir, &val.ids)?)?));
        }
    }
    Ok(rows)
}

/// Re-evaluates the final segmenter of a run on one split of its dataset.
pub fn evaluate_run(run: &Path, split: Split) -> Result<(usize, IoUReport)> {
    let record = RunRecord::read(run)?;
    let n = completed_stages(run, 0);
    if n == 0 {
        return Err(Error::Missing(format!("{} has no complete stage", run.display())));
    }
    let last = n - 1;
    let seg_dir = stage_dir(run, last).join("seg");
    if !seg_dir.is_dir() {
        return Err(Error::Missing(format!("{} has no segmenter checkpoint", run.display())));
    }
    let (seg, _) = checkpoint::load_seg::<Real>(&seg_dir)?;
    let dataset = Dataset::read(Path::new(run_dataset(&record)?))?;
    Ok((last, evaluate_segmentation(&seg, &Prepared::new(&dataset, split))?))
}

pub fn read_stage_metrics(run: &Path, k: usize) -> Result<StageMetrics> {
    read_json(&stage_dir(run, k).join("metrics.json"))
}
