//! Comparison reports: `report.md`, `report.json`, stage-curve plots and
//! qualitative panels. Output depends only on the run directories, so
//! regenerating from unchanged runs gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use serde::Serialize;

use super::plot::{colourize, line_chart, panel, series_colour};
use super::{read_stage_metrics, run_dataset, StageMetrics};
use crate::em::RunRecord;
use crate::error::{Error, Result};
use crate::rundir::{read_json, write_json};
use crate::synth::{read_mask, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    /// Human-readable descriptions of missing artifacts.
    pub gaps: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct StageEntry {
    stage: usize,
    miou: Option<f64>,
    per_class: Option<Vec<Option<f64>>>,
    pseudo_miou: Option<f64>,
    pseudo_per_class: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_pseudo_miou: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct RunEntry {
    id: String,
    kind: String,
    mode: String,
    seed: u64,
    config_hash: String,
    wall_clock_s: Option<f64>,
    complete: bool,
    gaps: Vec<String>,
    stages: Vec<StageEntry>,
    miou: Option<f64>,
    per_class: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
struct StageRow {
    stage: usize,
    miou: BTreeMap<String, Option<f64>>,
    pseudo_miou: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportJson {
    runs: Vec<RunEntry>,
    stages: Vec<StageRow>,
}

/// Wall-clock record written next to `run.json` by the command that
/// produced the run; kept out of `metrics.json` so metrics stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Timing {
    pub wall_clock_s: f64,
}

struct Loaded {
    dir: PathBuf,
    record: RunRecord,
    entry: RunEntry,
}

fn mode_of(record: &RunRecord) -> String {
    match record.kind.as_str() {
        "em" if record.config.em.fixed_lpg => "em-fixed".into(),
        "em" => "em".into(),
        _ => record.config.deploy.mode.name().into(),
    }
}

fn load_run(dir: &Path, id: String) -> Result<Loaded> {
    if !dir.join("run.json").is_file() {
        return Err(Error::Missing(format!("{} is not a run directory (no run.json)", dir.display())));
    }
    let record = RunRecord::read(dir)?;
    let mut gaps = Vec::new();
    let mut stages = Vec::new();
    for k in 0..=record.stages {
        match read_stage_metrics(dir, k) {
            Ok(m) => stages.push(stage_entry(&m)),
            Err(_) => gaps.push(format!("{id}: stage {k} has no metrics")),
        }
    }
    let timing: Option<Timing> = read_json(&dir.join("timing.json")).ok();
    let last = stages.last().filter(|s| s.stage == record.stages);
    let entry = RunEntry {
        mode: mode_of(&record),
        kind: record.kind.clone(),
        seed: record.config.seed,
        config_hash: record.config_hash.clone(),
        wall_clock_s: timing.map(|t| t.wall_clock_s),
        complete: gaps.is_empty(),
        miou: last.and_then(|s| s.miou),
        per_class: last.and_then(|s| s.per_class.clone()),
        gaps,
        stages,
        id,
    };
    Ok(Loaded { dir: dir.to_path_buf(), record, entry })
}

fn stage_entry(m: &StageMetrics) -> StageEntry {
    StageEntry {
        stage: m.stage,
        miou: m.seg_miou,
        per_class: m.seg_per_class.clone(),
        pseudo_miou: m.pseudo_miou,
        pseudo_per_class: m.pseudo_per_class.clone(),
        fixed_pseudo_miou: m.fixed_pseudo_miou,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

fn unique_ids(runs: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    runs.iter()
        .map(|r| {
            let base = r.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}-{n}")
            }
        })
        .collect()
}

/// Writes a comparison of `runs` into `out`. Missing stages are reported as
/// gaps rather than errors; a path without `run.json` is an error.
pub fn emit_report(runs: &[PathBuf], out: &Path, panels: usize) -> Result<ReportOutcome> {
    if runs.is_empty() {
        return Err(Error::Config("a report needs at least one run".into()));
    }
    let loaded: Vec<Loaded> =
        runs.iter().zip(unique_ids(runs)).map(|(r, id)| load_run(r, id)).collect::<Result<_>>()?;
    let mut gaps: Vec<String> = loaded.iter().flat_map(|l| l.entry.gaps.clone()).collect();
    let mut files = Vec::new();
    for d in ["plots", "panels"] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let max_stage = loaded.iter().map(|l| l.record.stages).max().unwrap_or(0);
    let rows: Vec<StageRow> = (0..=max_stage)
        .map(|k| {
            let pick = |f: fn(&StageEntry) -> Option<f64>| {
                loaded
                    .iter()
                    .map(|l| (l.entry.id.clone(), l.entry.stages.iter().find(|s| s.stage == k).and_then(f)))
                    .collect()
            };
            StageRow { stage: k, miou: pick(|s| s.miou), pseudo_miou: pick(|s| s.pseudo_miou) }
        })
        .collect();

    let mut md = String::new();
    writeln!(md, "# Run comparison\n").unwrap();
    writeln!(md, "## Runs\n").unwrap();
    writeln!(md, "| run | kind | mode | seed | config hash | wall clock (s) | complete | plot colour |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|---|").unwrap();
    for (i, l) in loaded.iter().enumerate() {
        let e = &l.entry;
        let c = series_colour(i);
        writeln!(
            md,
            "| {} | {} | {} | {} | `{}` | {} | {} | #{:02x}{:02x}{:02x} |",
            e.id,
            e.kind,
            e.mode,
            e.seed,
            &e.config_hash[..12.min(e.config_hash.len())],
            e.wall_clock_s.map(|t| format!("{t:.1}")).unwrap_or_else(|| "n/a".into()),
            if e.complete { "yes" } else { "no" },
            c[0],
            c[1],
            c[2]
        )
        .unwrap();
    }

    let chart = |key: fn(&StageEntry) -> Option<f64>| -> Vec<Vec<(usize, f64)>> {
        loaded.iter().map(|l| l.entry.stages.iter().filter_map(|s| key(s).map(|v| (s.stage, v))).collect()).collect()
    };
    for (name, title, key, first_label) in [
        ("pseudo_miou", "Pseudo-mask quality (mIoU %, validation split)", (|s: &StageEntry| s.pseudo_miou) as fn(&StageEntry) -> Option<f64>, "box-fill"),
        ("seg_miou", "Segmentation (mIoU %, validation split)", (|s: &StageEntry| s.miou) as fn(&StageEntry) -> Option<f64>, "stage 0"),
    ] {
        writeln!(md, "\n## {title}\n").unwrap();
        write!(md, "| stage |").unwrap();
        for l in &loaded {
            write!(md, " {} |", l.entry.id).unwrap();
        }
        writeln!(md).unwrap();
        writeln!(md, "|---|{}", "---|".repeat(loaded.len())).unwrap();
        for k in 0..=max_stage {
            let label = if k == 0 { first_label.to_string() } else { format!("stage {k}") };
            write!(md, "| {label} |").unwrap();
            for l in &loaded {
                write!(md, " {} |", pct(l.entry.stages.iter().find(|s| s.stage == k).and_then(key))).unwrap();
            }
            writeln!(md).unwrap();
        }
        let path = out.join("plots").join(format!("{name}.png"));
        line_chart(&chart(key), max_stage).save(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
        writeln!(md, "\n![{title}](plots/{name}.png)").unwrap();
        files.push(path);
    }

    let fixed: Vec<&Loaded> = loaded.iter().filter(|l| l.entry.stages.iter().any(|s| s.fixed_pseudo_miou.is_some())).collect();
    if !fixed.is_empty() {
        writeln!(md, "\n## Fixed final-stage generator (pseudo mIoU %, validation split)\n").unwrap();
        writeln!(md, "| run | {} |", (1..=max_stage).map(|k| format!("stage {k}")).collect::<Vec<_>>().join(" | ")).unwrap();
        writeln!(md, "|---|{}", "---|".repeat(max_stage)).unwrap();
        for l in fixed {
            let cells: Vec<String> = (1..=max_stage)
                .map(|k| pct(l.entry.stages.iter().find(|s| s.stage == k).and_then(|s| s.fixed_pseudo_miou)))
                .collect();
            writeln!(md, "| {} | {} |", l.entry.id, cells.join(" | ")).unwrap();
        }
    }

    writeln!(md, "\n## Per-class IoU of the final segmenter (%)\n").unwrap();
    let n_classes = loaded.iter().filter_map(|l| l.entry.per_class.as_ref().map(Vec::len)).max().unwrap_or(0);
    if n_classes == 0 {
        writeln!(md, "No run has a final segmenter yet.").unwrap();
    } else {
        let head: Vec<String> = (0..n_classes).map(|c| if c == 0 { "background".into() } else { format!("class {c}") }).collect();
        writeln!(md, "| run | {} | mean |", head.join(" | ")).unwrap();
        writeln!(md, "|---|{}---|", "---|".repeat(n_classes)).unwrap();
        for l in &loaded {
            let Some(pc) = &l.entry.per_class else { continue };
            let cells: Vec<String> = (0..n_classes).map(|c| pct(pc.get(c).copied().flatten())).collect();
            writeln!(md, "| {} | {} | {} |", l.entry.id, cells.join(" | "), pct(l.entry.miou)).unwrap();
        }
    }

    writeln!(md, "\n## Qualitative panels\n").unwrap();
    writeln!(md, "Each panel shows image, ground truth, final pseudo mask and final prediction; grey marks a missing artifact.\n").unwrap();
    for l in &loaded {
        let (written, missing) = write_panels(l, out, panels)?;
        gaps.extend(missing);
        for p in written {
            let rel = p.strip_prefix(out).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            writeln!(md, "![{}]({rel})", l.entry.id).unwrap();
            files.push(p);
        }
    }

    if !gaps.is_empty() {
        writeln!(md, "\n## Gaps\n").unwrap();
        for g in &gaps {
            writeln!(md, "- {g}").unwrap();
        }
    }

    let json_path = out.join("report.json");
    write_json(&json_path, &ReportJson { runs: loaded.into_iter().map(|l| l.entry).collect(), stages: rows })?;
    let md_path = out.join("report.md");
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    files.push(json_path);
    files.push(md_path);
    Ok(ReportOutcome { files, gaps })
}

fn write_panels(l: &Loaded, out: &Path, count: usize) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let id = &l.entry.id;
    if count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let dataset = match run_dataset(&l.record).map(Path::new).and_then(Dataset::read) {
        Ok(d) => d,
        Err(e) => return Ok((Vec::new(), vec![format!("{id}: no panels, dataset unavailable ({e})")])),
    };
    let last = l.entry.stages.last().map(|s| s.stage);
    let mut written = Vec::new();
    let mut missing = Vec::new();
    for sample in dataset.split(crate::synth::Split::Val).take(count) {
        let (w, h) = (sample.image.width(), sample.image.height());
        let pseudo = last.and_then(|k| read_mask(&crate::rundir::stage_dir(&l.dir, k).join("pseudo").join(format!("{}.png", sample.id))).ok());
        let pred = read_mask(&l.dir.join("predictions").join(format!("{}.png", sample.id))).ok();
        if pred.is_none() {
            missing.push(format!("{id}: no prediction for {}", sample.id));
        }
        // Nearest-neighbour upscaling keeps small rasters legible.
        let scale = (128 / w.max(h)).max(1);
        let up = |img: RgbImage| imageops::resize(&img, w * scale, h * scale, imageops::FilterType::Nearest);
        let tiles = [Some(sample.image.clone()), Some(colourize(&sample.mask)), pseudo.as_ref().map(colourize), pred.as_ref().map(colourize)]
            .map(|t| t.map(up));
        let path = out.join("panels").join(format!("{id}_{}.png", sample.id));
        panel(&tiles, w * scale, h * scale).save(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
        written.push(path);
    }
    Ok((written, missing))
}
