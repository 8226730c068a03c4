use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use boxseed::config::RunConfig;
use boxseed::deploy::{deploy_run, load_generators, DeployMode};
use boxseed::em::{run_stages, RunOptions, RunRecord};
use boxseed::eval::{emit_report, evaluate_run, read_stage_metrics, Timing};
use boxseed::rundir::{write_json, RunDir};
use boxseed::synth::{generate_pair, Dataset, Split};

/// Box-supervised segmentation with a learned class-agnostic pseudo-mask generator.
#[derive(Debug, Parser)]
#[command(name = "boxseed", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON configuration document; omitted keys take defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the command.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite existing output.
    #[arg(long, global = true)]
    force: bool,
    /// Override one config value, e.g. `--set em.n_stages=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the auxiliary and target datasets into <out>/aux and <out>/target.
    GenData,
    /// Train the stage-wise generators and segmenters on the auxiliary dataset.
    TrainAux(TrainAux),
    /// Deploy trained generators to a box-annotated target dataset.
    Deploy(Deploy),
    /// Re-evaluate a run's final segmenter on one split.
    Eval(Eval),
    /// Write a comparison report of one or more runs into <out>.
    Report(Report),
}

#[derive(Debug, Args)]
struct TrainAux {
    /// Auxiliary dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Continue an interrupted run in <out>.
    #[arg(long)]
    resume: bool,
    /// Number of EM stages.
    #[arg(long)]
    stages: Option<usize>,
    /// Use the final stage's generator at every stage.
    #[arg(long)]
    fixed_lpg: bool,
    /// Fraction of auxiliary training images to use.
    #[arg(long)]
    aux_fraction: Option<f64>,
    /// Stop after this stage completes (for testing resumption).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Debug, Args)]
struct Deploy {
    /// Target dataset directory (boxes used for training, masks for evaluation only).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Completed `train-aux` run whose generators are deployed. Not needed in full mode.
    #[arg(long, value_name = "DIR")]
    aux_run: Option<PathBuf>,
    /// weak, semi or full.
    #[arg(long)]
    mode: Option<String>,
    /// Fraction of training images supervised by ground truth (semi mode).
    #[arg(long)]
    gt_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct Eval {
    /// Run directory.
    run: PathBuf,
    /// train or val.
    #[arg(long, default_value = "val")]
    split: String,
}

#[derive(Debug, Args)]
struct Report {
    /// Run directories to compare.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::GenData => gen_data(&cli.global),
        Command::TrainAux(a) => train_aux(&cli.global, a),
        Command::Deploy(a) => deploy(&cli.global, a),
        Command::Eval(a) => eval(&cli.global, a),
        Command::Report(a) => report(&cli.global, a),
    }
}

fn configure_threads() -> Result<()> {
    let n = match std::env::var("BOXSEED_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("BOXSEED_THREADS={v:?} is not a thread count"))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    Ok(())
}

/// Resolves the configuration from stored run config (when resuming), the
/// `--config` document, `--set` overrides, `--seed`, then command flags.
fn resolve(g: &Global, base: Option<&RunConfig>, extra: &[String]) -> Result<RunConfig> {
    let mut docs = Vec::new();
    if let Some(b) = base {
        docs.push(serde_json::to_string(b)?);
    }
    if let Some(p) = &g.config {
        docs.push(fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?);
    }
    let mut overrides = g.set.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend_from_slice(extra);
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    Ok(RunConfig::resolve_layers(&refs, &overrides)?)
}

fn out_dir(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
}

fn absolute(p: &Path) -> Result<String> {
    let abs = p.canonicalize().with_context(|| format!("{} does not exist", p.display()))?;
    Ok(abs.to_string_lossy().into_owned())
}

fn read_dataset(p: &Path) -> Result<Dataset> {
    Dataset::read(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn gen_data(g: &Global) -> Result<()> {
    let cfg = resolve(g, None, &[])?;
    let out = out_dir(g)?;
    let run = RunDir::open(out, g.force, false)?;
    let (aux, target) = generate_pair(&cfg.data, cfg.seed)?;
    for (name, ds) in [("aux", &aux), ("target", &target)] {
        ds.write(&run.root().join(name))?;
        println!("{name}: {} train / {} val images", ds.manifest.splits.train.len(), ds.manifest.splits.val.len());
        for c in &ds.manifest.classes {
            println!("  class {:>2}  {}", c.id, c.name);
        }
    }
    Ok(())
}

fn train_aux(g: &Global, a: &TrainAux) -> Result<()> {
    let out = out_dir(g)?;
    let mut extra = Vec::new();
    if let Some(n) = a.stages {
        extra.push(format!("em.n_stages={n}"));
    }
    if a.fixed_lpg {
        extra.push("em.fixed_lpg=true".into());
    }
    if let Some(f) = a.aux_fraction {
        extra.push(format!("em.aux_fraction={f}"));
    }
    let stored = if a.resume && out.join("run.json").is_file() {
        Some(RunRecord::read(out).context("reading the run to resume")?.config)
    } else {
        None
    };
    let cfg = resolve(g, stored.as_ref(), &extra)?;
    let run = RunDir::open(out, g.force && !a.resume, a.resume)?;
    let aux = read_dataset(&a.data)?;
    let start = Instant::now();
    let stages = run_stages(&cfg, &aux, &absolute(&a.data)?, &run, RunOptions { resume: a.resume, stop_after: a.stop_after })?;
    write_json(&run.root().join("timing.json"), &Timing { wall_clock_s: start.elapsed().as_secs_f64() })?;
    for s in &stages {
        println!(
            "stage {}: pseudo mIoU {}  seg mIoU {}",
            s.stage,
            fmt_metric(s.pseudo_miou),
            fmt_metric(s.seg_miou)
        );
    }
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "n/a".into())
}

fn deploy(g: &Global, a: &Deploy) -> Result<()> {
    let out = out_dir(g)?;
    let mut extra = Vec::new();
    if let Some(m) = &a.mode {
        DeployMode::parse(m)?;
        extra.push(format!("deploy.mode=\"{m}\""));
    }
    if let Some(f) = a.gt_fraction {
        extra.push(format!("deploy.gt_fraction={f}"));
    }
    let cfg = resolve(g, None, &extra)?;
    if a.gt_fraction.is_some() && cfg.deploy.mode != DeployMode::Semi {
        bail!("--gt-fraction only applies to --mode semi");
    }
    let mut inputs = BTreeMap::from([("target".to_string(), absolute(&a.data)?)]);
    let generators = match (cfg.deploy.mode, &a.aux_run) {
        (DeployMode::Full, Some(r)) => {
            log::info!("full mode: generator checkpoints in {} are ignored", r.display());
            Vec::new()
        }
        (DeployMode::Full, None) => Vec::new(),
        (_, Some(r)) => {
            inputs.insert("lpg_run".into(), absolute(r)?);
            load_generators(r, cfg.deploy.n_stages).with_context(|| format!("loading generators from {}", r.display()))?
        }
        (_, None) => bail!("--aux-run is required in {} mode", cfg.deploy.mode.name()),
    };
    let target = read_dataset(&a.data)?;
    let run = RunDir::open(out, g.force, false)?;
    let start = Instant::now();
    let outcome = deploy_run(&cfg, &target, &generators, inputs, &run)?;
    write_json(&run.root().join("timing.json"), &Timing { wall_clock_s: start.elapsed().as_secs_f64() })?;
    for m in &outcome.stages {
        println!("stage {}: val mIoU {}  pseudo mIoU {}", m.stage, fmt_metric(m.seg_miou), fmt_metric(m.pseudo_miou));
    }
    Ok(())
}

fn eval(g: &Global, a: &Eval) -> Result<()> {
    if !a.run.join("run.json").is_file() {
        bail!("{} is not a run directory", a.run.display());
    }
    let split = Split::parse(&a.split)?;
    let (stage, report) = evaluate_run(&a.run, split)?;
    let stored = read_stage_metrics(&a.run, stage)?;
    let out = serde_json::json!({
        "run": a.run.to_string_lossy(),
        "stage": stage,
        "split": split.name(),
        "miou": report.mean_iou,
        "per_class": report.per_class_iou,
    });
    let text = serde_json::to_string_pretty(&out)? + "\n";
    print!("{text}");
    if let Some(path) = &g.out {
        if path.exists() && !g.force {
            bail!("{} exists (use --force to overwrite)", path.display());
        }
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if split == Split::Val && stored.seg_miou != Some(report.mean_iou) {
        bail!(
            "recomputed val mIoU {} differs from stored {}",
            report.mean_iou,
            fmt_metric(stored.seg_miou)
        );
    }
    Ok(())
}

fn report(g: &Global, a: &Report) -> Result<()> {
    let cfg = resolve(g, None, &[])?;
    for r in &a.runs {
        if !r.is_dir() {
            bail!("run directory {} does not exist", r.display());
        }
    }
    let out = out_dir(g)?;
    let dir = RunDir::open(out, g.force, false)?;
    let outcome = emit_report(&a.runs, dir.root(), cfg.eval.panels)?;
    for gap in &outcome.gaps {
        log::warn!("incomplete: {gap}");
    }
    println!("report written to {}", dir.root().join("report.md").display());
    Ok(())
}
