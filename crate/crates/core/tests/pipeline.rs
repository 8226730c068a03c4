//! End-to-end runs of the EM trainer and deployment on a tiny configuration.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use boxseed::config::RunConfig;
use boxseed::deploy::{deploy_run, load_generators};
use boxseed::em::{load_stage_checkpoints, pseudo_mask, run_stages, stage_generators, Prepared, RunOptions};
use boxseed::eval::read_stage_metrics;
use boxseed::nets::seg_forward;
use boxseed::rundir::RunDir;
use boxseed::synth::{generate_pair, read_mask, Dataset, Split};
use boxseed::{Lpg, SegNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const TINY: &str = r#"{
  "seed": 5,
  "data": {"image_size": 32, "aux_train": 16, "aux_val": 4, "target_train": 12, "target_val": 4,
           "min_radius": 4.0, "max_radius": 9.0},
  "nets": {"seg_widths": [4, 8], "lpg_widths": [4, 8]},
  "em": {"n_stages": 3, "m_step": {"max_iter": 4}, "e_step": {"max_iter": 4}},
  "deploy": {"optim": {"max_iter": 4}}
}"#;

struct Fixture {
    dir: TempDir,
    cfg: RunConfig,
    aux: Dataset,
    target: Dataset,
}

impl Fixture {
    fn new(overrides: &[&str]) -> Fixture {
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        let cfg = RunConfig::resolve(Some(TINY), &overrides).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (aux, target) = generate_pair(&cfg.data, cfg.seed).unwrap();
        aux.write(&dir.path().join("aux")).unwrap();
        target.write(&dir.path().join("target")).unwrap();
        Fixture { dir, cfg, aux, target }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn em(&self, name: &str, opts: RunOptions) -> boxseed::Result<PathBuf> {
        let root = self.path(name);
        let run = RunDir::open(&root, false, opts.resume)?;
        run_stages(&self.cfg, &self.aux, &self.path("aux").to_string_lossy(), &run, opts)?;
        Ok(root)
    }
}

#[test]
fn em_run_publishes_every_stage_and_respects_boxes() {
    let fx = Fixture::new(&[]);
    let root = fx.em("em", RunOptions::default()).unwrap();
    let stages = load_stage_checkpoints(&root).unwrap();
    assert_eq!(stages.iter().map(|s| s.stage).collect::<Vec<_>>(), vec![1, 2, 3]);
    for s in &stages {
        assert!(s.pseudo_miou.is_some() && s.seg_miou.is_some());
        assert_eq!(s.config_hash, fx.cfg.hash());
    }
    for k in 0..=3 {
        for split in [Split::Train, Split::Val] {
            for sample in fx.aux.split(split) {
                let m = read_mask(&root.join(format!("stage{k}/pseudo/{}.png", sample.id))).unwrap();
                boxseed::em::check_containment(&m, &sample.boxes).unwrap();
            }
        }
    }
    let val = fx.aux.split(Split::Val).count();
    assert_eq!(fs::read_dir(root.join("predictions")).unwrap().count(), val);
}

#[test]
fn runs_are_deterministic() {
    let fx = Fixture::new(&["em.n_stages=2"]);
    let a = fx.em("a", RunOptions::default()).unwrap();
    let b = fx.em("b", RunOptions::default()).unwrap();
    assert_eq!(common::snapshot(&a), common::snapshot(&b));
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let fx = Fixture::new(&[]);
    let whole = fx.em("whole", RunOptions::default()).unwrap();
    let part = fx.em("part", RunOptions { resume: false, stop_after: Some(1) }).unwrap();
    assert!(!part.join("stage2").exists());
    // A half-written stage must be discarded on resume.
    fs::create_dir_all(part.join("stage2/seg")).unwrap();
    fs::write(part.join("stage2/seg/meta.json"), "{").unwrap();
    fx.em("part", RunOptions { resume: true, stop_after: None }).unwrap();
    assert_eq!(common::snapshot(&whole), common::snapshot(&part));
}

#[test]
fn resume_rejects_a_changed_config() {
    let mut fx = Fixture::new(&[]);
    fx.em("r", RunOptions { resume: false, stop_after: Some(1) }).unwrap();
    fx.cfg.em.e_step.max_iter += 1;
    let err = fx.em("r", RunOptions { resume: true, stop_after: None }).unwrap_err().to_string();
    assert!(err.contains("hash"), "{err}");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let fx = Fixture::new(&["em.n_stages=1"]);
    let root = fx.em("em", RunOptions::default()).unwrap();
    let lpg = root.join("stage1/lpg");
    let victim = fs::read_dir(&lpg)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e != "json"))
        .unwrap();
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_stage_checkpoints(&root).is_err());
    assert!(stage_generators(&root).is_err());
}

#[test]
fn deployment_modes() {
    let fx = Fixture::new(&["em.n_stages=2"]);
    let em = fx.em("em", RunOptions::default()).unwrap();
    let gens = load_generators(&em, None).unwrap();
    assert_eq!(gens.len(), 2);
    let inputs = BTreeMap::new();

    for mode in ["weak", "semi"] {
        let mut cfg = fx.cfg.clone();
        cfg.deploy.mode = boxseed::deploy::DeployMode::parse(mode).unwrap();
        let run = RunDir::open(&fx.path(mode), false, false).unwrap();
        let out = deploy_run(&cfg, &fx.target, &gens, inputs.clone(), &run).unwrap();
        assert_eq!(out.stages.len(), 3);
        let expected_gt = if mode == "weak" { 0 } else { 2 };
        assert!(out.stages.iter().all(|s| s.gt_images == Some(expected_gt)));
        for k in 0..=2 {
            for sample in fx.target.split(Split::Train) {
                let m = read_mask(&fx.path(mode).join(format!("stage{k}/pseudo/{}.png", sample.id))).unwrap();
                if mode == "weak" {
                    boxseed::em::check_containment(&m, &sample.boxes).unwrap();
                }
            }
        }
    }

    // Full mode never touches a generator: garbage generators give the same run.
    let mut cfg = fx.cfg.clone();
    cfg.deploy.mode = boxseed::deploy::DeployMode::Full;
    let junk: Vec<Lpg> = (0..2).map(|i| Lpg::new(&[2], &mut ChaCha8Rng::seed_from_u64(i)).unwrap()).collect();
    let a = deploy_run(&cfg, &fx.target, &[], inputs.clone(), &RunDir::open(&fx.path("full_a"), false, false).unwrap()).unwrap();
    let b = deploy_run(&cfg, &fx.target, &junk, inputs, &RunDir::open(&fx.path("full_b"), false, false).unwrap()).unwrap();
    assert_eq!(a.stages, b.stages);
    assert!(!fx.path("full_a/stage1/pseudo").exists());
    assert_eq!(read_stage_metrics(&fx.path("full_a"), 2).unwrap().gt_images, Some(12));
}

#[test]
fn fixed_generator_run_reuses_the_last_generator() {
    let fx = Fixture::new(&["em.n_stages=2", "em.fixed_lpg=true"]);
    let root = fx.em("fixed", RunOptions::default()).unwrap();
    let gens = stage_generators(&root).unwrap();
    assert_eq!(gens.iter().map(|g| g.0).collect::<Vec<_>>(), vec![2, 2]);
    assert_eq!(gens[0].1.params, gens[1].1.params);
    for k in 1..=2 {
        assert!(read_stage_metrics(&root, k).unwrap().fixed_pseudo_miou.is_some());
    }
}

#[test]
fn generator_output_is_empty_without_boxes() {
    let fx = Fixture::new(&[]);
    let data = Prepared::new(&fx.aux, Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = SegNet::new(&[4, 8], data.num_classes, &mut rng).unwrap();
    let lpg = Lpg::new(&[4, 8], &mut rng).unwrap();
    for i in 0..data.len() {
        let probs = seg_forward(&data.images[i], &seg).unwrap();
        let m = pseudo_mask(&lpg, &data.images[i], &probs, &[]).unwrap();
        assert!(m.data.iter().all(|&c| c == 0));
    }
}
