//! `run`: trains every (baseline, seed) pair on a worker pool, writes each
//! run's artifacts, then the cross-run passes and the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use s2dlab::agents::train;
use s2dlab::envs::EnvKind;
use s2dlab::nn::write_checkpoint;

use crate::analyze::{analyze_run, feature_trajectory, features_table, Selection};
use crate::config::{Baseline, ExperimentConfig, RunPlan};
use crate::io::{metrics_table, num, read_metrics, replay_table, write_atomic, Table, CHECKPOINTS_HEADER};
use crate::protocol::{compare_landscapes, Snapshot};
use crate::render::{render_file, RenderOptions};
use crate::run::{LoadedRun, RunRecord, DONE_FILE, RUN_FILE};

pub const CODE_VERSION: &str = concat!("s2dlab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    /// Wipe and redo partial or stale run directories.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Trained,
    /// Completed earlier with the same config hash.
    Cached,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct Report {
    pub hash: String,
    pub runs: Vec<(String, RunStatus)>,
    /// Wall-clock seconds per run, in `runs` order; not written to the manifest.
    pub seconds: Vec<f64>,
    /// Cross-run passes: (name, error if any).
    pub passes: Vec<(String, Option<String>)>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.runs.iter().all(|r| !matches!(r.1, RunStatus::Failed(_))) && self.passes.iter().all(|p| p.1.is_none())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn run_dir(out: &Path, baseline: Baseline, seed: u64) -> PathBuf {
    out.join(baseline.name()).join(seed.to_string())
}

/// Runs the whole experiment. Individual run failures are reported, not returned.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    fs::create_dir_all(&opts.out).with_context(|| format!("creating output root {}", opts.out.display()))?;
    let hash = cfg.hash();
    let mut plans = Vec::new();
    for b in cfg.baselines() {
        for &s in &cfg.seeds {
            plans.push(cfg.plan(b, s)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .context("building worker pool")?;
    let timed: Vec<(String, RunStatus, f64)> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let started = Instant::now();
                let status = match execute(cfg, &hash, plan, opts) {
                    Ok(s) => s,
                    Err(e) => RunStatus::Failed(format!("{e:#}")),
                };
                (plan.id(), status, started.elapsed().as_secs_f64())
            })
            .collect()
    });
    let seconds = timed.iter().map(|t| t.2).collect();
    let runs: Vec<(String, RunStatus)> = timed.into_iter().map(|t| (t.0, t.1)).collect();

    let done = |b: Baseline, s: u64| {
        runs.iter()
            .any(|(id, st)| *id == format!("{b}/{s}") && !matches!(st, RunStatus::Failed(_)))
    };
    let mut passes = Vec::new();
    if cfg.analyses.features {
        for plan in &plans {
            if !done(plan.baseline, plan.seed) {
                continue;
            }
            let r = features_pass(cfg, plan, &opts.out, done(Baseline::OnlySparse, plan.seed));
            passes.push((format!("features {}", plan.id()), r.err().map(|e| format!("{e:#}"))));
        }
    }
    if cfg.analyses.landscape {
        for (a, b) in [
            (Baseline::S2d, Baseline::OnlySparse),
            (Baseline::D2s, Baseline::OnlyDense),
        ] {
            for &seed in &cfg.seeds {
                if !(cfg.baselines().contains(&a) && cfg.baselines().contains(&b)) {
                    continue;
                }
                let name = format!("landscape {a}_vs_{b}/{seed}");
                let r = if done(a, seed) && done(b, seed) {
                    landscape_pass(cfg, &hash, a, b, seed, &opts.out)
                } else {
                    Err(anyhow!("a run of the pair failed"))
                };
                passes.push((name, r.err().map(|e| format!("{e:#}"))));
            }
        }
    }
    let r = curves_pass(cfg, &opts.out, &done);
    passes.push(("curves".into(), r.err().map(|e| format!("{e:#}"))));

    let report = Report {
        hash,
        runs,
        seconds,
        passes,
    };
    write_manifest(&opts.out, &report)?;
    Ok(report)
}

fn execute(cfg: &ExperimentConfig, hash: &str, plan: &RunPlan, opts: &RunOptions) -> Result<RunStatus> {
    let dir = run_dir(&opts.out, plan.baseline, plan.seed);
    if dir.exists() {
        let same = RunRecord::read(&dir).map(|r| r.config_hash == hash).unwrap_or(false);
        if same && dir.join(DONE_FILE).exists() {
            return Ok(RunStatus::Cached);
        }
        if !opts.force {
            let why = if same {
                "an unfinished run"
            } else {
                "a run from a different config"
            };
            bail!("{} holds {why}; refusing to overwrite without --force", dir.display());
        }
        fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let record = RunRecord {
        baseline: plan.baseline,
        seed: plan.seed,
        config_hash: hash.to_string(),
        experiment: cfg.clone(),
    };
    write_atomic(&dir.join(RUN_FILE), record.to_toml().as_bytes())?;

    let out = train(&plan.train).with_context(|| format!("training {}", plan.id()))?;
    metrics_table(&out.metrics).save(&dir.join("metrics.csv"))?;
    let mut index = Table::new(&CHECKPOINTS_HEADER);
    for (clock, bundle) in &out.checkpoints {
        let file = format!("ckpt_{}.txt", bundle.global_step);
        write_atomic(&dir.join(&file), write_checkpoint(bundle).as_bytes())?;
        index.row([
            clock.to_string(),
            bundle.global_step.to_string(),
            bundle.stage.to_string(),
            file,
        ]);
    }
    index.save(&dir.join("checkpoints.csv"))?;
    if let Some(replay) = &out.replay {
        replay_table(replay.iter(), out.spec.input_size()).save(&dir.join("replay.csv"))?;
    }

    let run = LoadedRun::load_unchecked(&dir)?;
    let a = &cfg.analyses;
    analyze_run(
        &run,
        Selection {
            actions: a.actions,
            heatmap: a.heatmap,
            sharpness: a.sharpness,
        },
    )?;
    if a.heatmap {
        let env = run.env()?;
        let start = env.start();
        let goal = (env.kind() == EnvKind::Fixed4).then(|| (env.goal().x, env.goal().y));
        let opts = RenderOptions {
            title: Some(format!("{} evaluation visits", run.id())),
            start: Some((start.x, start.y)),
            goal,
        };
        render_file(&dir.join("heatmap.csv"), &dir.join("heatmap.svg"), &opts)?;
    }
    write_atomic(&dir.join(DONE_FILE), format!("{hash}\n").as_bytes())?;
    Ok(RunStatus::Trained)
}

/// Feature curve of a run along one trajectory shared by every baseline of its seed.
fn features_pass(cfg: &ExperimentConfig, plan: &RunPlan, out: &Path, sparse_done: bool) -> Result<()> {
    let run = LoadedRun::load(&run_dir(out, plan.baseline, plan.seed))?;
    let source = if sparse_done && cfg.baselines().contains(&Baseline::OnlySparse) {
        LoadedRun::load(&run_dir(out, Baseline::OnlySparse, plan.seed))?
    } else {
        run.clone()
    };
    let traj = feature_trajectory(&source)?;
    features_table(&run, &traj)?.save(&run.dir.join("features.csv"))
}

fn landscape_pass(cfg: &ExperimentConfig, hash: &str, a: Baseline, b: Baseline, seed: u64, out: &Path) -> Result<()> {
    let dir = out.join("landscape").join(format!("{a}_vs_{b}")).join(seed.to_string());
    let marker = dir.join(DONE_FILE);
    if fs::read_to_string(&marker).map(|s| s.trim() == hash).unwrap_or(false) {
        return Ok(());
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    let ra = LoadedRun::load(&run_dir(out, a, seed))?;
    let rb = LoadedRun::load(&run_dir(out, b, seed))?;
    let t1 = cfg.transitions()?[0];
    let snaps: Vec<Snapshot> = cfg
        .analyses
        .landscape_offsets
        .iter()
        .filter(|&&o| t1 + o <= cfg.budget.amount)
        .map(|&o| Snapshot::AfterTransition(o))
        .collect();
    if snaps.is_empty() {
        bail!("no landscape offset fits inside the budget");
    }
    compare_landscapes(&ra, &rb, &snaps, &dir)?;
    write_atomic(&marker, format!("{hash}\n").as_bytes())
}

pub const CURVES_HEADER: [&str; 4] = ["series", "seed", "x", "y"];

/// Training success rate per clock bin for every completed run, plus its SVG.
fn curves_pass(cfg: &ExperimentConfig, out: &Path, done: &dyn Fn(Baseline, u64) -> bool) -> Result<()> {
    let bins = cfg.analyses.curve_bins as u64;
    let budget = cfg.budget.amount;
    let width = budget.div_ceil(bins).max(1);
    let mut t = Table::new(&CURVES_HEADER);
    let mut any = false;
    for b in cfg.baselines() {
        for &seed in &cfg.seeds {
            if !done(b, seed) {
                continue;
            }
            let metrics = read_metrics(&run_dir(out, b, seed).join("metrics.csv"))?;
            let mut acc = vec![(0usize, 0usize); bins as usize];
            for m in &metrics {
                let k = ((m.clock / width) as usize).min(acc.len() - 1);
                acc[k].0 += usize::from(m.success);
                acc[k].1 += 1;
            }
            for (k, (s, n)) in acc.iter().enumerate() {
                if *n == 0 {
                    continue;
                }
                any = true;
                let x = (k as u64 * width + width / 2).min(budget);
                t.row([
                    b.name().to_string(),
                    seed.to_string(),
                    x.to_string(),
                    num(*s as f64 / *n as f64),
                ]);
            }
        }
    }
    let path = out.join("curves.csv");
    t.save(&path)?;
    if any {
        let opts = RenderOptions {
            title: Some("training success rate (mean ± 1 std over seeds)".into()),
            ..RenderOptions::default()
        };
        render_file(&path, &out.join("curves.svg"), &opts)?;
    }
    Ok(())
}

fn write_manifest(out: &Path, report: &Report) -> Result<()> {
    let mut s = format!("config_hash {}\ncode_version {CODE_VERSION}\n", report.hash);
    for (id, st) in &report.runs {
        let status = match st {
            RunStatus::Trained | RunStatus::Cached => "ok".to_string(),
            RunStatus::Failed(e) => format!("failed: {}", e.replace('\n', " ")),
        };
        s.push_str(&format!("run {id} {status}\n"));
    }
    for (name, err) in &report.passes {
        match err {
            None => s.push_str(&format!("pass {name} ok\n")),
            Some(e) => s.push_str(&format!("pass {name} failed: {}\n", e.replace('\n', " "))),
        }
    }
    write_atomic(&out.join("manifest.txt"), s.as_bytes())
}
