//! Analyses of a finished run. Every function is a pure function of the
//! run directory, so reruns write identical bytes.

use std::path::Path;

use anyhow::{anyhow, Context, Result};

use s2dlab::agents::{derive_seed, rng_for, stream, ActMode};
use s2dlab::analysis::{
    action_frequencies, feature_mean_distance, metrics_summary, run_episode, trajectory_heatmap, EpisodeRecord,
    EpisodeStart, Heatmap, Rollout, Summary,
};
use s2dlab::envs::EnvKind;
use s2dlab::nn::Matrix;

use crate::config::EvalMode;
use crate::io::{num, read_metrics, Table};
use crate::run::LoadedRun;

/// One evaluation episode of the final policy.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub index: usize,
    /// Cross-maze goal index; `None` in the open grids.
    pub goal_index: Option<usize>,
    pub held_out: bool,
    pub rollout: Rollout,
}

fn act_mode(run: &LoadedRun) -> ActMode {
    match run.record.experiment.eval_mode() {
        EvalMode::Greedy => ActMode::Greedy,
        EvalMode::Sample => ActMode::Sample,
    }
}

/// `eval_episodes` episodes of the final policy; the cross maze runs that many per goal.
pub fn evaluate(run: &LoadedRun) -> Result<Vec<EvalEpisode>> {
    let params = run.final_params()?;
    let mut env = run.env()?;
    let n = run.record.experiment.analyses.eval_episodes;
    let seed = run.record.seed;
    let mut rng = rng_for(seed, stream::EVAL);
    let mode = act_mode(run);
    let mut out = Vec::new();
    if env.kind() == EnvKind::CrossMaze {
        let train_goals = run.plan.train.env.train_goals.clone();
        for g in 0..3 {
            for i in 0..n {
                let rollout = run_episode(&run.spec, params, &mut env, EpisodeStart::GoalIndex(g), mode, &mut rng)?;
                out.push(EvalEpisode {
                    index: out.len(),
                    goal_index: Some(g),
                    held_out: !train_goals.contains(&g),
                    rollout: with_episode(rollout, i as u64, seed),
                });
            }
        }
    } else {
        let base = derive_seed(seed, stream::EVAL);
        for i in 0..n {
            let start = EpisodeStart::Seeded(derive_seed(base, i as u64));
            let rollout = run_episode(&run.spec, params, &mut env, start, mode, &mut rng)?;
            out.push(EvalEpisode {
                index: i,
                goal_index: None,
                held_out: false,
                rollout: with_episode(rollout, i as u64, seed),
            });
        }
    }
    Ok(out)
}

fn with_episode(mut r: Rollout, episode: u64, seed: u64) -> Rollout {
    r.record.episode = episode;
    r.record.seed = seed;
    r
}

pub const EVAL_HEADER: [&str; 8] = [
    "episode",
    "goal_index",
    "goal_x",
    "goal_y",
    "held_out",
    "length",
    "env_return",
    "success",
];

pub fn eval_table(evals: &[EvalEpisode]) -> Table {
    let mut t = Table::new(&EVAL_HEADER);
    for e in evals {
        let r = &e.rollout.record;
        t.row([
            e.index.to_string(),
            e.goal_index.map_or("-1".to_string(), |g| g.to_string()),
            e.rollout.goal.x.to_string(),
            e.rollout.goal.y.to_string(),
            u8::from(e.held_out).to_string(),
            r.length.to_string(),
            num(r.env_return),
            u8::from(r.success).to_string(),
        ]);
    }
    t
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "run_id",
    "seed",
    "window",
    "success_rate",
    "mean_len",
    "std_len",
    "mean_return",
    "std_return",
];

/// Training windows (all episodes, episodes started in the last 10% of
/// the budget) and evaluation windows.
pub fn summary_table(run: &LoadedRun, evals: &[EvalEpisode]) -> Result<Table> {
    let metrics = read_metrics(&run.dir.join("metrics.csv"))?;
    let to_record = |m: &crate::io::MetricsRow| EpisodeRecord {
        seed: run.record.seed,
        episode: m.episode,
        length: m.length,
        env_return: m.env_return,
        shaped_return: m.shaped_return,
        success: m.success,
        positions: Vec::new(),
    };
    let budget = run.plan.train.budget;
    let cutoff = budget - budget / 10;
    let all: Vec<EpisodeRecord> = metrics.iter().map(to_record).collect();
    let last: Vec<EpisodeRecord> = metrics.iter().filter(|m| m.clock >= cutoff).map(to_record).collect();

    let mut windows: Vec<(String, Vec<EpisodeRecord>)> = vec![
        ("train_all".into(), all),
        ("train_final10".into(), last),
        ("eval".into(), evals.iter().map(|e| e.rollout.record.clone()).collect()),
    ];
    if evals.iter().any(|e| e.goal_index.is_some()) {
        for g in 0..3 {
            windows.push((format!("eval_goal{g}"), pick(evals, |e| e.goal_index == Some(g))));
        }
        windows.push(("eval_train".into(), pick(evals, |e| !e.held_out)));
        windows.push(("eval_held_out".into(), pick(evals, |e| e.held_out)));
    }
    let mut t = Table::new(&SUMMARY_HEADER);
    for (name, records) in windows {
        if records.is_empty() {
            continue;
        }
        let s: Summary = metrics_summary(&records).with_context(|| format!("summary window {name}"))?;
        t.row([
            run.id(),
            run.record.seed.to_string(),
            name,
            num(s.success_rate),
            num(s.mean_len),
            num(s.std_len),
            num(s.mean_return),
            num(s.std_return),
        ]);
    }
    Ok(t)
}

fn pick(evals: &[EvalEpisode], keep: impl Fn(&EvalEpisode) -> bool) -> Vec<EpisodeRecord> {
    evals
        .iter()
        .filter(|e| keep(e))
        .map(|e| e.rollout.record.clone())
        .collect()
}

pub const ACTIONS_HEADER: [&str; 3] = ["checkpoint_step", "action_id", "frequency"];

/// Sampled action frequencies at every checkpoint, on the same episode seeds.
pub fn actions_table(run: &LoadedRun) -> Result<Table> {
    let n = run.record.experiment.analyses.action_episodes;
    let base = derive_seed(run.record.seed, stream::ACTIONS);
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(base, i)).collect();
    let mut env = run.env()?;
    let mut t = Table::new(&ACTIONS_HEADER);
    for (entry, bundle) in &run.checkpoints {
        let mut rng = rng_for(run.record.seed, stream::ACTIONS);
        let freq = action_frequencies(&run.spec, &bundle.params, &mut env, &seeds, &mut rng)?;
        for (a, f) in freq.iter().enumerate() {
            t.row([entry.global_step.to_string(), a.to_string(), num(*f)]);
        }
    }
    Ok(t)
}

pub const HEATMAP_HEADER: [&str; 3] = ["x", "y", "visits"];
pub const PATH_HEADER: [&str; 4] = ["step", "x", "y", "multiplicity"];

pub fn heatmap(run: &LoadedRun, evals: &[EvalEpisode]) -> Result<Heatmap> {
    let env = run.env()?;
    let records: Vec<EpisodeRecord> = evals.iter().map(|e| e.rollout.record.clone()).collect();
    Ok(trajectory_heatmap(&records, env.width(), env.height())?)
}

pub fn heatmap_table(h: &Heatmap) -> Table {
    let mut t = Table::new(&HEATMAP_HEADER);
    for y in 0..h.height {
        for x in 0..h.width {
            t.row([
                x.to_string(),
                y.to_string(),
                h.counts[(y * h.width + x) as usize].to_string(),
            ]);
        }
    }
    t
}

/// The most frequent successful path, one row per position (header only if none).
pub fn path_table(h: &Heatmap) -> Table {
    let mut t = Table::new(&PATH_HEADER);
    for (i, p) in h.most_frequent_path.iter().flatten().enumerate() {
        t.row([
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            h.path_multiplicity.to_string(),
        ]);
    }
    t
}

/// Observations of the first evaluation episode of `source` whose length
/// lies in the configured window.
pub fn feature_trajectory(source: &LoadedRun) -> Result<Matrix<f64>> {
    let evals = evaluate(source)?;
    let (lo, hi) = source
        .record
        .experiment
        .analyses
        .feature_window
        .map_or((1, source.plan.train.env.max_steps), |[a, b]| (a, b));
    let ep = evals
        .iter()
        .find(|e| (lo..=hi).contains(&e.rollout.record.length))
        .ok_or_else(|| anyhow!("{}: no evaluation episode with length in [{lo}, {hi}]", source.id()))?;
    Ok(Matrix::from_rows(&ep.rollout.observations)?)
}

pub const FEATURES_HEADER: [&str; 2] = ["checkpoint_step", "mean_pairwise_distance"];

pub fn features_table(run: &LoadedRun, trajectory: &Matrix<f64>) -> Result<Table> {
    let cps: Vec<(u64, &[f64])> = run
        .checkpoints
        .iter()
        .map(|(e, b)| (e.global_step, &b.params[..]))
        .collect();
    let curve = feature_mean_distance(&run.spec, &cps, trajectory)?;
    let mut t = Table::new(&FEATURES_HEADER);
    for (s, d) in curve.steps.iter().zip(&curve.distances) {
        t.row([s.to_string(), num(*d)]);
    }
    Ok(t)
}

/// Which analyses `analyze_run` writes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection {
    pub actions: bool,
    pub heatmap: bool,
    pub sharpness: bool,
}

/// Writes eval and summary CSVs plus the selected analyses into the run directory.
pub fn analyze_run(run: &LoadedRun, sel: Selection) -> Result<()> {
    let dir: &Path = &run.dir;
    let evals = evaluate(run)?;
    eval_table(&evals).save(&dir.join("eval.csv"))?;
    summary_table(run, &evals)?.save(&dir.join("summary.csv"))?;
    if sel.actions {
        actions_table(run)?.save(&dir.join("actions.csv"))?;
    }
    if sel.heatmap {
        let h = heatmap(run, &evals)?;
        heatmap_table(&h).save(&dir.join("heatmap.csv"))?;
        path_table(&h).save(&dir.join("frequent_path.csv"))?;
    }
    if sel.sharpness {
        crate::protocol::sharpness_table(run)?.save(&dir.join("sharpness.csv"))?;
    }
    Ok(())
}
