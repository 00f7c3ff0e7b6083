//! Frozen probe batches, per-checkpoint sharpness and the paired
//! landscape comparison between two runs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use s2dlab::agents::{
    act, derive_seed, log_softmax, normalize_advantages, rng_for, stream, ActMode, PolicyRunner, Segment,
    StoredTransition, SurrogateBatch, SurrogateLoss, TdBatch, TdLoss,
};
use s2dlab::envs::{GridEnv, GridPos};
use s2dlab::landscape::{axis, cross_density, make_directions, sharpness, LandscapeGrid, LossFunction};
use s2dlab::nn::{Matrix, NetSpec};
use s2dlab::shaping::{stage_bonus, RewardStage};

use crate::config::AgentSection;
use crate::io::{num, Table};
use crate::render::{render_grid, RenderOptions};
use crate::run::LoadedRun;

/// One rolled-out episode kept for surrogate probes.
#[derive(Debug, Clone)]
pub struct ProbeEpisode {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// `len + 1` positions.
    pub positions: Vec<GridPos>,
    pub env_rewards: Vec<f64>,
    /// The last kept step entered the goal.
    pub reached: bool,
    pub goal: GridPos,
}

/// Transitions frozen once and re-labelled under each reward definition.
#[derive(Debug, Clone)]
pub enum Probe {
    Td {
        items: Vec<StoredTransition>,
        gamma: f64,
    },
    Surrogate {
        episodes: Vec<ProbeEpisode>,
        gamma: f64,
        clip: f64,
    },
}

/// Evaluator built from a probe for one checkpoint and one reward definition.
pub enum ProbeLoss {
    Td(TdLoss),
    Surrogate(SurrogateLoss),
}

impl LossFunction<f64> for ProbeLoss {
    fn loss(&self, params: &[f64]) -> s2dlab::Result<f64> {
        match self {
            ProbeLoss::Td(l) => l.loss(params),
            ProbeLoss::Surrogate(l) => l.loss(params),
        }
    }

    fn loss_and_grad(&self, params: &[f64]) -> s2dlab::Result<(f64, Vec<f64>)> {
        match self {
            ProbeLoss::Td(l) => l.loss_and_grad(params),
            ProbeLoss::Surrogate(l) => l.loss_and_grad(params),
        }
    }

    fn batch_fingerprint(&self) -> u64 {
        match self {
            ProbeLoss::Td(l) => l.batch_fingerprint(),
            ProbeLoss::Surrogate(l) => l.batch_fingerprint(),
        }
    }
}

fn relabel(
    stage: &RewardStage,
    goal: GridPos,
    pos: GridPos,
    action: usize,
    next: GridPos,
    r_env: f64,
    done: bool,
) -> f64 {
    r_env + stage_bonus(&stage.bound_to(goal), pos, action, next, done)
}

impl Probe {
    /// `n` transitions drawn with replacement from a replay memory.
    pub fn from_replay(replay: &[StoredTransition], n: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if replay.is_empty() {
            bail!("replay memory is empty; cannot build a probe batch");
        }
        let items = (0..n).map(|_| replay[rng.gen_range(0..replay.len())].clone()).collect();
        Ok(Probe::Td { items, gamma })
    }

    /// Fresh sampled rollouts of a policy, cut to exactly `n` steps.
    pub fn from_rollouts(
        spec: &NetSpec,
        params: &[f64],
        env: &mut GridEnv,
        n: usize,
        gamma: f64,
        clip: f64,
        master: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(master, stream::PROBE);
        let env_seeds = derive_seed(master, stream::PROBE) ^ 0x9e37_79b9;
        let mut episodes = Vec::new();
        let mut total = 0;
        let mut k = 0u64;
        while total < n {
            let mut obs = env.reset(derive_seed(env_seeds, k));
            k += 1;
            let mut runner = PolicyRunner::new(spec, params);
            let mut ep = ProbeEpisode {
                obs: Vec::new(),
                actions: Vec::new(),
                positions: vec![obs.agent_pos],
                env_rewards: Vec::new(),
                reached: false,
                goal: env.goal(),
            };
            while total < n {
                let a = act(&runner.outputs(&obs.features)?, ActMode::Sample, &mut rng);
                let step = env.step(a)?;
                ep.obs.push(std::mem::take(&mut obs.features));
                ep.actions.push(a);
                ep.positions.push(step.obs.agent_pos);
                ep.env_rewards.push(step.reward);
                ep.reached = step.reached_goal;
                total += 1;
                obs = step.obs;
                if step.done {
                    break;
                }
            }
            episodes.push(ep);
        }
        Ok(Probe::Surrogate { episodes, gamma, clip })
    }

    /// Loss of `theta` on the frozen batch with rewards from `stage`.
    ///
    /// TD targets come from `theta` itself; surrogate ratios are taken
    /// against `theta`'s own action probabilities, so each checkpoint is
    /// probed around its own operating point.
    pub fn loss(&self, spec: &NetSpec, theta: &[f64], stage: &RewardStage) -> Result<ProbeLoss> {
        match self {
            Probe::Td { items, gamma } => {
                let relabelled: Vec<StoredTransition> = items
                    .iter()
                    .map(|t| StoredTransition {
                        reward: relabel(stage, t.goal, t.pos, t.action, t.next_pos, t.reward_env, t.done),
                        ..t.clone()
                    })
                    .collect();
                let batch = TdBatch::from_transitions(&relabelled)?;
                Ok(ProbeLoss::Td(TdLoss::new(spec, theta, batch, *gamma)?))
            }
            Probe::Surrogate { episodes, gamma, clip } => {
                let mut advantages: Vec<f64> = Vec::new();
                for ep in episodes {
                    let n = ep.actions.len();
                    let mut to_go = vec![0.0; n];
                    let mut acc = 0.0;
                    for t in (0..n).rev() {
                        let done = ep.reached && t + 1 == n;
                        let r = relabel(
                            stage,
                            ep.goal,
                            ep.positions[t],
                            ep.actions[t],
                            ep.positions[t + 1],
                            ep.env_rewards[t],
                            done,
                        );
                        acc = r + gamma * acc;
                        to_go[t] = acc;
                    }
                    advantages.extend(to_go);
                }
                normalize_advantages(&mut advantages);

                let hidden = spec.recurrent.map(|r| vec![0.0; r.hidden_size]);
                let mut segments = Vec::new();
                let (mut rows, mut actions, mut olds): (Vec<&[f64]>, Vec<usize>, Vec<f64>) = Default::default();
                let mut offset = 0;
                for ep in episodes {
                    let mut runner = PolicyRunner::new(spec, theta);
                    let mut old = Vec::with_capacity(ep.actions.len());
                    for (o, &a) in ep.obs.iter().zip(&ep.actions) {
                        old.push(log_softmax(&runner.outputs(o)?)[a]);
                    }
                    let end = offset + ep.actions.len();
                    if hidden.is_some() {
                        segments.push(Segment {
                            obs: Matrix::from_rows(&ep.obs)?,
                            actions: ep.actions.clone(),
                            old_log_probs: old,
                            advantages: advantages[offset..end].to_vec(),
                            h0: hidden.clone(),
                        });
                    } else {
                        rows.extend(ep.obs.iter().map(Vec::as_slice));
                        actions.extend(&ep.actions);
                        olds.extend(old);
                    }
                    offset = end;
                }
                if hidden.is_none() {
                    // feed-forward rows are independent, so one segment holds the whole batch
                    segments.push(Segment {
                        obs: Matrix::from_rows(&rows)?,
                        actions,
                        old_log_probs: olds,
                        advantages,
                        h0: None,
                    });
                }
                Ok(ProbeLoss::Surrogate(SurrogateLoss {
                    spec: spec.clone(),
                    batch: SurrogateBatch { segments },
                    clip: *clip,
                }))
            }
        }
    }
}

/// Probe batch for a run: its replay memory (DQN) or rollouts of `policy` (PPO).
pub fn probe_for(run: &LoadedRun, policy: &[f64], n: usize) -> Result<Probe> {
    let master = run.record.seed;
    match &run.record.experiment.agent {
        AgentSection::Dqn(d) => {
            let replay = run.replay()?;
            Probe::from_replay(&replay, n, d.gamma, &mut rng_for(master, stream::PROBE))
        }
        AgentSection::Ppo(p) => {
            let mut env = run.env()?;
            Probe::from_rollouts(&run.spec, policy, &mut env, n, p.gamma, p.clip, master)
        }
    }
}

pub const SHARPNESS_HEADER: [&str; 7] = [
    "run_id",
    "seed",
    "checkpoint_step",
    "rho",
    "sharpness",
    "gradient_norm",
    "degenerate_flag",
];

/// Sharpness of every checkpoint of a run on one frozen batch, under the run's final reward.
pub fn sharpness_table(run: &LoadedRun) -> Result<Table> {
    let a = &run.record.experiment.analyses;
    let last = run
        .checkpoints
        .last()
        .ok_or_else(|| anyhow!("run has no checkpoints"))?;
    let probe = probe_for(run, &last.1.params, a.probe_batch)?;
    let stage = run
        .plan
        .train
        .curriculum
        .stages
        .last()
        .expect("non-empty curriculum")
        .clone();
    let mut t = Table::new(&SHARPNESS_HEADER);
    for (entry, bundle) in &run.checkpoints {
        let loss = probe.loss(&run.spec, &bundle.params, &stage)?;
        let rep = sharpness(&loss, &bundle.params, a.rho)
            .with_context(|| format!("sharpness at checkpoint {}", entry.global_step))?;
        t.row([
            run.id(),
            run.record.seed.to_string(),
            entry.global_step.to_string(),
            num(rep.rho),
            num(rep.sharpness),
            num(rep.gradient_norm),
            u8::from(rep.degenerate).to_string(),
        ]);
    }
    Ok(t)
}

pub const LANDSCAPE_HEADER: [&str; 5] = ["checkpoint_step", "alpha", "beta", "loss", "overflow_flag"];

pub fn grid_table(grid: &LandscapeGrid<f64>) -> Table {
    let mut t = Table::new(&LANDSCAPE_HEADER);
    for (i, &a) in grid.alphas.iter().enumerate() {
        for (j, &b) in grid.betas.iter().enumerate() {
            t.row([
                grid.checkpoint_step.to_string(),
                num(a),
                num(b),
                num(grid.losses.get(i, j)),
                u8::from(grid.overflowed(i, j)).to_string(),
            ]);
        }
    }
    t
}

/// Requested snapshot for a comparison, in the runs' clock unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Snapshot {
    Clock(u64),
    /// Clock value this far after the first transition.
    AfterTransition(u64),
}

/// Reward definitions for a pair: stages of A, then any new ones of B, at most two.
fn definitions(a: &LoadedRun, b: &LoadedRun) -> Vec<RewardStage> {
    let mut defs: Vec<RewardStage> = Vec::new();
    for s in a
        .plan
        .train
        .curriculum
        .stages
        .iter()
        .chain(&b.plan.train.curriculum.stages)
    {
        if !defs.contains(s) {
            defs.push(s.clone());
        }
    }
    defs.truncate(2);
    defs
}

fn definition_label(stage: &RewardStage) -> &'static str {
    if stage.shaping_enabled {
        "dense"
    } else {
        "sparse"
    }
}

/// Paired landscapes of runs A and B; returns the written CSV paths.
///
/// Both runs are probed on one batch built from run A's final policy or
/// replay memory, along one direction pair. Each snapshot yields
/// 2 runs × 2 reward definitions grids.
pub fn compare_landscapes(a: &LoadedRun, b: &LoadedRun, snapshots: &[Snapshot], out: &Path) -> Result<Vec<PathBuf>> {
    if a.spec != b.spec {
        bail!(
            "runs have different network specs ({:?} vs {:?})",
            a.spec.layer_sizes,
            b.spec.layer_sizes
        );
    }
    if a.record.experiment.agent.name() != b.record.experiment.agent.name() {
        bail!("runs use different agents");
    }
    let an = &a.record.experiment.analyses;
    let first_t = a
        .plan
        .train
        .curriculum
        .transitions
        .first()
        .or(b.plan.train.curriculum.transitions.first())
        .copied();
    let mut clocks = Vec::new();
    for s in snapshots {
        clocks.push(match *s {
            Snapshot::Clock(c) => c,
            Snapshot::AfterTransition(off) => {
                first_t.ok_or_else(|| anyhow!("neither run has a stage transition to offset from"))? + off
            }
        });
    }
    let mut thetas = Vec::new();
    for &c in &clocks {
        thetas.push((c, a.checkpoint_at(c)?, b.checkpoint_at(c)?));
    }
    let last = &a
        .checkpoints
        .last()
        .ok_or_else(|| anyhow!("run A has no checkpoints"))?
        .1;
    let probe = probe_for(a, &last.params, an.probe_batch)?;
    let defs = definitions(a, b);
    let dirs = make_directions::<f64>(a.spec.param_count(), derive_seed(an.direction_seed, stream::DIRECTIONS))?;
    let axes = axis::<f64>(-an.landscape_limit, an.landscape_limit, an.landscape_points);
    let snaps: Vec<(u64, [&[f64]; 2])> = thetas
        .iter()
        .map(|(c, ta, tb)| (*c, [&ta.params[..], &tb.params[..]]))
        .collect();
    let grids = cross_density(
        &snaps,
        defs.len(),
        |d, theta| {
            probe
                .loss(&a.spec, theta, &defs[d])
                .map_err(|e| s2dlab::Error::Invalid(format!("{e:#}")))
        },
        &dirs,
        &axes,
        &axes,
    )?;
    let labels = [
        format!("a-{}", a.id().replace('/', "-")),
        format!("b-{}", b.id().replace('/', "-")),
    ];
    let def_labels: Vec<String> = defs
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let name = definition_label(s);
            if defs.iter().filter(|o| definition_label(o) == name).count() > 1 {
                format!("{name}{d}")
            } else {
                name.to_string()
            }
        })
        .collect();
    let mut written = Vec::new();
    for g in &grids {
        let stem = format!(
            "landscape_t{}_{}_{}",
            g.checkpoint_step, labels[g.run], def_labels[g.definition]
        );
        // grids carry the clock value; CSV rows carry the global step of that checkpoint
        let snap = thetas
            .iter()
            .find(|t| t.0 == g.checkpoint_step)
            .expect("grid from a requested snapshot");
        let mut grid = g.grid.clone();
        grid.checkpoint_step = if g.run == 0 {
            snap.1.global_step
        } else {
            snap.2.global_step
        };
        let csv_path = out.join(format!("{stem}.csv"));
        grid_table(&grid).save(&csv_path)?;
        let title = format!(
            "{} at clock {} under {} reward",
            [a.id(), b.id()][g.run],
            g.checkpoint_step,
            def_labels[g.definition]
        );
        let svg = render_grid(
            &grid,
            &RenderOptions {
                title: Some(title),
                ..RenderOptions::default()
            },
        )?;
        crate::io::write_atomic(&out.join(format!("{stem}.svg")), svg.as_bytes())?;
        written.push(csv_path);
    }
    Ok(written)
}
