//! Behavioural and representational summaries of trained policies.

use std::collections::HashMap;

use rand::Rng;

use crate::agents::{act, ActMode, PolicyRunner};
use crate::envs::{GridEnv, GridPos};
use crate::error::{Error, Result};
use crate::nn::{rnn_forward, Matrix, NetSpec};

/// Episodes rolled out per checkpoint for action frequencies.
pub const DEFAULT_ACTION_EPISODES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: u64,
    pub length: usize,
    pub env_return: f64,
    pub shaped_return: f64,
    pub success: bool,
    pub positions: Vec<GridPos>,
}

impl EpisodeRecord {
    pub fn check(&self) -> Result<()> {
        if self.positions.len() != self.length + 1 {
            return Err(Error::Integrity(format!(
                "episode {} has length {} but {} positions",
                self.episode,
                self.length,
                self.positions.len()
            )));
        }
        Ok(())
    }
}

/// Everything observed while rolling out one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub record: EpisodeRecord,
    pub actions: Vec<usize>,
    /// Observation features before each step.
    pub observations: Vec<Vec<f64>>,
    pub goal: GridPos,
}

/// How an evaluation episode is started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeStart {
    /// `GridEnv::reset` with this episode seed.
    Seeded(u64),
    /// Cross-maze goal index.
    GoalIndex(usize),
}

/// Runs one episode of a policy (logits or Q-values) without learning.
pub fn run_episode<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &[f64],
    env: &mut GridEnv,
    start: EpisodeStart,
    mode: ActMode,
    rng: &mut R,
) -> Result<Rollout> {
    let (mut obs, seed) = match start {
        EpisodeStart::Seeded(s) => (env.reset(s), s),
        EpisodeStart::GoalIndex(g) => (env.reset_with_goal_index(g)?, g as u64),
    };
    let goal = env.goal();
    let mut runner = PolicyRunner::new(spec, params);
    let mut positions = vec![obs.agent_pos];
    let mut actions = Vec::new();
    let mut observations = Vec::new();
    let (mut ret, mut success) = (0.0, false);
    loop {
        let out = runner.outputs(&obs.features)?;
        let a = act(&out, mode, rng);
        let step = env.step(a)?;
        observations.push(std::mem::take(&mut obs.features));
        actions.push(a);
        ret += step.reward;
        success |= step.reached_goal;
        positions.push(step.obs.agent_pos);
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok(Rollout {
        record: EpisodeRecord {
            seed,
            episode: 0,
            length: actions.len(),
            env_return: ret,
            shaped_return: ret,
            success,
            positions,
        },
        actions,
        observations,
        goal,
    })
}

/// `f_a = (1/n) Σᵢ (1/Tᵢ) Σ_t 𝟙(aᵢᵗ = a)` over the given action sequences.
pub fn frequencies_from_actions(episodes: &[Vec<usize>], action_count: usize) -> Result<Vec<f64>> {
    if episodes.is_empty() {
        return Err(Error::Invalid("action frequencies need at least one episode".into()));
    }
    let mut freq = vec![0.0; action_count];
    for (i, ep) in episodes.iter().enumerate() {
        if ep.is_empty() {
            return Err(Error::Integrity(format!("episode {i} has no steps")));
        }
        let w = 1.0 / ep.len() as f64;
        for &a in ep {
            if a >= action_count {
                return Err(Error::Integrity(format!("action id {a} out of range")));
            }
            freq[a] += w;
        }
    }
    let n = episodes.len() as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    Ok(freq)
}

/// Per-action frequencies of a policy sampled for `episodes` seeded episodes.
pub fn action_frequencies<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &[f64],
    env: &mut GridEnv,
    episode_seeds: &[u64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut all = Vec::with_capacity(episode_seeds.len());
    for &s in episode_seeds {
        all.push(run_episode(spec, params, env, EpisodeStart::Seeded(s), ActMode::Sample, rng)?.actions);
    }
    frequencies_from_actions(&all, env.action_count())
}

/// Mean ℓ2 distance over all unordered pairs of rows; 0 for fewer than two rows.
pub fn mean_pairwise_distance(states: &Matrix<f64>) -> f64 {
    let n = states.rows();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = states
                .row(i)
                .iter()
                .zip(states.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sum += d2.sqrt();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCurve {
    pub steps: Vec<u64>,
    pub distances: Vec<f64>,
}

/// Mean pairwise hidden-state distance along a fixed observation sequence, per checkpoint.
pub fn feature_mean_distance(
    spec: &NetSpec,
    checkpoints: &[(u64, &[f64])],
    trajectory: &Matrix<f64>,
) -> Result<FeatureCurve> {
    if !spec.is_recurrent() {
        return Err(Error::Invalid("feature distances need a recurrent network".into()));
    }
    if checkpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Invalid("checkpoint steps must be strictly increasing".into()));
    }
    let mut curve = FeatureCurve {
        steps: Vec::with_capacity(checkpoints.len()),
        distances: Vec::with_capacity(checkpoints.len()),
    };
    for &(step, params) in checkpoints {
        let trace = rnn_forward(spec, params, trajectory, None)?;
        curve.steps.push(step);
        curve.distances.push(mean_pairwise_distance(trace.hidden()));
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: i32,
    pub height: i32,
    /// Row-major visit counts, index `y * width + x`.
    pub counts: Vec<u64>,
    pub most_frequent_path: Option<Vec<GridPos>>,
    pub path_multiplicity: usize,
}

impl Heatmap {
    pub fn get(&self, p: GridPos) -> u64 {
        self.counts[(p.y * self.width + p.x) as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Visit counts and the most repeated successful path.
///
/// Ties in multiplicity go to the shorter path, then to the earlier one.
pub fn trajectory_heatmap(records: &[EpisodeRecord], width: i32, height: i32) -> Result<Heatmap> {
    let mut counts = vec![0u64; (width.max(0) * height.max(0)) as usize];
    let mut multiplicity: HashMap<&[GridPos], (usize, usize)> = HashMap::new();
    for (k, r) in records.iter().enumerate() {
        r.check()?;
        for &p in &r.positions {
            if p.x < 0 || p.y < 0 || p.x >= width || p.y >= height {
                return Err(Error::Integrity(format!(
                    "position {p} of episode {} lies outside the {width}×{height} grid",
                    r.episode
                )));
            }
            counts[(p.y * width + p.x) as usize] += 1;
        }
        if r.success {
            multiplicity.entry(&r.positions).or_insert((0, k)).0 += 1;
        }
    }
    let best = multiplicity
        .into_iter()
        .min_by_key(|(path, (count, first))| (std::cmp::Reverse(*count), path.len(), *first));
    Ok(Heatmap {
        width,
        height,
        counts,
        path_multiplicity: best.as_ref().map_or(0, |b| b.1 .0),
        most_frequent_path: best.map(|(path, _)| path.to_vec()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub success_rate: f64,
    pub mean_len: f64,
    pub std_len: f64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Set when a single record made the std undefined (reported as 0).
    pub single_record: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Success rate and sample mean/std (n − 1) of lengths and returns.
pub fn metrics_summary(records: &[EpisodeRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Invalid("cannot summarize an empty group".into()));
    }
    let lens: Vec<f64> = records.iter().map(|r| r.length as f64).collect();
    let rets: Vec<f64> = records.iter().map(|r| r.env_return).collect();
    let (mean_len, std_len) = mean_std(&lens);
    let (mean_return, std_return) = mean_std(&rets);
    Ok(Summary {
        count: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / records.len() as f64,
        mean_len,
        std_len,
        mean_return,
        std_return,
        single_record: records.len() == 1,
    })
}
