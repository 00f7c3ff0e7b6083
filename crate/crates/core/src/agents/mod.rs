//! DQN and PPO agents plus the staged-reward training loop.

mod dqn;
mod ppo;
mod replay;
mod train;

pub use dqn::{dqn_update, DqnAgent, DqnConfig, TdBatch, TdLoss};
pub use ppo::{
    gae, normalize_advantages, ppo_update, surrogate_loss_and_grad, PpoAgent, PpoConfig, PpoLosses, Rollout,
    RolloutEpisode, Segment, SurrogateBatch, SurrogateLoss, SurrogateStats,
};
pub use replay::{ReplayBuffer, StoredTransition};
pub use train::{train, AgentConfig, ClockUnit, EpisodeMetrics, TrainConfig, TrainOutput};

pub use crate::nn::CheckpointBundle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{forward, rnn_forward, Matrix, NetSpec};

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a named stream of a run.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Stream ids for [`derive_seed`].
pub mod stream {
    pub const ENV: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const VALUE_INIT: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const DIRECTIONS: u64 = 8;
    /// Per-seed choice of cross-maze training goals.
    pub const GOALS: u64 = 9;
    /// Frozen batches for landscapes and sharpness.
    pub const PROBE: u64 = 10;
    /// Rollouts behind action frequencies.
    pub const ACTIONS: u64 = 11;
}

pub fn rng_for(master: u64, stream_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream_id))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    Greedy,
    Epsilon(f64),
    Sample,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Shannon entropy (nats) of the softmax distribution.
pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|&lp| -lp.exp() * lp).sum()
}

/// Picks an action from network outputs (Q-values or logits).
pub fn act<R: Rng + ?Sized>(outputs: &[f64], mode: ActMode, rng: &mut R) -> usize {
    match mode {
        ActMode::Greedy => argmax(outputs),
        ActMode::Epsilon(eps) => {
            if eps > 0.0 && rng.gen::<f64>() < eps {
                rng.gen_range(0..outputs.len())
            } else {
                argmax(outputs)
            }
        }
        ActMode::Sample => {
            let probs = softmax(outputs);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        }
    }
}

/// Step-by-step evaluation of a feed-forward or recurrent network.
#[derive(Debug, Clone)]
pub struct PolicyRunner<'a> {
    spec: &'a NetSpec,
    params: &'a [f64],
    hidden: Option<Vec<f64>>,
}

impl<'a> PolicyRunner<'a> {
    pub fn new(spec: &'a NetSpec, params: &'a [f64]) -> Self {
        let hidden = spec.recurrent.map(|r| vec![0.0; r.hidden_size]);
        Self { spec, params, hidden }
    }

    /// Starts from a given recurrent state (`None` means zeros for a recurrent spec).
    pub fn with_state(spec: &'a NetSpec, params: &'a [f64], hidden: Option<Vec<f64>>) -> Self {
        let mut runner = Self::new(spec, params);
        if let (Some(h), Some(slot)) = (hidden, runner.hidden.as_mut()) {
            *slot = h;
        }
        runner
    }

    pub fn into_state(self) -> Option<Vec<f64>> {
        self.hidden
    }

    /// Zeroes the recurrent state.
    pub fn reset(&mut self) {
        if let Some(h) = self.hidden.as_mut() {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn hidden(&self) -> Option<&[f64]> {
        self.hidden.as_deref()
    }

    /// Network outputs for one observation; advances the recurrent state.
    pub fn outputs(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, features.len(), features.to_vec())?;
        match self.hidden.as_mut() {
            None => Ok(forward(self.spec, self.params, &x)?.0.into_vec()),
            Some(h) => {
                let trace = rnn_forward(self.spec, self.params, &x, Some(h))?;
                h.copy_from_slice(trace.last());
                Ok(forward(self.spec, self.params, trace.hidden())?.0.into_vec())
            }
        }
    }
}
