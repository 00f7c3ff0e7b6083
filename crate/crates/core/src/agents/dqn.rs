use rand::Rng;

use super::replay::{ReplayBuffer, StoredTransition};
use crate::error::{Error, Result};
use crate::landscape::{fingerprint, LossFunction};
use crate::nn::{backward, forward, AdamState, Matrix, NetSpec, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Target network copy cadence, in environment steps.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the training budget over which ε decays linearly.
    pub eps_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            gamma: 0.99,
            batch: 128,
            replay_capacity: 10_000,
            target_sync: 100,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.5,
            hidden: vec![64, 64],
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.batch > self.replay_capacity {
            return Err(Error::Invalid(format!(
                "dqn batch {} must be in 1..=replay capacity {}",
                self.batch, self.replay_capacity
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lr > 0.0) || self.target_sync == 0 {
            return Err(Error::Invalid(
                "dqn needs lr > 0, gamma in (0, 1] and target_sync ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn net_spec(&self, obs_size: usize, actions: usize) -> Result<NetSpec> {
        let mut sizes = vec![obs_size];
        sizes.extend(&self.hidden);
        sizes.push(actions);
        NetSpec::mlp(sizes)
    }

    /// ε at clock value `t` of a `budget`-long run.
    pub fn epsilon(&self, t: u64, budget: u64) -> f64 {
        let horizon = (budget as f64 * self.eps_fraction).max(1.0);
        let frac = (t as f64 / horizon).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Batch of transitions in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub features: Matrix<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_features: Matrix<f64>,
    pub dones: Vec<bool>,
}

impl TdBatch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a StoredTransition>) -> Result<Self> {
        let items: Vec<&StoredTransition> = items.into_iter().collect();
        if items.is_empty() {
            return Err(Error::Invalid("empty TD batch".into()));
        }
        let feats: Vec<&[f64]> = items.iter().map(|t| t.features.as_slice()).collect();
        let next: Vec<&[f64]> = items.iter().map(|t| t.next_features.as_slice()).collect();
        Ok(Self {
            features: Matrix::from_rows(&feats)?,
            actions: items.iter().map(|t| t.action).collect(),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_features: Matrix::from_rows(&next)?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Mean squared TD error against fixed targets `r + γ·(1 − done)·max_a' Q_target(s', a')`.
#[derive(Debug, Clone)]
pub struct TdLoss {
    spec: NetSpec,
    batch: TdBatch,
    targets: Vec<f64>,
}

impl TdLoss {
    pub fn new(spec: &NetSpec, target_params: &[f64], batch: TdBatch, gamma: f64) -> Result<Self> {
        let (q_next, _) = forward(spec, target_params, &batch.next_features)?;
        let targets = (0..batch.len())
            .map(|i| {
                let boot = if batch.dones[i] {
                    0.0
                } else {
                    q_next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                batch.rewards[i] + gamma * boot
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            batch,
            targets,
        })
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }
}

impl LossFunction<f64> for TdLoss {
    fn loss(&self, params: &[f64]) -> Result<f64> {
        let (q, _) = forward(&self.spec, params, &self.batch.features)?;
        let n = self.batch.len() as f64;
        let sum: f64 = (0..self.batch.len())
            .map(|i| {
                let e = q.get(i, self.batch.actions[i]) - self.targets[i];
                e * e
            })
            .sum();
        Ok(sum / n)
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (q, cache) = forward(&self.spec, params, &self.batch.features)?;
        let n = self.batch.len() as f64;
        let mut grad_out = Matrix::zeros(q.rows(), q.cols());
        let mut sum = 0.0;
        for i in 0..self.batch.len() {
            let a = self.batch.actions[i];
            let e = q.get(i, a) - self.targets[i];
            sum += e * e;
            grad_out.set(i, a, 2.0 * e / n);
        }
        let (g, _) = backward(&self.spec, params, &cache, &grad_out)?;
        Ok((sum / n, g.0))
    }

    fn batch_fingerprint(&self) -> u64 {
        let actions: Vec<f64> = self.batch.actions.iter().map(|&a| a as f64).collect();
        fingerprint(&[
            fingerprint(self.batch.features.as_slice()) as f64,
            fingerprint(&actions) as f64,
            fingerprint(&self.targets) as f64,
        ])
    }
}

/// One Adam step on the squared TD error. Returns the loss before the step.
pub fn dqn_update(
    config: &DqnConfig,
    spec: &NetSpec,
    online: &mut ParamVector<f64>,
    target: &[f64],
    adam: &mut AdamState<f64>,
    batch: TdBatch,
) -> Result<f64> {
    let td = TdLoss::new(spec, target, batch, config.gamma)?;
    let (loss, grads) = td.loss_and_grad(online)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "TD loss".into(),
            index: 0,
        });
    }
    adam.step(online, &grads)?;
    Ok(loss)
}

/// Online/target networks, optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub spec: NetSpec,
    pub online: ParamVector<f64>,
    pub target: ParamVector<f64>,
    pub adam: AdamState<f64>,
    pub replay: ReplayBuffer,
    pub env_steps: u64,
    pub last_loss: Option<f64>,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(config: DqnConfig, obs_size: usize, actions: usize, init_rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spec = config.net_spec(obs_size, actions)?;
        let online = spec.init_params(init_rng);
        Ok(Self {
            adam: AdamState::new(spec.param_count(), config.lr),
            target: online.clone(),
            replay: ReplayBuffer::new(config.replay_capacity),
            online,
            spec,
            config,
            env_steps: 0,
            last_loss: None,
        })
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, features.len(), features.to_vec())?;
        Ok(forward(&self.spec, &self.online, &x)?.0.into_vec())
    }

    /// Stores a transition, trains once the buffer holds a full batch, syncs the target.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: StoredTransition, rng: &mut R) -> Result<()> {
        self.replay.push(t);
        self.env_steps += 1;
        if self.replay.len() >= self.config.batch {
            let idx = self.replay.sample_indices(self.config.batch, rng);
            let batch = TdBatch::from_transitions(idx.iter().map(|&i| self.replay.get(i)))?;
            let loss = dqn_update(
                &self.config,
                &self.spec,
                &mut self.online,
                &self.target,
                &mut self.adam,
                batch,
            )?;
            self.last_loss = Some(loss);
        }
        if self.env_steps % self.config.target_sync == 0 {
            self.sync_target();
        }
        Ok(())
    }

    pub fn sync_target(&mut self) {
        self.target.0.copy_from_slice(&self.online);
    }
}
