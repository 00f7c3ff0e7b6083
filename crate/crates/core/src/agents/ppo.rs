use rand::seq::SliceRandom;
use rand::Rng;

use super::log_softmax;
use crate::envs::GridPos;
use crate::error::{Error, Result};
use crate::landscape::{fingerprint, LossFunction};
use crate::nn::{
    backward, forward, seq_backward, seq_forward, AdamState, DenseCache, Matrix, NetSpec, ParamVector, RecurrentSpec,
    SeqCache,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Episodes collected between updates.
    pub update_every: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub hidden: Vec<usize>,
    pub recurrent: Option<RecurrentSpec>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            gamma: 0.99,
            clip: 0.2,
            lambda: 0.95,
            entropy_coef: 0.03,
            value_coef: 0.5,
            update_every: 2,
            epochs: 4,
            minibatch: 128,
            hidden: vec![64, 64],
            recurrent: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::Invalid(format!("ppo clip must be positive, got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Invalid(format!(
                "ppo lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lr > 0.0) {
            return Err(Error::Invalid("ppo needs lr > 0 and gamma in (0, 1]".into()));
        }
        if self.update_every == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Invalid(
                "ppo update_every, epochs and minibatch must be ≥ 1".into(),
            ));
        }
        Ok(())
    }

    fn spec_with_output(&self, obs_size: usize, out: usize) -> Result<NetSpec> {
        let mut sizes = vec![obs_size];
        sizes.extend(&self.hidden);
        sizes.push(out);
        match self.recurrent {
            None => NetSpec::mlp(sizes),
            Some(r) => NetSpec::recurrent(sizes, r.hidden_size, r.truncation),
        }
    }

    pub fn policy_spec(&self, obs_size: usize, actions: usize) -> Result<NetSpec> {
        self.spec_with_output(obs_size, actions)
    }

    pub fn value_spec(&self, obs_size: usize) -> Result<NetSpec> {
        self.spec_with_output(obs_size, 1)
    }
}

/// One collected episode with behaviour-policy statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutEpisode {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Rewards the learner sees (stage-shaped).
    pub rewards: Vec<f64>,
    pub env_rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Policy and value hidden states before each step (empty for feed-forward nets).
    pub policy_hidden: Vec<Vec<f64>>,
    pub value_hidden: Vec<Vec<f64>>,
    /// Agent cells, one more than the number of steps.
    pub positions: Vec<GridPos>,
    pub goal: GridPos,
    /// True when the episode ended in the goal; otherwise it was cut by the time limit.
    pub terminal: bool,
    /// Value estimate of the final observation, used when `terminal` is false.
    pub bootstrap_value: f64,
}

impl RolloutEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub episodes: Vec<RolloutEpisode>,
}

impl Rollout {
    pub fn step_count(&self) -> usize {
        self.episodes.iter().map(RolloutEpisode::len).sum()
    }
}

/// Generalized advantage estimation. `values` carries one bootstrap entry.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae needs values of length {} and dones of length {n}, got {} and {}",
            n + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to mean 0 and scales to unit (population) std; a single entry becomes 0.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

/// Contiguous run of steps fed through the network together.
///
/// For a feed-forward net rows are independent samples; for a recurrent net
/// they are consecutive steps starting from `h0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub obs: Matrix<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub h0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurrogateBatch {
    pub segments: Vec<Segment>,
}

impl SurrogateBatch {
    pub fn step_count(&self) -> usize {
        self.segments.iter().map(|s| s.actions.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    /// `−mean(min(r·A, clip(r)·A))`.
    pub policy_loss: f64,
    pub entropy: f64,
    /// `policy_loss − entropy_coef · entropy`.
    pub total: f64,
    pub clip_fraction: f64,
}

enum NetCache {
    Dense(DenseCache<f64>),
    Seq(SeqCache<f64>),
}

fn net_forward(spec: &NetSpec, params: &[f64], x: &Matrix<f64>, h0: Option<&[f64]>) -> Result<(Matrix<f64>, NetCache)> {
    if spec.is_recurrent() {
        let (out, cache) = seq_forward(spec, params, x, h0)?;
        Ok((out, NetCache::Seq(cache)))
    } else {
        let (out, cache) = forward(spec, params, x)?;
        Ok((out, NetCache::Dense(cache)))
    }
}

fn net_backward(spec: &NetSpec, params: &[f64], cache: &NetCache, grad_out: &Matrix<f64>) -> Result<ParamVector<f64>> {
    match cache {
        NetCache::Dense(c) => Ok(backward(spec, params, c, grad_out)?.0),
        NetCache::Seq(c) => seq_backward(spec, params, c, grad_out),
    }
}

/// Clipped surrogate and entropy over a batch; gradient of `total` when requested.
pub fn surrogate_loss_and_grad(
    spec: &NetSpec,
    params: &[f64],
    batch: &SurrogateBatch,
    clip: f64,
    entropy_coef: f64,
    want_grad: bool,
) -> Result<(SurrogateStats, Option<Vec<f64>>)> {
    let n = batch.step_count();
    if n == 0 {
        return Err(Error::Invalid("empty surrogate batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grads = want_grad.then(|| vec![0.0; params.len()]);
    let (mut surr_sum, mut ent_sum, mut clipped) = (0.0, 0.0, 0usize);
    for seg in &batch.segments {
        let (logits, cache) = net_forward(spec, params, &seg.obs, seg.h0.as_deref())?;
        let mut grad_out = Matrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            let lp = log_softmax(logits.row(i));
            let a = seg.actions[i];
            let adv = seg.advantages[i];
            let ratio = (lp[a] - seg.old_log_probs[i]).exp();
            let r_clip = ratio.clamp(1.0 - clip, 1.0 + clip);
            let unclipped = ratio * adv;
            let surr = unclipped.min(r_clip * adv);
            surr_sum += surr;
            let active = unclipped <= r_clip * adv;
            if !active {
                clipped += 1;
            }
            let h: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
            ent_sum += h;
            if grads.is_some() {
                let g = grad_out.row_mut(i);
                for (k, &lk) in lp.iter().enumerate() {
                    let pk = lk.exp();
                    let mut gk = entropy_coef * inv_n * pk * (lk + h);
                    if active {
                        let onehot = if k == a { 1.0 } else { 0.0 };
                        gk -= inv_n * unclipped * (onehot - pk);
                    }
                    g[k] = gk;
                }
            }
        }
        if let Some(acc) = grads.as_mut() {
            let g = net_backward(spec, params, &cache, &grad_out)?;
            acc.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
    }
    let policy_loss = -surr_sum * inv_n;
    let entropy = ent_sum * inv_n;
    let stats = SurrogateStats {
        policy_loss,
        entropy,
        total: policy_loss - entropy_coef * entropy,
        clip_fraction: clipped as f64 * inv_n,
    };
    if !stats.total.is_finite() {
        return Err(Error::NonFinite {
            what: "policy loss".into(),
            index: 0,
        });
    }
    Ok((stats, grads))
}

/// Pure clipped-surrogate policy loss on a frozen batch (no value or entropy term).
#[derive(Debug, Clone)]
pub struct SurrogateLoss {
    pub spec: NetSpec,
    pub batch: SurrogateBatch,
    pub clip: f64,
}

impl LossFunction<f64> for SurrogateLoss {
    fn loss(&self, params: &[f64]) -> Result<f64> {
        Ok(
            surrogate_loss_and_grad(&self.spec, params, &self.batch, self.clip, 0.0, false)?
                .0
                .policy_loss,
        )
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (stats, g) = surrogate_loss_and_grad(&self.spec, params, &self.batch, self.clip, 0.0, true)?;
        Ok((stats.policy_loss, g.expect("requested")))
    }

    fn batch_fingerprint(&self) -> u64 {
        let mut parts = Vec::new();
        for s in &self.batch.segments {
            parts.push(fingerprint(s.obs.as_slice()) as f64);
            parts.push(fingerprint(&s.actions.iter().map(|&a| a as f64).collect::<Vec<_>>()) as f64);
            parts.push(fingerprint(&s.old_log_probs) as f64);
            parts.push(fingerprint(&s.advantages) as f64);
        }
        fingerprint(&parts)
    }
}

/// Mean squared value error scaled by `coef`, with its gradient.
fn value_loss_and_grad(
    spec: &NetSpec,
    params: &[f64],
    segs: &[(Matrix<f64>, Option<Vec<f64>>, Vec<f64>)],
    coef: f64,
) -> Result<(f64, Vec<f64>)> {
    let n: usize = segs.iter().map(|s| s.2.len()).sum();
    let inv_n = 1.0 / n as f64;
    let mut grads = vec![0.0; params.len()];
    let mut sum = 0.0;
    for (obs, h0, targets) in segs {
        let (v, cache) = net_forward(spec, params, obs, h0.as_deref())?;
        let mut g_out = Matrix::zeros(v.rows(), 1);
        for i in 0..v.rows() {
            let e = v.get(i, 0) - targets[i];
            sum += e * e;
            g_out.set(i, 0, 2.0 * coef * e * inv_n);
        }
        let g = net_backward(spec, params, &cache, &g_out)?;
        grads.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
    }
    let loss = coef * sum * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "value loss".into(),
            index: 0,
        });
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoLosses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Steps of one training unit: a single step (feed-forward) or a BPTT chunk.
struct Unit {
    episode: usize,
    start: usize,
    len: usize,
}

/// Several epochs of minibatch updates on `rollout` for the policy and value nets.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    config: &PpoConfig,
    policy_spec: &NetSpec,
    policy: &mut ParamVector<f64>,
    policy_adam: &mut AdamState<f64>,
    value_spec: &NetSpec,
    value: &mut ParamVector<f64>,
    value_adam: &mut AdamState<f64>,
    rollout: &Rollout,
    rng: &mut R,
) -> Result<PpoLosses> {
    let eps = &rollout.episodes;
    if rollout.step_count() == 0 {
        return Err(Error::Invalid("ppo update on an empty rollout".into()));
    }
    let mut advantages = Vec::with_capacity(eps.len());
    let mut returns = Vec::with_capacity(eps.len());
    for ep in eps {
        let mut values = ep.values.clone();
        values.push(if ep.terminal { 0.0 } else { ep.bootstrap_value });
        let mut dones = vec![false; ep.len()];
        if let Some(last) = dones.last_mut() {
            *last = ep.terminal;
        }
        let (adv, ret) = gae(&ep.rewards, &values, &dones, config.gamma, config.lambda)?;
        advantages.push(adv);
        returns.push(ret);
    }
    let mut flat: Vec<f64> = advantages.iter().flatten().copied().collect();
    normalize_advantages(&mut flat);
    let mut at = 0;
    for adv in advantages.iter_mut() {
        let n = adv.len();
        adv.copy_from_slice(&flat[at..at + n]);
        at += n;
    }

    let chunk = policy_spec.recurrent.map_or(1, |r| r.truncation);
    let mut units = Vec::new();
    for (e, ep) in eps.iter().enumerate() {
        let mut start = 0;
        while start < ep.len() {
            let len = chunk.min(ep.len() - start);
            units.push(Unit { episode: e, start, len });
            start += len;
        }
    }

    let recurrent = policy_spec.is_recurrent();
    let mut totals = PpoLosses::default();
    let mut batches = 0usize;
    for _ in 0..config.epochs {
        units.shuffle(rng);
        let mut i = 0;
        while i < units.len() {
            let mut steps = 0;
            let mut j = i;
            while j < units.len() && steps < config.minibatch {
                steps += units[j].len;
                j += 1;
            }
            let group = &units[i..j];
            i = j;

            let mut p_batch = SurrogateBatch::default();
            let mut v_segs = Vec::new();
            if recurrent {
                for u in group {
                    let ep = &eps[u.episode];
                    let r = u.start..u.start + u.len;
                    let obs = Matrix::from_rows(&ep.obs[r.clone()])?;
                    p_batch.segments.push(Segment {
                        obs: obs.clone(),
                        actions: ep.actions[r.clone()].to_vec(),
                        old_log_probs: ep.log_probs[r.clone()].to_vec(),
                        advantages: advantages[u.episode][r.clone()].to_vec(),
                        h0: Some(ep.policy_hidden[u.start].clone()),
                    });
                    v_segs.push((
                        obs,
                        Some(ep.value_hidden[u.start].clone()),
                        returns[u.episode][r].to_vec(),
                    ));
                }
            } else {
                let mut seg = Segment {
                    obs: Matrix::zeros(0, 0),
                    actions: Vec::new(),
                    old_log_probs: Vec::new(),
                    advantages: Vec::new(),
                    h0: None,
                };
                let mut rows = Vec::new();
                let mut targets = Vec::new();
                for u in group {
                    let ep = &eps[u.episode];
                    rows.push(ep.obs[u.start].as_slice());
                    seg.actions.push(ep.actions[u.start]);
                    seg.old_log_probs.push(ep.log_probs[u.start]);
                    seg.advantages.push(advantages[u.episode][u.start]);
                    targets.push(returns[u.episode][u.start]);
                }
                seg.obs = Matrix::from_rows(&rows)?;
                v_segs.push((seg.obs.clone(), None, targets));
                p_batch.segments.push(seg);
            }

            let (stats, g) =
                surrogate_loss_and_grad(policy_spec, policy, &p_batch, config.clip, config.entropy_coef, true)?;
            policy_adam.step(policy, &g.expect("requested"))?;
            let (v_loss, vg) = value_loss_and_grad(value_spec, value, &v_segs, config.value_coef)?;
            value_adam.step(value, &vg)?;
            totals.policy_loss += stats.policy_loss;
            totals.entropy += stats.entropy;
            totals.value_loss += v_loss;
            batches += 1;
        }
    }
    let k = batches as f64;
    Ok(PpoLosses {
        policy_loss: totals.policy_loss / k,
        value_loss: totals.value_loss / k,
        entropy: totals.entropy / k,
    })
}

/// Policy and value networks with their optimizers and the pending rollout.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub policy_spec: NetSpec,
    pub value_spec: NetSpec,
    pub policy: ParamVector<f64>,
    pub value: ParamVector<f64>,
    pub policy_adam: AdamState<f64>,
    pub value_adam: AdamState<f64>,
    pub pending: Rollout,
    pub updates: u64,
    pub last_losses: Option<PpoLosses>,
}

impl PpoAgent {
    pub fn new<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        config: PpoConfig,
        obs_size: usize,
        actions: usize,
        policy_rng: &mut R1,
        value_rng: &mut R2,
    ) -> Result<Self> {
        config.validate()?;
        let policy_spec = config.policy_spec(obs_size, actions)?;
        let value_spec = config.value_spec(obs_size)?;
        let policy = policy_spec.init_params(policy_rng);
        let value = value_spec.init_params(value_rng);
        Ok(Self {
            policy_adam: AdamState::new(policy.len(), config.lr),
            value_adam: AdamState::new(value.len(), config.lr),
            policy,
            value,
            policy_spec,
            value_spec,
            config,
            pending: Rollout::default(),
            updates: 0,
            last_losses: None,
        })
    }

    /// Queues an episode and updates once `update_every` episodes are pending.
    pub fn finish_episode<R: Rng + ?Sized>(&mut self, ep: RolloutEpisode, rng: &mut R) -> Result<Option<PpoLosses>> {
        if !ep.is_empty() {
            self.pending.episodes.push(ep);
        }
        if self.pending.episodes.len() < self.config.update_every {
            return Ok(None);
        }
        let rollout = std::mem::take(&mut self.pending);
        let losses = ppo_update(
            &self.config,
            &self.policy_spec,
            &mut self.policy,
            &mut self.policy_adam,
            &self.value_spec,
            &mut self.value,
            &mut self.value_adam,
            &rollout,
            rng,
        )?;
        self.updates += 1;
        self.last_losses = Some(losses);
        Ok(Some(losses))
    }
}
