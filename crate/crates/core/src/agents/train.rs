use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use super::dqn::{DqnAgent, DqnConfig};
use super::ppo::{PpoAgent, PpoConfig, RolloutEpisode};
use super::replay::{ReplayBuffer, StoredTransition};
use super::{act, derive_seed, log_softmax, rng_for, stream, ActMode, PolicyRunner};
use crate::envs::{EnvConfig, GridEnv, GridPos};
use crate::error::{Error, Result};
use crate::nn::{CheckpointBundle, NetSpec, ParamVector};
use crate::shaping::{shaped_reward, stage_index, Curriculum};

/// What the curriculum clock counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClockUnit {
    Episodes,
    Steps,
}

impl ClockUnit {
    pub fn name(self) -> &'static str {
        match self {
            ClockUnit::Episodes => "episodes",
            ClockUnit::Steps => "steps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentConfig {
    Dqn(DqnConfig),
    Ppo(PpoConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Stage potentials are re-centred on each episode's goal.
    pub curriculum: Curriculum,
    pub clock: ClockUnit,
    /// Training length in clock units.
    pub budget: u64,
    /// Checkpoint cadence in clock units; 0 keeps only the fixed points.
    pub checkpoint_every: u64,
    /// Extra checkpoints this many clock units after each stage transition.
    pub checkpoint_offsets: Vec<u64>,
    /// Further clock values to checkpoint at, e.g. another run's transition points.
    pub extra_checkpoints: Vec<u64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.budget == 0 {
            return Err(Error::Invalid("training budget must be positive".into()));
        }
        if let Some(&last) = self.curriculum.transitions.last() {
            if last >= self.budget {
                return Err(Error::Invalid(format!(
                    "last stage transition {last} must come before the budget {}",
                    self.budget
                )));
            }
        }
        match &self.agent {
            AgentConfig::Dqn(c) => c.validate(),
            AgentConfig::Ppo(c) => c.validate(),
        }
    }

    /// Clock values at which checkpoints are written.
    pub fn checkpoint_points(&self) -> BTreeSet<u64> {
        let mut points = BTreeSet::from([0, self.budget]);
        if self.checkpoint_every > 0 {
            points.extend((0..=self.budget).step_by(self.checkpoint_every as usize));
        }
        points.extend(self.extra_checkpoints.iter().copied().filter(|&t| t <= self.budget));
        for &t in &self.curriculum.transitions {
            points.insert(t);
            for &off in &self.checkpoint_offsets {
                if t + off <= self.budget {
                    points.insert(t + off);
                }
            }
        }
        points
    }
}

/// One training episode as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Clock value at episode start.
    pub clock: u64,
    /// Global step count at episode start.
    pub global_step: u64,
    /// Stage active at episode start.
    pub stage: usize,
    pub length: usize,
    pub env_return: f64,
    /// Undiscounted sum of shaped rewards.
    pub shaped_return: f64,
    pub success: bool,
    pub goal: GridPos,
    pub positions: Vec<GridPos>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub spec: NetSpec,
    /// `(clock value, bundle)` in increasing clock order.
    pub checkpoints: Vec<(u64, CheckpointBundle)>,
    pub metrics: Vec<EpisodeMetrics>,
    pub final_params: ParamVector<f64>,
    /// Final replay memory (DQN only).
    pub replay: Option<ReplayBuffer>,
}

enum Learner {
    Dqn(Box<DqnAgent>),
    Ppo(Box<PpoAgent>),
}

impl Learner {
    fn spec(&self) -> &NetSpec {
        match self {
            Learner::Dqn(a) => &a.spec,
            Learner::Ppo(a) => &a.policy_spec,
        }
    }

    fn params(&self) -> &ParamVector<f64> {
        match self {
            Learner::Dqn(a) => &a.online,
            Learner::Ppo(a) => &a.policy,
        }
    }
}

struct Clock {
    unit: ClockUnit,
    episode: u64,
    global_step: u64,
}

impl Clock {
    fn now(&self) -> u64 {
        match self.unit {
            ClockUnit::Episodes => self.episode,
            ClockUnit::Steps => self.global_step,
        }
    }
}

struct Checkpointer {
    points: BTreeSet<u64>,
    transitions: Vec<u64>,
    out: Vec<(u64, CheckpointBundle)>,
}

impl Checkpointer {
    fn maybe_save(&mut self, clock: &Clock, learner: &Learner, rng: &ChaCha8Rng) {
        let t = clock.now();
        if !self.points.remove(&t) {
            return;
        }
        self.out.push((
            t,
            CheckpointBundle {
                spec: learner.spec().clone(),
                params: learner.params().clone(),
                global_step: clock.global_step,
                stage: stage_index(&self.transitions, t),
                rng_fingerprint: rng.get_word_pos() as u64,
            },
        ));
    }
}

/// Runs one seeded training run of the staged-reward loop.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut env = GridEnv::new(config.env.clone())?;
    let obs_size = env.obs_size();
    let actions = env.action_count();
    let seed = config.seed;
    let env_master = derive_seed(seed, stream::ENV);
    let mut explore = rng_for(seed, stream::EXPLORE);
    let mut batch_rng = rng_for(seed, stream::BATCH);

    let mut learner = match &config.agent {
        AgentConfig::Dqn(c) => Learner::Dqn(Box::new(DqnAgent::new(
            c.clone(),
            obs_size,
            actions,
            &mut rng_for(seed, stream::INIT),
        )?)),
        AgentConfig::Ppo(c) => Learner::Ppo(Box::new(PpoAgent::new(
            c.clone(),
            obs_size,
            actions,
            &mut rng_for(seed, stream::INIT),
            &mut rng_for(seed, stream::VALUE_INIT),
        )?)),
    };

    let mut clock = Clock {
        unit: config.clock,
        episode: 0,
        global_step: 0,
    };
    let mut ckpt = Checkpointer {
        points: config.checkpoint_points(),
        transitions: config.curriculum.transitions.clone(),
        out: Vec::new(),
    };
    let mut metrics = Vec::new();

    'episodes: while clock.now() < config.budget {
        ckpt.maybe_save(&clock, &learner, &explore);
        let mut obs = env.reset(derive_seed(env_master, clock.episode));
        let goal = env.goal();
        let bound = Curriculum {
            stages: config.curriculum.stages.iter().map(|s| s.bound_to(goal)).collect(),
            transitions: config.curriculum.transitions.clone(),
        };
        let start_clock = clock.now();
        let start_step = clock.global_step;
        let mut positions = vec![obs.agent_pos];
        let (mut env_return, mut shaped_return, mut success) = (0.0, 0.0, false);
        let mut rollout = RolloutEpisode {
            goal,
            positions: vec![obs.agent_pos],
            ..RolloutEpisode::default()
        };

        let (mut p_hidden, mut v_hidden) = match &learner {
            Learner::Ppo(a) => (
                a.policy_spec.recurrent.map(|r| vec![0.0; r.hidden_size]),
                a.value_spec.recurrent.map(|r| vec![0.0; r.hidden_size]),
            ),
            Learner::Dqn(_) => (None, None),
        };

        loop {
            let t = clock.now();
            let action;
            let mut step_stats = None;
            match &learner {
                Learner::Dqn(a) => {
                    let eps = a.config.epsilon(t, config.budget);
                    action = act(&a.q_values(&obs.features)?, ActMode::Epsilon(eps), &mut explore);
                }
                Learner::Ppo(a) => {
                    if let Some(h) = &p_hidden {
                        rollout.policy_hidden.push(h.clone());
                    }
                    if let Some(h) = &v_hidden {
                        rollout.value_hidden.push(h.clone());
                    }
                    let mut pr = PolicyRunner::with_state(&a.policy_spec, &a.policy, p_hidden.take());
                    let logits = pr.outputs(&obs.features)?;
                    p_hidden = pr.into_state();
                    let mut vr = PolicyRunner::with_state(&a.value_spec, &a.value, v_hidden.take());
                    let v = vr.outputs(&obs.features)?[0];
                    v_hidden = vr.into_state();
                    action = act(&logits, ActMode::Sample, &mut explore);
                    step_stats = Some((log_softmax(&logits)[action], v));
                }
            }
            let from = obs.agent_pos;
            let out = env.step(action)?;
            let to = out.obs.agent_pos;
            let terminal = out.reached_goal;
            let reward = shaped_reward(&bound, t, from, action, to, out.reward, terminal);
            env_return += out.reward;
            shaped_return += reward;
            success |= out.reached_goal;
            positions.push(to);

            match &mut learner {
                Learner::Dqn(a) => a.observe(
                    StoredTransition {
                        features: obs.features,
                        action,
                        reward,
                        next_features: out.obs.features.clone(),
                        done: terminal,
                        pos: from,
                        next_pos: to,
                        goal,
                        reward_env: out.reward,
                    },
                    &mut batch_rng,
                )?,
                Learner::Ppo(_) => {
                    let (lp, v) = step_stats.expect("ppo step");
                    rollout.obs.push(obs.features);
                    rollout.actions.push(action);
                    rollout.log_probs.push(lp);
                    rollout.values.push(v);
                    rollout.rewards.push(reward);
                    rollout.env_rewards.push(out.reward);
                    rollout.positions.push(to);
                }
            }
            obs = out.obs;
            clock.global_step += 1;
            if config.clock == ClockUnit::Steps {
                ckpt.maybe_save(&clock, &learner, &explore);
                if clock.now() >= config.budget && !out.done {
                    // Budget exhausted mid-episode: the partial episode is dropped.
                    break 'episodes;
                }
            }
            if out.done {
                break;
            }
        }

        if let Learner::Ppo(a) = &mut learner {
            rollout.terminal = success;
            if !success {
                let mut vr = PolicyRunner::with_state(&a.value_spec, &a.value, v_hidden.take());
                rollout.bootstrap_value = vr.outputs(&obs.features)?[0];
            }
            a.finish_episode(rollout, &mut batch_rng)?;
        }
        metrics.push(EpisodeMetrics {
            episode: clock.episode,
            clock: start_clock,
            global_step: start_step,
            stage: stage_index(&config.curriculum.transitions, start_clock),
            length: positions.len() - 1,
            env_return,
            shaped_return,
            success,
            goal,
            positions,
        });
        clock.episode += 1;
    }
    ckpt.maybe_save(&clock, &learner, &explore);

    let spec = learner.spec().clone();
    let final_params = learner.params().clone();
    let replay = match learner {
        Learner::Dqn(a) => Some(a.replay),
        Learner::Ppo(_) => None,
    };
    Ok(TrainOutput {
        spec,
        checkpoints: ckpt.out,
        metrics,
        final_params,
        replay,
    })
}
