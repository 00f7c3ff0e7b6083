//! Experiment configuration: TOML schema, validation, hashing and the
//! mapping onto per-run training configs.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use s2dlab::agents::{rng_for, stream, AgentConfig, ClockUnit, DqnConfig, PpoConfig, TrainConfig};
use s2dlab::envs::{EnvConfig, EnvKind, GridEnv};
use s2dlab::nn::RecurrentSpec;
use s2dlab::shaping::{Curriculum, NormOrder, PotentialSpec, RewardStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub baselines: Option<Vec<Baseline>>,
    /// Output root; not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    pub env: EnvSection,
    pub agent: AgentSection,
    #[serde(default)]
    pub curriculum: CurriculumSection,
    pub budget: BudgetSection,
    #[serde(default)]
    pub analyses: AnalysesSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    OnlySparse,
    OnlyDense,
    S2d,
    D2s,
    /// The explicit `[[curriculum.stages]]` list.
    Custom,
}

impl Baseline {
    pub const PRESETS: [Baseline; 4] = [Baseline::OnlySparse, Baseline::OnlyDense, Baseline::S2d, Baseline::D2s];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::OnlySparse => "only_sparse",
            Baseline::OnlyDense => "only_dense",
            Baseline::S2d => "s2d",
            Baseline::D2s => "d2s",
            Baseline::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::PRESETS
            .into_iter()
            .chain([Baseline::Custom])
            .find(|b| b.name() == s)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKindName {
    Fixed4,
    Random10,
    Crossmaze,
}

impl From<EnvKindName> for EnvKind {
    fn from(k: EnvKindName) -> Self {
        match k {
            EnvKindName::Fixed4 => EnvKind::Fixed4,
            EnvKindName::Random10 => EnvKind::Random10,
            EnvKindName::Crossmaze => EnvKind::CrossMaze,
        }
    }
}

/// Cross-maze training goals: explicit indices or `"random"` (two per seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainGoals {
    Fixed(Vec<usize>),
    Mode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKindName,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_living_penalty")]
    pub living_penalty: f64,
    #[serde(default = "d_goal_bonus")]
    pub goal_bonus: f64,
    #[serde(default)]
    pub goal_radius_p1: i32,
    #[serde(default = "d_arm_length")]
    pub arm_length: i32,
    #[serde(default = "d_view_radius")]
    pub view_radius: i32,
    #[serde(default = "d_train_goals")]
    pub train_goals: TrainGoals,
}

fn d_max_steps() -> usize {
    50
}
fn d_living_penalty() -> f64 {
    -0.1
}
fn d_goal_bonus() -> f64 {
    1.0
}
fn d_arm_length() -> i32 {
    5
}
fn d_view_radius() -> i32 {
    2
}
fn d_train_goals() -> TrainGoals {
    TrainGoals::Mode("random".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSection {
    Dqn(DqnSection),
    Ppo(PpoSection),
}

impl AgentSection {
    pub fn gamma(&self) -> f64 {
        match self {
            AgentSection::Dqn(d) => d.gamma,
            AgentSection::Ppo(p) => p.gamma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentSection::Dqn(_) => "dqn",
            AgentSection::Ppo(_) => "ppo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnSection {
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for DqnSection {
    fn default() -> Self {
        let d = DqnConfig::default();
        Self {
            lr: d.lr,
            gamma: d.gamma,
            batch: d.batch,
            replay_capacity: d.replay_capacity,
            target_sync: d.target_sync,
            eps_start: d.eps_start,
            eps_end: d.eps_end,
            eps_fraction: d.eps_fraction,
            hidden: d.hidden,
        }
    }
}

impl DqnSection {
    pub fn to_config(&self) -> DqnConfig {
        DqnConfig {
            lr: self.lr,
            gamma: self.gamma,
            batch: self.batch,
            replay_capacity: self.replay_capacity,
            target_sync: self.target_sync,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_fraction: self.eps_fraction,
            hidden: self.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentSection {
    pub hidden_size: usize,
    pub truncation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub update_every: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub hidden: Vec<usize>,
    pub recurrent: Option<RecurrentSection>,
}

impl Default for PpoSection {
    fn default() -> Self {
        let d = PpoConfig::default();
        Self {
            lr: d.lr,
            gamma: d.gamma,
            clip: d.clip,
            lambda: d.lambda,
            entropy_coef: d.entropy_coef,
            value_coef: d.value_coef,
            update_every: d.update_every,
            epochs: d.epochs,
            minibatch: d.minibatch,
            hidden: d.hidden,
            recurrent: None,
        }
    }
}

impl PpoSection {
    pub fn to_config(&self) -> PpoConfig {
        PpoConfig {
            lr: self.lr,
            gamma: self.gamma,
            clip: self.clip,
            lambda: self.lambda,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            update_every: self.update_every,
            epochs: self.epochs,
            minibatch: self.minibatch,
            hidden: self.hidden.clone(),
            recurrent: self.recurrent.map(|r| RecurrentSpec {
                hidden_size: r.hidden_size,
                truncation: r.truncation,
            }),
        }
    }
}

/// Transition-time presets, in episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionPreset {
    C1,
    C2,
    C3,
}

impl TransitionPreset {
    /// DQN runs use 100/200/300 episodes, PPO runs 3000/5000/7000.
    pub fn episodes(self, agent: &AgentSection) -> u64 {
        let i = self as usize;
        match agent {
            AgentSection::Dqn(_) => [100, 200, 300][i],
            AgentSection::Ppo(_) => [3000, 5000, 7000][i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    pub shaping: bool,
    pub p: Option<u32>,
    pub gate_radius: Option<f64>,
    pub progress_bonus_mode: bool,
    pub progress_bonus: Option<f64>,
}

impl Default for StageSection {
    fn default() -> Self {
        Self {
            shaping: false,
            p: None,
            gate_radius: None,
            progress_bonus_mode: false,
            progress_bonus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    /// Norm order of the potential.
    pub p: u32,
    /// Shaping discount; defaults to the agent's discount.
    pub gamma: Option<f64>,
    pub preset: Option<TransitionPreset>,
    /// Transition clock values in the budget unit.
    pub transitions: Option<Vec<u64>>,
    pub gate_radius: Option<f64>,
    pub progress_bonus_mode: bool,
    pub progress_bonus: Option<f64>,
    /// Explicit stage list for the `custom` baseline.
    pub stages: Vec<StageSection>,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            p: 1,
            gamma: None,
            preset: None,
            transitions: None,
            gate_radius: None,
            progress_bonus_mode: false,
            progress_bonus: None,
            stages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitName {
    Episodes,
    Steps,
}

impl From<UnitName> for ClockUnit {
    fn from(u: UnitName) -> Self {
        match u {
            UnitName::Episodes => ClockUnit::Episodes,
            UnitName::Steps => ClockUnit::Steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub amount: u64,
    pub unit: UnitName,
    /// Checkpoint cadence in budget units; 0 keeps only the fixed points.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Extra checkpoints this far after each transition.
    #[serde(default)]
    pub checkpoint_offsets: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysesSection {
    pub landscape: bool,
    pub sharpness: bool,
    pub actions: bool,
    pub features: bool,
    pub heatmap: bool,
    /// Evaluation episodes per run (per goal on the cross maze).
    pub eval_episodes: usize,
    /// Greedy for DQN and sampling for PPO unless set.
    pub eval_mode: Option<EvalMode>,
    pub action_episodes: usize,
    /// Landscape snapshots this far after the first transition.
    pub landscape_offsets: Vec<u64>,
    pub landscape_points: usize,
    pub landscape_limit: f64,
    pub direction_seed: u64,
    pub probe_batch: usize,
    pub rho: f64,
    /// Inclusive episode-length window for the shared feature trajectory.
    pub feature_window: Option<[usize; 2]>,
    /// Bins of the learning-curve export.
    pub curve_bins: usize,
}

impl Default for AnalysesSection {
    fn default() -> Self {
        Self {
            landscape: false,
            sharpness: true,
            actions: true,
            features: false,
            heatmap: true,
            eval_episodes: 10,
            eval_mode: None,
            action_episodes: s2dlab::analysis::DEFAULT_ACTION_EPISODES,
            landscape_offsets: vec![50, 2000],
            landscape_points: s2dlab::landscape::DEFAULT_AXIS_POINTS,
            landscape_limit: s2dlab::landscape::DEFAULT_AXIS_LIMIT,
            direction_seed: 0,
            probe_batch: 128,
            rho: s2dlab::landscape::DEFAULT_RHO,
            feature_window: None,
            curve_bins: 20,
        }
    }
}

/// Everything needed to reproduce one (baseline, seed) run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub baseline: Baseline,
    pub seed: u64,
    pub train: TrainConfig,
}

impl RunPlan {
    pub fn id(&self) -> String {
        format!("{}/{}", self.baseline, self.seed)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn baselines(&self) -> Vec<Baseline> {
        match &self.baselines {
            Some(b) => b.clone(),
            None if !self.curriculum.stages.is_empty() => vec![Baseline::Custom],
            None => Baseline::PRESETS.to_vec(),
        }
    }

    pub fn clock(&self) -> ClockUnit {
        self.budget.unit.into()
    }

    pub fn eval_mode(&self) -> EvalMode {
        self.analyses.eval_mode.unwrap_or(match self.agent {
            AgentSection::Dqn(_) => EvalMode::Greedy,
            AgentSection::Ppo(_) => EvalMode::Sample,
        })
    }

    /// Stage transition clock values shared by every two-stage baseline.
    pub fn transitions(&self) -> Result<Vec<u64>> {
        let c = &self.curriculum;
        match (&c.preset, &c.transitions) {
            (Some(_), Some(_)) => bail!("curriculum: set either `preset` or `transitions`, not both"),
            (Some(p), None) => {
                if self.budget.unit != UnitName::Episodes {
                    bail!("curriculum.preset counts episodes; budget.unit must be \"episodes\"");
                }
                Ok(vec![p.episodes(&self.agent)])
            }
            (None, Some(t)) => Ok(t.clone()),
            (None, None) => match (&self.agent, self.budget.unit) {
                (AgentSection::Dqn(_), UnitName::Episodes) => Ok(vec![200]),
                (AgentSection::Ppo(_), UnitName::Steps) => Ok(vec![5000]),
                _ => bail!("curriculum.transitions is required for this agent and budget unit"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            bail!("seeds: duplicate seed {s}");
        }
        let baselines = self.baselines();
        if baselines.is_empty() {
            bail!("baselines: list is empty");
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(b) = baselines.iter().find(|b| !seen.insert(**b)) {
            bail!("baselines: duplicate baseline {b}");
        }
        if baselines.contains(&Baseline::Custom) && self.curriculum.stages.is_empty() {
            bail!("baselines: `custom` needs [[curriculum.stages]]");
        }
        if self.budget.amount == 0 {
            bail!("budget.amount must be positive");
        }
        if let TrainGoals::Mode(m) = &self.env.train_goals {
            if m != "random" {
                bail!("env.train_goals: expected a list of indices or \"random\", got {m:?}");
            }
        }
        NormOrder::from_p(self.curriculum.p).map_err(|e| anyhow!("curriculum.p: {e}"))?;
        let transitions = self.transitions()?;
        if !transitions.windows(2).all(|w| w[0] < w[1]) || transitions.first() == Some(&0) {
            bail!("curriculum.transitions must be positive and strictly increasing");
        }
        if let Some(&last) = transitions.last() {
            if last >= self.budget.amount {
                bail!(
                    "budget.amount ({}) must exceed the last transition ({last})",
                    self.budget.amount
                );
            }
        }
        let two_stage = baselines.iter().any(|b| matches!(b, Baseline::S2d | Baseline::D2s));
        if two_stage && transitions.len() != 1 {
            bail!(
                "s2d/d2s baselines take exactly one transition, got {}",
                transitions.len()
            );
        }
        if !self.curriculum.stages.is_empty() && self.curriculum.stages.len() != transitions.len() + 1 {
            bail!(
                "curriculum.stages has {} entries but there are {} transitions",
                self.curriculum.stages.len(),
                transitions.len()
            );
        }
        let a = &self.analyses;
        if a.eval_episodes == 0 || a.action_episodes == 0 {
            bail!("analyses: eval_episodes and action_episodes must be positive");
        }
        if a.landscape_points < 3 || a.landscape_points % 2 == 0 {
            bail!("analyses.landscape_points must be odd and at least 3 so the axes contain 0");
        }
        if !(a.landscape_limit > 0.0) || !(a.rho > 0.0) || a.probe_batch == 0 || a.curve_bins == 0 {
            bail!("analyses: landscape_limit, rho, probe_batch and curve_bins must be positive");
        }
        if a.features {
            match &self.agent {
                AgentSection::Ppo(p) if p.recurrent.is_some() => {}
                _ => bail!("analyses.features needs a recurrent PPO agent ([agent.ppo.recurrent])"),
            }
        }
        // Build one run per baseline to surface remaining errors now, not mid-experiment.
        for b in baselines {
            self.plan(b, self.seeds[0])?;
        }
        Ok(())
    }

    fn env_config(&self, seed: u64) -> Result<EnvConfig> {
        let e = &self.env;
        let mut cfg = EnvConfig::new(e.kind.into());
        cfg.max_steps = e.max_steps;
        cfg.living_penalty = e.living_penalty;
        cfg.goal_bonus = e.goal_bonus;
        cfg.goal_radius_p1 = e.goal_radius_p1;
        cfg.arm_length = e.arm_length;
        cfg.view_radius = e.view_radius;
        cfg.seed = seed;
        cfg.train_goals = match &e.train_goals {
            TrainGoals::Fixed(g) => g.clone(),
            TrainGoals::Mode(_) => {
                let mut all = vec![0, 1, 2];
                all.shuffle(&mut rng_for(seed, stream::GOALS));
                let mut two = all[..2].to_vec();
                two.sort_unstable();
                two
            }
        };
        if cfg.kind == EnvKind::CrossMaze && cfg.train_goals.len() != 2 {
            bail!("env.train_goals: the cross maze trains on exactly two goals");
        }
        cfg.validate().map_err(|err| anyhow!("env: {err}"))?;
        Ok(cfg)
    }

    fn dense_stage(
        &self,
        env: &GridEnv,
        p: u32,
        gate: Option<f64>,
        progress: bool,
        bonus: Option<f64>,
    ) -> Result<RewardStage> {
        let norm = NormOrder::from_p(p).map_err(|e| anyhow!("curriculum: {e}"))?;
        let gamma = self.curriculum.gamma.unwrap_or_else(|| self.agent.gamma());
        let mut stage = RewardStage::dense(PotentialSpec::for_env(norm, env), gamma);
        stage.gate_radius = gate;
        stage.progress_bonus_mode = progress;
        if let Some(b) = bonus {
            stage.progress_bonus = b;
        }
        stage.validate().map_err(|e| anyhow!("curriculum: {e}"))?;
        Ok(stage)
    }

    pub fn curriculum(&self, baseline: Baseline, env: &GridEnv) -> Result<Curriculum> {
        let c = &self.curriculum;
        let t = self.transitions()?;
        let dense = || self.dense_stage(env, c.p, c.gate_radius, c.progress_bonus_mode, c.progress_bonus);
        let out = match baseline {
            Baseline::OnlySparse => Ok(Curriculum::only_sparse()),
            Baseline::OnlyDense => Ok(Curriculum::only_dense(dense()?)),
            Baseline::S2d => Curriculum::s2d(dense()?, t[0]),
            Baseline::D2s => Curriculum::d2s(dense()?, t[0]),
            Baseline::Custom => {
                let stages = c
                    .stages
                    .iter()
                    .map(|s| {
                        if s.shaping {
                            self.dense_stage(
                                env,
                                s.p.unwrap_or(c.p),
                                s.gate_radius,
                                s.progress_bonus_mode,
                                s.progress_bonus,
                            )
                        } else {
                            Ok(RewardStage::sparse())
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Curriculum::new(stages, t)
            }
        };
        out.map_err(|e| anyhow!("curriculum ({baseline}): {e}"))
    }

    /// Clock values every baseline checkpoints at, so runs can be paired.
    pub fn shared_checkpoints(&self) -> Result<Vec<u64>> {
        let t = self.transitions()?;
        let mut out = t.clone();
        let offsets = self.budget.checkpoint_offsets.iter().chain(if self.analyses.landscape {
            self.analyses.landscape_offsets.iter()
        } else {
            [].iter()
        });
        for off in offsets {
            out.extend(t.iter().map(|x| x + off));
        }
        out.retain(|&x| x <= self.budget.amount);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn plan(&self, baseline: Baseline, seed: u64) -> Result<RunPlan> {
        let env_cfg = self.env_config(seed)?;
        let env = GridEnv::new(env_cfg.clone()).map_err(|e| anyhow!("env: {e}"))?;
        let curriculum = self.curriculum(baseline, &env)?;
        let agent = match &self.agent {
            AgentSection::Dqn(d) => AgentConfig::Dqn(d.to_config()),
            AgentSection::Ppo(p) => AgentConfig::Ppo(p.to_config()),
        };
        let train = TrainConfig {
            env: env_cfg,
            agent,
            curriculum,
            clock: self.clock(),
            budget: self.budget.amount,
            checkpoint_every: self.budget.checkpoint_every,
            checkpoint_offsets: Vec::new(),
            extra_checkpoints: self.shared_checkpoints()?,
            seed,
        };
        train.validate().map_err(|e| anyhow!("run {baseline}/{seed}: {e}"))?;
        Ok(RunPlan { baseline, seed, train })
    }

    /// SHA-256 over the canonical JSON of the defaults-filled config.
    ///
    /// Formatting, key order, comments and explicitly written defaults do
    /// not change the hash; the output location is excluded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
