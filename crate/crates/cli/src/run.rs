//! On-disk layout of a single run and reloading it for analyses.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use s2dlab::agents::{CheckpointBundle, StoredTransition};
use s2dlab::envs::GridEnv;
use s2dlab::nn::{read_checkpoint, NetSpec};

use crate::config::{AgentSection, Baseline, ExperimentConfig, RunPlan};
use crate::io::{read_checkpoint_index, read_replay, CheckpointEntry};

pub const RUN_FILE: &str = "run.toml";
pub const DONE_FILE: &str = "DONE";

/// `run.toml`: which run this directory holds and the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub baseline: Baseline,
    pub seed: u64,
    pub config_hash: String,
    pub experiment: ExperimentConfig,
}

impl RunRecord {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }
}

/// A finished run directory with its checkpoints loaded.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub plan: RunPlan,
    pub spec: NetSpec,
    pub checkpoints: Vec<(CheckpointEntry, CheckpointBundle)>,
}

/// Network spec the configured agent trains (the policy net for PPO).
pub fn agent_spec(agent: &AgentSection, env: &GridEnv) -> Result<NetSpec> {
    let spec = match agent {
        AgentSection::Dqn(d) => d.to_config().net_spec(env.obs_size(), env.action_count()),
        AgentSection::Ppo(p) => p.to_config().policy_spec(env.obs_size(), env.action_count()),
    };
    spec.map_err(|e| anyhow!("agent: {e}"))
}

impl LoadedRun {
    /// Loads a completed run.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(DONE_FILE).exists() {
            bail!("{} is not a completed run (no {DONE_FILE} marker)", dir.display());
        }
        Self::load_unchecked(dir)
    }

    /// Loads whatever training has written, without the completion check.
    pub fn load_unchecked(dir: &Path) -> Result<Self> {
        let record = RunRecord::read(dir)?;
        let plan = record.experiment.plan(record.baseline, record.seed)?;
        let env = GridEnv::new(plan.train.env.clone())?;
        let spec = agent_spec(&record.experiment.agent, &env)?;
        let mut checkpoints = Vec::new();
        for entry in read_checkpoint_index(dir)? {
            let bundle = read_checkpoint(dir.join(&entry.file))
                .map_err(|e| anyhow!("{}: {e}", dir.join(&entry.file).display()))?;
            if bundle.spec != spec {
                bail!("{}: network spec does not match the run's config", entry.file);
            }
            checkpoints.push((entry, bundle));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            record,
            plan,
            spec,
            checkpoints,
        })
    }

    pub fn id(&self) -> String {
        self.plan.id()
    }

    /// Fresh environment with the run's configuration.
    pub fn env(&self) -> Result<GridEnv> {
        Ok(GridEnv::new(self.plan.train.env.clone())?)
    }

    pub fn replay(&self) -> Result<Vec<StoredTransition>> {
        read_replay(&self.dir.join("replay.csv"), self.spec.input_size())
    }

    pub fn final_params(&self) -> Result<&[f64]> {
        self.checkpoints
            .last()
            .map(|c| &c.1.params[..])
            .ok_or_else(|| anyhow!("{} has no checkpoints", self.dir.display()))
    }

    /// Checkpoint taken at clock value `clock`.
    pub fn checkpoint_at(&self, clock: u64) -> Result<&CheckpointBundle> {
        self.checkpoints
            .iter()
            .find(|c| c.0.clock == clock)
            .map(|c| &c.1)
            .ok_or_else(|| {
                let have: Vec<String> = self.checkpoints.iter().map(|c| c.0.clock.to_string()).collect();
                anyhow!(
                    "{}: no checkpoint at clock {clock}; available: {}",
                    self.id(),
                    have.join(", ")
                )
            })
    }
}
