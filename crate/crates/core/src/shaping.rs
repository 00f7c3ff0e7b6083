//! Potential-based reward shaping and staged reward curricula.
//!
//! A [`Curriculum`] is an ordered list of [`RewardStage`]s switched at
//! strictly increasing clock values. Shaping stages add
//! `γ·Φ(s') − Φ(s)` with `Φ(s) = diam_p(S) − ‖s − g‖_p`; the absorbing
//! state after a `done` transition has potential zero.

use std::collections::BTreeSet;

use crate::envs::{Action, GridEnv, GridPos};
use crate::error::{Error, Result};
use crate::tabular::{optimal_action_sets_for, value_iteration, ActionSet, MdpTable, DEFAULT_TIE_TOL};

/// Rewards with magnitude below this count as zero for support accounting.
pub const SUPPORT_EPS: f64 = 1e-12;

/// Minecraft-style gated progress bonus magnitude.
pub const DEFAULT_PROGRESS_BONUS: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormOrder {
    L1,
    L2,
}

impl NormOrder {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(NormOrder::L1),
            2 => Ok(NormOrder::L2),
            other => Err(Error::Invalid(format!("norm order must be 1 or 2, got {other}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            NormOrder::L1 => 1,
            NormOrder::L2 => 2,
        }
    }

    pub fn distance(self, a: GridPos, b: GridPos) -> f64 {
        let dx = f64::from(a.x - b.x);
        let dy = f64::from(a.y - b.y);
        match self {
            NormOrder::L1 => dx.abs() + dy.abs(),
            NormOrder::L2 => dx.hypot(dy),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub norm: NormOrder,
    pub goal: GridPos,
    /// p-diameter of the free-cell set.
    pub diam: f64,
}

impl PotentialSpec {
    /// Computes the diameter exactly as the largest pairwise p-distance.
    pub fn for_cells(norm: NormOrder, goal: GridPos, cells: &[GridPos]) -> Self {
        let mut diam = 0.0f64;
        for (i, &a) in cells.iter().enumerate() {
            for &b in &cells[i + 1..] {
                diam = diam.max(norm.distance(a, b));
            }
        }
        Self { norm, goal, diam }
    }

    pub fn for_env(norm: NormOrder, env: &GridEnv) -> Self {
        Self::for_cells(norm, env.goal(), &env.free_cells())
    }

    pub fn with_goal(&self, goal: GridPos) -> Self {
        Self { goal, ..self.clone() }
    }

    pub fn distance(&self, s: GridPos) -> f64 {
        self.norm.distance(s, self.goal)
    }
}

/// `Φ(s) = diam − ‖s − g‖_p`.
pub fn potential(spec: &PotentialSpec, s: GridPos) -> f64 {
    spec.diam - spec.distance(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardStage {
    pub shaping_enabled: bool,
    pub potential: Option<PotentialSpec>,
    pub gamma: f64,
    /// Shaping applies only when at least one endpoint lies within this p-distance of the goal.
    pub gate_radius: Option<f64>,
    /// Replaces PBRS by a bonus for stepping closer inside the gate (withdrawn when moving away).
    pub progress_bonus_mode: bool,
    pub progress_bonus: f64,
    /// Flat bonus for one action in every state. Not potential based.
    pub action_bonus: Option<(usize, f64)>,
}

impl RewardStage {
    /// Goal reward only.
    pub fn sparse() -> Self {
        Self {
            shaping_enabled: false,
            potential: None,
            gamma: 1.0,
            gate_radius: None,
            progress_bonus_mode: false,
            progress_bonus: DEFAULT_PROGRESS_BONUS,
            action_bonus: None,
        }
    }

    /// Goal reward plus ungated PBRS.
    pub fn dense(potential: PotentialSpec, gamma: f64) -> Self {
        Self {
            shaping_enabled: true,
            potential: Some(potential),
            gamma,
            ..Self::sparse()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shaping_enabled && self.potential.is_none() {
            return Err(Error::Invalid("shaping stage needs a potential".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(format!(
                "stage gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if let Some(r) = self.gate_radius {
            if !(r >= 0.0) {
                return Err(Error::Invalid("gate_radius must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Same stage with its potential re-centred on `goal`.
    pub fn bound_to(&self, goal: GridPos) -> Self {
        let mut out = self.clone();
        if let Some(p) = &self.potential {
            out.potential = Some(p.with_goal(goal));
        }
        out
    }

    /// True when the stage may change the optimal policy set.
    pub fn invariance_not_guaranteed(&self) -> bool {
        let shaped = self.shaping_enabled && (self.gate_radius.is_some() || self.progress_bonus_mode);
        shaped || self.action_bonus.is_some()
    }
}

/// Shaping reward for one transition under `stage`.
pub fn shaping_term(stage: &RewardStage, s: GridPos, s_next: GridPos, done: bool) -> f64 {
    let Some(phi) = stage.potential.as_ref().filter(|_| stage.shaping_enabled) else {
        return 0.0;
    };
    let (d, d_next) = (phi.distance(s), phi.distance(s_next));
    if stage.progress_bonus_mode {
        let gate = stage.gate_radius.unwrap_or(f64::INFINITY);
        return if d_next < d && d_next <= gate {
            stage.progress_bonus
        } else if d_next > d && d <= gate {
            -stage.progress_bonus
        } else {
            0.0
        };
    }
    if let Some(gate) = stage.gate_radius {
        if d > gate && d_next > gate {
            return 0.0;
        }
    }
    let next = if done { 0.0 } else { potential(phi, s_next) };
    stage.gamma * next - potential(phi, s)
}

/// Extra reward a stage adds on top of the environment reward.
pub fn stage_bonus(stage: &RewardStage, s: GridPos, action: usize, s_next: GridPos, done: bool) -> f64 {
    let mut extra = shaping_term(stage, s, s_next, done);
    if let Some((a, bonus)) = stage.action_bonus {
        if a == action {
            extra += bonus;
        }
    }
    extra
}

/// 1-based stage active at clock value `t`; stage `i` covers `[T_{i−1}, T_i)`.
pub fn stage_index(transitions: &[u64], t: u64) -> usize {
    1 + transitions.partition_point(|&tk| tk <= t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    pub stages: Vec<RewardStage>,
    pub transitions: Vec<u64>,
}

impl Curriculum {
    pub fn new(stages: Vec<RewardStage>, transitions: Vec<u64>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Invalid("curriculum needs at least one stage".into()));
        }
        if transitions.len() + 1 != stages.len() {
            return Err(Error::Invalid(format!(
                "{} stages need {} transition points, got {}",
                stages.len(),
                stages.len() - 1,
                transitions.len()
            )));
        }
        if transitions.first().is_some_and(|&t| t == 0) {
            return Err(Error::Invalid("transition points must be positive".into()));
        }
        if transitions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("transition points must be strictly increasing".into()));
        }
        for s in &stages {
            s.validate()?;
        }
        Ok(Self { stages, transitions })
    }

    pub fn single(stage: RewardStage) -> Self {
        Self::new(vec![stage], vec![]).expect("single stage is valid")
    }

    pub fn only_sparse() -> Self {
        Self::single(RewardStage::sparse())
    }

    pub fn only_dense(dense: RewardStage) -> Self {
        Self::single(dense)
    }

    pub fn s2d(dense: RewardStage, t1: u64) -> Result<Self> {
        Self::new(vec![RewardStage::sparse(), dense], vec![t1])
    }

    pub fn d2s(dense: RewardStage, t1: u64) -> Result<Self> {
        Self::new(vec![dense, RewardStage::sparse()], vec![t1])
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_at(&self, t: u64) -> (usize, &RewardStage) {
        let i = stage_index(&self.transitions, t);
        (i, &self.stages[i - 1])
    }
}

/// Environment reward plus the bonus of the stage active at clock `t`.
#[allow(clippy::too_many_arguments)]
pub fn shaped_reward(
    curriculum: &Curriculum,
    t: u64,
    s: GridPos,
    action: usize,
    s_next: GridPos,
    r_env: f64,
    done: bool,
) -> f64 {
    let (_, stage) = curriculum.stage_at(t);
    r_env + stage_bonus(stage, s, action, s_next, done)
}

/// Environment MDP with the stage's extra reward added to every transition.
///
/// The stage potential is re-centred on the environment's current goal.
pub fn stage_table(env: &GridEnv, stage: &RewardStage) -> Result<MdpTable<f64>> {
    let base = env.enumerate_states()?;
    let cells = env.free_cells();
    let stage = stage.bound_to(env.goal());
    base.map_rewards(|s, a, next, r| r + stage_bonus(&stage, cells[s], a, cells[next], base.is_terminal(next)))
}

/// States with an action whose goal or shaping reward is nonzero.
///
/// The living penalty is left out unless `include_living_penalty` is set.
pub fn support_set(env: &GridEnv, stage: &RewardStage, include_living_penalty: bool) -> Result<BTreeSet<GridPos>> {
    let base = env.enumerate_states()?;
    let cells = env.free_cells();
    let cfg = env.config();
    let stage = stage.bound_to(env.goal());
    let mut out = BTreeSet::new();
    for (s, &cell) in cells.iter().enumerate() {
        if base.is_terminal(s) {
            continue;
        }
        let hit = (0..base.action_count()).any(|a| {
            let next = base.next_state(s, a);
            let done = base.is_terminal(next);
            let mut r = if done { cfg.goal_bonus } else { 0.0 };
            if include_living_penalty {
                r += cfg.living_penalty;
            }
            r += stage_bonus(&stage, cell, a, cells[next], done);
            r.abs() > SUPPORT_EPS
        });
        if hit {
            out.insert(cell);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct S2dReport {
    pub support_sizes: Vec<usize>,
    /// `supp(R_i) ⊆ supp(R_{i+1})` for each consecutive pair.
    pub support_nested: Vec<bool>,
    /// Per-state optimal action sets of stage `i` and `i+1` coincide.
    pub optimal_equal: Vec<bool>,
    /// Per-state optimal action sets of stage `i` contain those of stage `i+1`.
    pub optimal_superset: Vec<bool>,
    /// Number of states whose optimal sets differ, per pair.
    pub differing_states: Vec<usize>,
    /// Stages whose extra reward is not plain PBRS.
    pub invariance_not_guaranteed: Vec<bool>,
    pub valid: bool,
}

/// Checks the two S2D conditions (support nesting and optimal-set nesting) by enumeration.
pub fn validate_s2d(curriculum: &Curriculum, env: &GridEnv, gamma: f64, tol: f64) -> Result<S2dReport> {
    let mut supports = Vec::with_capacity(curriculum.stage_count());
    let mut optimal: Vec<Vec<ActionSet>> = Vec::with_capacity(curriculum.stage_count());
    for stage in &curriculum.stages {
        supports.push(support_set(env, stage, false)?);
        let table = stage_table(env, stage)?;
        let q = value_iteration(&table, gamma, tol)?;
        optimal.push(optimal_action_sets_for(&table, &q, DEFAULT_TIE_TOL.max(10.0 * tol)));
    }
    let mut report = S2dReport {
        support_sizes: supports.iter().map(BTreeSet::len).collect(),
        support_nested: Vec::new(),
        optimal_equal: Vec::new(),
        optimal_superset: Vec::new(),
        differing_states: Vec::new(),
        invariance_not_guaranteed: curriculum
            .stages
            .iter()
            .map(RewardStage::invariance_not_guaranteed)
            .collect(),
        valid: true,
    };
    for i in 1..curriculum.stage_count() {
        report.support_nested.push(supports[i - 1].is_subset(&supports[i]));
        let (prev, next) = (&optimal[i - 1], &optimal[i]);
        report
            .differing_states
            .push(prev.iter().zip(next).filter(|(a, b)| a != b).count());
        report.optimal_equal.push(prev == next);
        report
            .optimal_superset
            .push(prev.iter().zip(next).all(|(a, b)| a.is_superset(b)));
    }
    report.valid = report.support_nested.iter().all(|&b| b) && report.optimal_superset.iter().all(|&b| b);
    Ok(report)
}

/// Counterexample stage: flat `bonus` on the "up" action in every state.
pub fn up_bonus_stage(bonus: f64) -> RewardStage {
    RewardStage {
        action_bonus: Some((Action::Up as usize, bonus)),
        ..RewardStage::sparse()
    }
}
