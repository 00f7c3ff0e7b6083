//! Gridworld environments: a fixed-goal 4×4 grid, a random-goal 10×10 grid
//! and a plus-shaped cross maze with a local egocentric window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tabular::MdpTable;

/// Grid cell, `x` is the column and `y` the row (row 0 is the top / north edge).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GridPos {
    pub x: i32,
    pub y: i32,
}

impl GridPos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn l1(self, other: GridPos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

impl std::fmt::Display for GridPos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Four translations. Ids are stable and used in checkpoints and CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

pub const ACTION_COUNT: usize = 4;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Fixed4,
    Random10,
    CrossMaze,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Fixed4 => "fixed4",
            EnvKind::Random10 => "random10",
            EnvKind::CrossMaze => "crossmaze",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed4" => Ok(EnvKind::Fixed4),
            "random10" => Ok(EnvKind::Random10),
            "crossmaze" => Ok(EnvKind::CrossMaze),
            other => Err(Error::Invalid(format!(
                "unknown environment kind '{other}' (expected fixed4, random10 or crossmaze)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub max_steps: usize,
    pub living_penalty: f64,
    pub goal_bonus: f64,
    /// Goal reached when the ℓ1 distance to the goal is at most this.
    pub goal_radius_p1: i32,
    pub seed: u64,
    pub arm_length: i32,
    pub view_radius: i32,
    /// Cross-maze goal indices sampled by `reset`.
    pub train_goals: Vec<usize>,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            max_steps: 50,
            living_penalty: -0.1,
            goal_bonus: 1.0,
            goal_radius_p1: 0,
            seed: 0,
            arm_length: 5,
            view_radius: 2,
            train_goals: vec![0, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Invalid("max_steps must be positive".into()));
        }
        if self.goal_radius_p1 < 0 {
            return Err(Error::Invalid("goal_radius_p1 must be non-negative".into()));
        }
        if self.kind == EnvKind::CrossMaze {
            if self.arm_length < 1 || self.view_radius < 0 {
                return Err(Error::Invalid(
                    "cross maze needs arm_length ≥ 1 and view_radius ≥ 0".into(),
                ));
            }
            if self.train_goals.is_empty() || self.train_goals.iter().any(|&g| g > 2) {
                return Err(Error::Invalid(
                    "train_goals must be a non-empty subset of {0, 1, 2}".into(),
                ));
            }
            let mut sorted = self.train_goals.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.train_goals.len() {
                return Err(Error::Invalid("train_goals contains duplicates".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    /// Ground-truth position for shaping and analysis; not necessarily in `features`.
    pub agent_pos: GridPos,
}

/// One environment step as it flows through training.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward_env: f64,
    pub reward_shaped: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub global_step: u64,
    pub episode_step: usize,
}

/// Result of `GridEnv::step`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    /// The new position is inside the goal region.
    pub reached_goal: bool,
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    cfg: EnvConfig,
    width: i32,
    height: i32,
    free: Vec<bool>,
    start: GridPos,
    goal: GridPos,
    goal_frozen: bool,
    pos: GridPos,
    episode_step: usize,
    done: bool,
}

impl GridEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let (width, height, free, start, goal) = match cfg.kind {
            EnvKind::Fixed4 => (4, 4, vec![true; 16], GridPos::new(0, 0), GridPos::new(3, 3)),
            EnvKind::Random10 => (10, 10, vec![true; 100], GridPos::new(0, 0), GridPos::new(9, 9)),
            EnvKind::CrossMaze => {
                let l = cfg.arm_length;
                let side = 2 * l + 1;
                let mut free = vec![false; (side * side) as usize];
                for i in 0..side {
                    free[(l * side + i) as usize] = true;
                    free[(i * side + l) as usize] = true;
                }
                let start = GridPos::new(l, 2 * l);
                let goal = crossmaze_goal(l, cfg.train_goals[0]);
                (side, side, free, start, goal)
            }
        };
        Ok(Self {
            goal_frozen: cfg.kind == EnvKind::Fixed4,
            cfg,
            width,
            height,
            free,
            start,
            goal,
            pos: start,
            episode_step: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn kind(&self) -> EnvKind {
        self.cfg.kind
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn start(&self) -> GridPos {
        self.start
    }

    pub fn goal(&self) -> GridPos {
        self.goal
    }

    pub fn pos(&self) -> GridPos {
        self.pos
    }

    pub fn episode_step(&self) -> usize {
        self.episode_step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    pub fn in_bounds(&self, p: GridPos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    pub fn is_free(&self, p: GridPos) -> bool {
        self.in_bounds(p) && self.free[(p.y * self.width + p.x) as usize]
    }

    /// Free cells in row-major order; this is also the MDP state order.
    pub fn free_cells(&self) -> Vec<GridPos> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| GridPos::new(x, y)))
            .filter(|&p| self.is_free(p))
            .collect()
    }

    pub fn in_goal_region(&self, p: GridPos) -> bool {
        p.l1(self.goal) <= self.cfg.goal_radius_p1
    }

    /// Cells a `reset` may place the goal on.
    pub fn goal_candidates(&self) -> Vec<GridPos> {
        match self.cfg.kind {
            EnvKind::Fixed4 => vec![GridPos::new(3, 3)],
            EnvKind::Random10 => self.free_cells().into_iter().filter(|&p| p != self.start).collect(),
            EnvKind::CrossMaze => self
                .cfg
                .train_goals
                .iter()
                .map(|&g| crossmaze_goal(self.cfg.arm_length, g))
                .collect(),
        }
    }

    pub fn obs_size(&self) -> usize {
        match self.cfg.kind {
            EnvKind::Fixed4 | EnvKind::Random10 => 4,
            EnvKind::CrossMaze => {
                let side = (2 * self.cfg.view_radius + 1) as usize;
                side * side * 3
            }
        }
    }

    /// Starts an episode. The goal is drawn from `episode_seed` unless frozen.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        if !self.goal_frozen {
            let candidates = self.goal_candidates();
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
            self.goal = candidates[rng.gen_range(0..candidates.len())];
        }
        self.begin(self.start)
    }

    /// Starts an episode towards a given cross-maze goal index (evaluation on held-out goals).
    pub fn reset_with_goal_index(&mut self, index: usize) -> Result<Observation> {
        if self.cfg.kind != EnvKind::CrossMaze || index > 2 {
            return Err(Error::Invalid(format!(
                "goal index {index} is only meaningful for the cross maze (0..=2)"
            )));
        }
        self.goal = crossmaze_goal(self.cfg.arm_length, index);
        Ok(self.begin(self.start))
    }

    /// Starts an episode with an explicit goal cell.
    pub fn reset_with_goal(&mut self, goal: GridPos) -> Result<Observation> {
        if !self.is_free(goal) {
            return Err(Error::Invalid(format!("goal {goal} is not a free cell")));
        }
        if self.goal_frozen && goal != self.goal {
            return Err(Error::Invalid("goal is frozen".into()));
        }
        self.goal = goal;
        Ok(self.begin(self.start))
    }

    /// Pins the goal so the environment becomes a fixed MDP.
    pub fn freeze_goal(&mut self, goal: GridPos) -> Result<()> {
        if !self.is_free(goal) {
            return Err(Error::Invalid(format!("goal {goal} is not a free cell")));
        }
        self.goal = goal;
        self.goal_frozen = true;
        Ok(())
    }

    pub fn is_goal_frozen(&self) -> bool {
        self.goal_frozen
    }

    /// Starts an episode from an arbitrary free cell.
    pub fn place_agent(&mut self, pos: GridPos) -> Result<Observation> {
        if !self.is_free(pos) {
            return Err(Error::Invalid(format!("{pos} is not a free cell")));
        }
        Ok(self.begin(pos))
    }

    fn begin(&mut self, pos: GridPos) -> Observation {
        self.pos = pos;
        self.episode_step = 0;
        self.done = false;
        self.observe()
    }

    /// Cell reached from `from` by `action`; bumps leave the position unchanged.
    pub fn successor(&self, from: GridPos, action: Action) -> GridPos {
        let (dx, dy) = action.delta();
        let to = GridPos::new(from.x + dx, from.y + dy);
        if self.is_free(to) {
            to
        } else {
            from
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        let action =
            Action::from_id(action).ok_or_else(|| Error::Invalid(format!("action id {action} out of range")))?;
        self.pos = self.successor(self.pos, action);
        self.episode_step += 1;
        let reached_goal = self.in_goal_region(self.pos);
        let mut reward = self.cfg.living_penalty;
        if reached_goal {
            reward += self.cfg.goal_bonus;
        }
        self.done = reached_goal || self.episode_step >= self.cfg.max_steps;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done: self.done,
            reached_goal,
        })
    }

    pub fn observe(&self) -> Observation {
        let features = match self.cfg.kind {
            EnvKind::Fixed4 | EnvKind::Random10 => {
                let sx = f64::from(self.width - 1);
                let sy = f64::from(self.height - 1);
                vec![
                    f64::from(self.pos.x) / sx,
                    f64::from(self.pos.y) / sy,
                    f64::from(self.goal.x) / sx,
                    f64::from(self.goal.y) / sy,
                ]
            }
            EnvKind::CrossMaze => self.window_features(),
        };
        Observation {
            features,
            agent_pos: self.pos,
        }
    }

    /// One-hot {wall, empty, goal} per window cell, row-major over the window.
    fn window_features(&self) -> Vec<f64> {
        let r = self.cfg.view_radius;
        let mut out = Vec::with_capacity(self.obs_size());
        for dy in -r..=r {
            for dx in -r..=r {
                let p = GridPos::new(self.pos.x + dx, self.pos.y + dy);
                let channel = if !self.is_free(p) {
                    0
                } else if self.in_goal_region(p) {
                    2
                } else {
                    1
                };
                for c in 0..3 {
                    out.push(if c == channel { 1.0 } else { 0.0 });
                }
            }
        }
        out
    }

    /// Exports the frozen-goal dynamics as a tabular MDP over free cells.
    ///
    /// State `i` is `free_cells()[i]`; goal-region cells are terminal.
    pub fn enumerate_states(&self) -> Result<MdpTable<f64>> {
        if !self.goal_frozen {
            return Err(Error::Contract(format!(
                "{} environment re-samples its goal every episode; freeze the goal before enumerating",
                self.cfg.kind.name()
            )));
        }
        let cells = self.free_cells();
        let index = |p: GridPos| cells.binary_search_by_key(&(p.y, p.x), |c| (c.y, c.x)).ok();
        let mut next = Vec::with_capacity(cells.len() * ACTION_COUNT);
        let mut reward = Vec::with_capacity(cells.len() * ACTION_COUNT);
        let mut terminal = Vec::with_capacity(cells.len());
        for &c in &cells {
            terminal.push(self.in_goal_region(c));
            for a in Action::ALL {
                let to = self.successor(c, a);
                next.push(index(to).expect("successor of a free cell is free"));
                let mut r = self.cfg.living_penalty;
                if self.in_goal_region(to) {
                    r += self.cfg.goal_bonus;
                }
                reward.push(r);
            }
        }
        MdpTable::new(cells.len(), ACTION_COUNT, next, reward, terminal)
    }
}

/// Cross-maze goal cells, clockwise from the south start arm: 0 west, 1 north, 2 east.
pub fn crossmaze_goal(arm_length: i32, index: usize) -> GridPos {
    let l = arm_length;
    match index {
        0 => GridPos::new(0, l),
        1 => GridPos::new(l, 0),
        _ => GridPos::new(2 * l, l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed4() -> GridEnv {
        GridEnv::new(EnvConfig::new(EnvKind::Fixed4)).unwrap()
    }

    #[test]
    fn fixed4_reset_is_constant() {
        let mut env = fixed4();
        for seed in [0, 1, 99] {
            let obs = env.reset(seed);
            assert_eq!(obs.agent_pos, GridPos::new(0, 0));
            assert_eq!(env.goal(), GridPos::new(3, 3));
        }
    }

    #[test]
    fn random10_reset_is_reproducible() {
        let mut env = GridEnv::new(EnvConfig::new(EnvKind::Random10)).unwrap();
        env.reset(1234);
        let g1 = env.goal();
        env.reset(77);
        env.reset(1234);
        assert_eq!(env.goal(), g1);
        assert_ne!(g1, env.start());
    }

    #[test]
    fn entering_goal_pays_bonus_and_ends() {
        let mut env = fixed4();
        env.place_agent(GridPos::new(3, 2)).unwrap();
        let out = env.step(Action::Down as usize).unwrap();
        assert!((out.reward - 0.9).abs() < 1e-15);
        assert!(out.done && out.reached_goal);
    }

    #[test]
    fn bump_keeps_position() {
        let mut env = fixed4();
        env.reset(0);
        let out = env.step(Action::Left as usize).unwrap();
        assert_eq!(out.obs.agent_pos, GridPos::new(0, 0));
        assert_eq!(out.reward, -0.1);
        assert!(!out.done);
    }

    #[test]
    fn time_limit_ends_episode() {
        let mut env = fixed4();
        env.reset(0);
        for i in 1..=50 {
            let out = env.step(Action::Up as usize).unwrap();
            assert_eq!(out.reward, -0.1);
            assert_eq!(out.done, i == 50);
        }
        assert!(matches!(env.step(0), Err(Error::Contract(_))));
    }

    #[test]
    fn observation_normalization_endpoints() {
        let mut env = GridEnv::new(EnvConfig::new(EnvKind::Random10)).unwrap();
        env.freeze_goal(GridPos::new(9, 9)).unwrap();
        let obs = env.reset(0);
        assert_eq!(obs.features, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn crossmaze_window_shape_and_visibility() {
        let mut env = GridEnv::new(EnvConfig::new(EnvKind::CrossMaze)).unwrap();
        env.reset(0);
        env.place_agent(GridPos::new(5, 5)).unwrap();
        let obs = env.observe();
        assert_eq!(obs.features.len(), 75);
        assert_eq!(env.obs_size(), 75);
        // Goals sit 5 cells from the centre, outside a radius-2 window.
        assert!(obs.features.chunks(3).all(|c| c[2] == 0.0));
        // Centre cell is empty, the diagonal neighbour is wall.
        let cell = |dx: i32, dy: i32| -> &[f64] {
            let i = ((dy + 2) * 5 + (dx + 2)) as usize * 3;
            &obs.features[i..i + 3]
        };
        assert_eq!(cell(0, 0), &[0.0, 1.0, 0.0]);
        assert_eq!(cell(1, 1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn crossmaze_goal_visible_nearby() {
        let mut env = GridEnv::new(EnvConfig::new(EnvKind::CrossMaze)).unwrap();
        env.reset_with_goal_index(0).unwrap();
        env.place_agent(GridPos::new(1, 5)).unwrap();
        let obs = env.observe();
        let i = ((0 + 2) * 5 + (-1 + 2)) as usize * 3;
        assert_eq!(&obs.features[i..i + 3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn enumerate_fixed4_matches_step() {
        let mut env = fixed4();
        let mdp = env.enumerate_states().unwrap();
        assert_eq!((mdp.state_count(), mdp.action_count()), (16, 4));
        let cells = env.free_cells();
        assert!(mdp.is_terminal(15));
        for (s, &c) in cells.iter().enumerate() {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..4 {
                env.place_agent(c).unwrap();
                let out = env.step(a).unwrap();
                assert_eq!(cells[mdp.next_state(s, a)], out.obs.agent_pos);
                assert_eq!(mdp.reward(s, a), out.reward);
                assert_eq!(mdp.is_terminal(mdp.next_state(s, a)), out.reached_goal);
            }
        }
        let neighbour = cells.iter().position(|&c| c == GridPos::new(2, 3)).unwrap();
        assert!((mdp.reward(neighbour, Action::Right as usize) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn crossmaze_cell_count() {
        let mut env = GridEnv::new(EnvConfig::new(EnvKind::CrossMaze)).unwrap();
        assert!(env.enumerate_states().is_err());
        env.freeze_goal(crossmaze_goal(5, 2)).unwrap();
        assert_eq!(env.enumerate_states().unwrap().state_count(), 21);
    }

    #[test]
    fn random10_enumeration_requires_frozen_goal() {
        let env = GridEnv::new(EnvConfig::new(EnvKind::Random10)).unwrap();
        assert!(matches!(env.enumerate_states(), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EnvConfig::new(EnvKind::CrossMaze);
        cfg.train_goals = vec![0, 3];
        assert!(GridEnv::new(cfg).is_err());
        let mut cfg = EnvConfig::new(EnvKind::Fixed4);
        cfg.max_steps = 0;
        assert!(GridEnv::new(cfg).is_err());
    }
}
