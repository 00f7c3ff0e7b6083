//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p s2dlab-cli --test acceptance --release [-- 1 4 7]` runs all
//! criteria or the listed ones. Training artifacts go to `target/acceptance/`.
//! The process exits non-zero on a hard failure only when
//! `S2DLAB_ACCEPTANCE_STRICT=1`; otherwise the lines are the verdict.
//! `S2DLAB_ACCEPTANCE_REUSE=1` keeps earlier training output (timings are then
//! those of cached runs and runtime limits are not checked for training).

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s2dlab::agents::{
    surrogate_loss_and_grad, ActMode, DqnConfig, PpoConfig, Segment, StoredTransition, SurrogateBatch, TdBatch, TdLoss,
};
use s2dlab::analysis::{action_frequencies, mean_pairwise_distance, run_episode, trajectory_heatmap, EpisodeStart};
use s2dlab::envs::{crossmaze_goal, Action, EnvConfig, EnvKind, GridEnv, GridPos};
use s2dlab::landscape::{default_axes, loss_grid, make_directions, sharpness, LossFunction};
use s2dlab::nn::{backward, forward, seq_backward, seq_forward, Matrix, NetSpec, RecurrentSpec};
use s2dlab::shaping::{
    potential, shaping_term, stage_table, support_set, up_bonus_stage, validate_s2d, Curriculum, NormOrder,
    PotentialSpec, RewardStage,
};
use s2dlab::tabular::{optimal_action_sets_for, value_iteration, DEFAULT_TIE_TOL};

use s2dlab_cli::config::{Baseline, ExperimentConfig, TransitionPreset, UnitName};
use s2dlab_cli::runner::{default_workers, run_experiment, Report, RunOptions, RunStatus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

struct Ctx {
    root: PathBuf,
    configs: PathBuf,
    reuse: bool,
}

type Check = fn(&Ctx) -> Result<Outcome>;

const CRITERIA: [(usize, &str, Check); 12] = [
    (1, "PBRS invariance", c1),
    (2, "telescoping identity", c2),
    (3, "support nesting", c3),
    (4, "gradient correctness", c4),
    (5, "sharpness oracle", c5),
    (6, "landscape contract", c6),
    (7, "fixed4 DQN learning", c7),
    (8, "S2D trend on random10 PPO", c8),
    (9, "sharpness trend (soft)", c9),
    (10, "analysis determinism", c10),
    (11, "crossmaze held-out goal", c11),
    (12, "end-to-end reproducibility", c12),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let ctx = Ctx {
        root: manifest.join("../../target/acceptance"),
        configs: manifest.join("../../configs"),
        reuse: std::env::var("S2DLAB_ACCEPTANCE_REUSE").is_ok_and(|v| v == "1"),
    };
    if !ctx.reuse && ctx.root.exists() {
        fs::remove_dir_all(&ctx.root).expect("clearing target/acceptance");
    }
    fs::create_dir_all(&ctx.root).expect("creating target/acceptance");

    let mut hard_failures = 0;
    for (n, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = check(&ctx);
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass && n != 9 {
            hard_failures += 1;
        }
        println!(
            "{} C{n} {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {hard_failures} hard failure(s); artifacts in {}",
        ctx.root.display()
    );
    if hard_failures > 0 && std::env::var("S2DLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- exact suites

const RANDOM10_GOALS: [(i32, i32); 5] = [(9, 9), (4, 7), (0, 5), (8, 1), (3, 3)];

fn frozen(kind: EnvKind, goal: Option<GridPos>) -> Result<GridEnv> {
    let mut env = GridEnv::new(EnvConfig::new(kind))?;
    if let Some(g) = goal {
        env.freeze_goal(g)?;
    }
    Ok(env)
}

fn invariance_envs() -> Result<Vec<(String, GridEnv)>> {
    let mut out = vec![("fixed4".to_string(), frozen(EnvKind::Fixed4, None)?)];
    for (x, y) in RANDOM10_GOALS {
        out.push((
            format!("random10 goal ({x},{y})"),
            frozen(EnvKind::Random10, Some(GridPos::new(x, y)))?,
        ));
    }
    Ok(out)
}

fn c1(_: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for (name, env) in invariance_envs()? {
        let base = env.enumerate_states()?;
        let cells = env.free_cells();
        for p in [1, 2] {
            for gamma in [0.9, 0.99] {
                let spec = PotentialSpec::for_env(NormOrder::from_p(p)?, &env);
                let shaped = stage_table(&env, &RewardStage::dense(spec.clone(), gamma))?;
                let qb = value_iteration(&base, gamma, 1e-12)?;
                let qs = value_iteration(&shaped, gamma, 1e-12)?;
                if optimal_action_sets_for(&base, &qb, DEFAULT_TIE_TOL)
                    != optimal_action_sets_for(&shaped, &qs, DEFAULT_TIE_TOL)
                {
                    mismatches.push(format!("{name} p={p} γ={gamma}"));
                }
                for s in (0..base.state_count()).filter(|&s| !base.is_terminal(s)) {
                    let phi = potential(&spec, cells[s]);
                    for a in 0..base.action_count() {
                        worst = worst.max((qs.get(s, a) - (qb.get(s, a) - phi)).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && worst < 1e-8 && secs < 5.0,
        format!("{cases} cases, optimal sets differ in {mismatches:?}, max |Q_s − (Q_b − Φ)| = {worst:.2e} (< 1e-8), {secs:.2} s (< 5)"),
    )
}

fn walk_to_goal(env: &GridEnv, rng: &mut ChaCha8Rng) -> Vec<GridPos> {
    let cells = env.free_cells();
    let mut s = loop {
        let c = cells[rng.gen_range(0..cells.len())];
        if c != env.goal() {
            break c;
        }
    };
    let mut path = vec![s];
    while s != env.goal() {
        s = env.successor(s, Action::from_id(rng.gen_range(0..4)).expect("action id"));
        path.push(s);
    }
    path
}

fn c2(_: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let mut envs = invariance_envs()?;
    envs.push((
        "crossmaze".into(),
        frozen(EnvKind::CrossMaze, Some(crossmaze_goal(5, 2)))?,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut walks = 0;
    for (_, env) in &envs {
        let spec = PotentialSpec::for_env(NormOrder::L1, env);
        for gamma in [0.9, 0.99, 1.0] {
            let stage = RewardStage::dense(spec.clone(), gamma);
            for _ in 0..1000 {
                let path = walk_to_goal(env, &mut rng);
                let (mut sum, mut disc) = (0.0, 1.0);
                for t in 0..path.len() - 1 {
                    sum += disc * shaping_term(&stage, path[t], path[t + 1], t + 2 == path.len());
                    disc *= gamma;
                }
                worst = worst.max((sum + potential(&spec, path[0])).abs());
                walks += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && secs < 2.0,
        format!(
            "{walks} walks over {} envs, max |ΣγᵗF + Φ(s0)| = {worst:.2e} (< 1e-9), {secs:.2} s (< 2)",
            envs.len()
        ),
    )
}

fn c3(ctx: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let mut checked = 0;
    let mut bad = Vec::new();
    for file in ["fixed4_dqn.toml", "random10_ppo.toml", "crossmaze_rnn.toml"] {
        let base = ExperimentConfig::load(&ctx.configs.join(file))?;
        for preset in [TransitionPreset::C1, TransitionPreset::C2, TransitionPreset::C3] {
            for p in [1, 2] {
                let mut cfg = base.clone();
                cfg.curriculum.preset = Some(preset);
                cfg.curriculum.transitions = None;
                cfg.curriculum.p = p;
                // presets count episodes: 100/200/300 for DQN, 3000/5000/7000 for PPO
                cfg.budget.unit = UnitName::Episodes;
                cfg.budget.amount = 25_000;
                let plan = cfg.plan(Baseline::S2d, cfg.seeds[0])?;
                let mut env = GridEnv::new(plan.train.env.clone())?;
                let goal = match env.kind() {
                    EnvKind::Fixed4 => env.goal(),
                    EnvKind::Random10 => GridPos::new(9, 9),
                    EnvKind::CrossMaze => crossmaze_goal(env.config().arm_length, 0),
                };
                env.freeze_goal(goal)?;
                let stages = &plan.train.curriculum.stages;
                let supports: Vec<_> = stages
                    .iter()
                    .map(|s| support_set(&env, &s.bound_to(goal), false))
                    .collect::<s2dlab::Result<_>>()?;
                let nested = supports.windows(2).all(|w| w[0].is_subset(&w[1]));
                let report = validate_s2d(&plan.train.curriculum, &env, cfg.agent.gamma(), 1e-12)?;
                if !nested || !report.valid {
                    bad.push(format!("{file} {preset:?} p={p}"));
                }
                checked += 1;
            }
        }
    }
    let env = frozen(EnvKind::Fixed4, None)?;
    let counter = Curriculum::new(vec![RewardStage::sparse(), up_bonus_stage(0.5)], vec![10])?;
    let rejected = !validate_s2d(&counter, &env, 0.99, 1e-12)?.valid;
    let secs = started.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && rejected && secs < 1.0,
        format!("{checked} S2D presets nested and valid (failing: {bad:?}); non-potential counterexample rejected: {rejected}; {secs:.2} s (< 1)"),
    )
}

const H: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` against `grad`; coordinates on a ReLU kink are skipped.
fn fd_error(params: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + H;
        let up = f(&p);
        p[k] = orig - H;
        let down = f(&p);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * H);
        if (grad[k] - numeric).abs() > 1e-7 && kink_near(&f, &p, k) {
            continue;
        }
        worst = worst.max(rel_err(grad[k], numeric));
    }
    worst
}

fn kink_near(f: &impl Fn(&[f64]) -> f64, p: &[f64], k: usize) -> bool {
    let mut q = p.to_vec();
    let mut slope = |a: f64, b: f64| {
        q[k] = p[k] + a;
        let fa = f(&q);
        q[k] = p[k] + b;
        (f(&q) - fa) / (b - a)
    };
    let left = slope(-2.0 * H, -H);
    let right = slope(H, 2.0 * H);
    (left - right).abs() > 1e-4 * left.abs().max(right.abs()).max(1e-6)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn jittered(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    spec.init_params::<f64, _>(rng)
        .0
        .iter()
        .map(|v| v + rng.gen_range(-0.1..0.1))
        .collect()
}

fn weighted(out: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

/// The networks the experiments build: DQN on both open grids, PPO policy and
/// value heads, and the recurrent crossmaze pair.
fn used_specs() -> Result<Vec<(String, NetSpec)>> {
    let fixed4 = frozen(EnvKind::Fixed4, None)?;
    let random10 = frozen(EnvKind::Random10, None)?;
    let maze = frozen(EnvKind::CrossMaze, None)?;
    let ppo = PpoConfig::default();
    let rnn = PpoConfig {
        hidden: vec![64],
        recurrent: Some(RecurrentSpec {
            hidden_size: 32,
            truncation: 8,
        }),
        ..PpoConfig::default()
    };
    Ok(vec![
        (
            "dqn fixed4".into(),
            DqnConfig::default().net_spec(fixed4.obs_size(), 4)?,
        ),
        (
            "dqn random10".into(),
            DqnConfig::default().net_spec(random10.obs_size(), 4)?,
        ),
        ("ppo policy".into(), ppo.policy_spec(random10.obs_size(), 4)?),
        ("ppo value".into(), ppo.value_spec(random10.obs_size())?),
        ("rnn policy".into(), rnn.policy_spec(maze.obs_size(), 4)?),
        ("rnn value".into(), rnn.value_spec(maze.obs_size())?),
    ])
}

fn td_items(rng: &mut ChaCha8Rng, width: usize, n: usize) -> Vec<StoredTransition> {
    (0..n)
        .map(|i| StoredTransition {
            features: (0..width).map(|_| rng.gen_range(0.0..1.0)).collect(),
            action: rng.gen_range(0..4),
            reward: rng.gen_range(-1.0..1.0),
            next_features: (0..width).map(|_| rng.gen_range(0.0..1.0)).collect(),
            done: i % 5 == 0,
            pos: GridPos::default(),
            next_pos: GridPos::default(),
            goal: GridPos::default(),
            reward_env: 0.0,
        })
        .collect()
}

fn c4(_: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let specs = used_specs()?;
    let mut errors: Vec<(String, f64)> = Vec::new();

    // 12 raw forward/backward checks: every used spec, twice
    for round in 0..2 {
        for (name, spec) in &specs {
            let params = jittered(spec, &mut rng);
            let rows = 6;
            let x = random_matrix(&mut rng, rows, spec.input_size());
            let w = random_matrix(&mut rng, rows, spec.output_size());
            let err = if spec.is_recurrent() {
                let h0: Vec<f64> = (0..spec.recurrent.map_or(0, |r| r.hidden_size))
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect();
                let (_, cache) = seq_forward(spec, &params, &x, Some(&h0))?;
                let g = seq_backward(spec, &params, &cache, &w)?;
                fd_error(&params, &g, |p| {
                    weighted(&seq_forward(spec, p, &x, Some(&h0)).expect("forward").0, &w)
                })
            } else {
                let (_, cache) = forward(spec, &params, &x)?;
                let (g, _) = backward(spec, &params, &cache, &w)?;
                fd_error(&params, &g, |p| weighted(&forward(spec, p, &x).expect("forward").0, &w))
            };
            errors.push((format!("{name} #{round}"), err));
        }
    }
    // 4 TD losses on the DQN nets
    for (name, spec) in specs.iter().take(2).cycle().take(4) {
        let online = jittered(spec, &mut rng);
        let target = jittered(spec, &mut rng);
        let items = td_items(&mut rng, spec.input_size(), 16);
        let td = TdLoss::new(spec, &target, TdBatch::from_transitions(&items)?, 0.99)?;
        let (_, g) = td.loss_and_grad(&online)?;
        errors.push((
            format!("td {name}"),
            fd_error(&online, &g, |p| td.loss(p).expect("td loss")),
        ));
    }
    // 4 clipped surrogates on the policy nets, feed-forward and recurrent
    for (name, spec) in [&specs[2], &specs[4], &specs[2], &specs[4]] {
        let params = jittered(spec, &mut rng);
        let recurrent = spec.is_recurrent();
        let segments = (0..3)
            .map(|_| Segment {
                obs: random_matrix(&mut rng, 4, spec.input_size()),
                actions: (0..4).map(|_| rng.gen_range(0..4)).collect(),
                old_log_probs: (0..4).map(|_| 0.25f64.ln() + rng.gen_range(-0.1..0.1)).collect(),
                advantages: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                h0: recurrent.then(|| {
                    (0..spec.recurrent.map_or(0, |r| r.hidden_size))
                        .map(|_| rng.gen_range(-0.3..0.3))
                        .collect()
                }),
            })
            .collect();
        let batch = SurrogateBatch { segments };
        let (_, g) = surrogate_loss_and_grad(spec, &params, &batch, 0.2, 0.03, true)?;
        let g = g.ok_or_else(|| anyhow!("surrogate returned no gradient"))?;
        let err = fd_error(&params, &g, |p| {
            surrogate_loss_and_grad(spec, p, &batch, 0.2, 0.03, false)
                .expect("surrogate")
                .0
                .total
        });
        errors.push((format!("surrogate {name}"), err));
    }
    let secs = started.elapsed().as_secs_f64();
    let (worst_name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap_or_default();
    outcome(
        errors.len() == 20 && worst < 1e-4 && secs < 10.0,
        format!(
            "{} nets, max relative error {worst:.2e} ({worst_name}) (< 1e-4), {secs:.2} s (< 10)",
            errors.len()
        ),
    )
}

/// ½λ‖w‖².
struct Quadratic(f64);

impl LossFunction<f64> for Quadratic {
    fn loss(&self, w: &[f64]) -> s2dlab::Result<f64> {
        Ok(0.5 * self.0 * w.iter().map(|v| v * v).sum::<f64>())
    }

    fn loss_and_grad(&self, w: &[f64]) -> s2dlab::Result<(f64, Vec<f64>)> {
        Ok((self.loss(w)?, w.iter().map(|v| self.0 * v).collect()))
    }
}

fn c5(_: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let rho = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for lambda in [0.1, 1.0, 10.0] {
        for _ in 0..5 {
            let w: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let want = lambda * rho * norm + 0.5 * lambda * rho * rho;
            let got = sharpness(&Quadratic(lambda), &w, rho)?.sharpness;
            worst = worst.max((got - want).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && secs < 1.0,
        format!(
            "λ ∈ {{0.1, 1, 10}}, ρ = 0.02, max |sharpness − (λρ‖w‖ + ½λρ²)| = {worst:.2e} (< 1e-6), {secs:.3} s (< 1)"
        ),
    )
}

fn c6(_: &Ctx) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = DqnConfig::default().net_spec(4, 4)?;
    let theta = spec.init_params::<f64, _>(&mut rng).0.to_vec();
    let items: Vec<StoredTransition> = td_items(&mut rng, 4, 128);
    let loss = TdLoss::new(&spec, &theta, TdBatch::from_transitions(&items)?, 0.99)?;
    let dirs = make_directions::<f64>(theta.len(), 66)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let ortho = (dot(&dirs.x, &dirs.x) - 1.0)
        .abs()
        .max((dot(&dirs.y, &dirs.y) - 1.0).abs())
        .max(dot(&dirs.x, &dirs.y).abs());
    let axes = default_axes::<f64>();
    let axes_ok = axes.len() == 41 && axes[0] == -10.0 && axes[40] == 10.0;

    let started = Instant::now();
    let grid = loss_grid(&loss, &theta, &dirs, &axes, &axes, 0)?;
    let secs = started.elapsed().as_secs_f64();
    let center = grid.center().map(f64::to_bits) == Some(loss.loss(&theta)?.to_bits());
    let mirrored = loss_grid(&loss, &theta, &dirs.reflect_x(), &axes, &axes, 0)?;
    let n = axes.len();
    let reflect =
        (0..n).all(|i| (0..n).all(|j| mirrored.losses.get(i, j).to_bits() == grid.losses.get(n - 1 - i, j).to_bits()));
    outcome(
        center && ortho < 1e-10 && reflect && axes_ok && secs < 30.0,
        format!(
            "center bit-exact {center}, orthonormality error {ortho:.1e} (< 1e-10), reflection bit-exact {reflect}, axes [−10, 10] × 41 {axes_ok}, 41×41 grid on {} params with batch 128 in {secs:.2} s (< 30)",
            theta.len()
        ),
    )
}

fn c10(_: &Ctx) -> Result<Outcome> {
    let started = Instant::now();
    let mut env = frozen(EnvKind::Random10, None)?;
    let spec = PpoConfig::default().policy_spec(env.obs_size(), 4)?;
    let params = spec
        .init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(10))
        .0
        .to_vec();
    let seeds = [100, 101, 102, 103, 104];
    let f1 = action_frequencies(&spec, &params, &mut env, &seeds, &mut ChaCha8Rng::seed_from_u64(1))?;
    let f2 = action_frequencies(&spec, &params, &mut env, &seeds, &mut ChaCha8Rng::seed_from_u64(1))?;
    let sum_err = (f1.iter().sum::<f64>() - 1.0).abs();
    let same = f1.iter().map(|v| v.to_bits()).eq(f2.iter().map(|v| v.to_bits()));

    let triangle = mean_pairwise_distance(&Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]])?);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records = (0..30)
        .map(|s| {
            Ok(run_episode(
                &spec,
                &params,
                &mut env,
                EpisodeStart::Seeded(s),
                ActMode::Sample,
                &mut rng,
            )?
            .record)
        })
        .collect::<Result<Vec<_>>>()?;
    let heat = trajectory_heatmap(&records, 10, 10)?;
    let want: u64 = records.iter().map(|r| r.length as u64 + 1).sum();
    let secs = started.elapsed().as_secs_f64();
    outcome(
        sum_err <= 1e-9 && same && triangle == 5.0 && heat.total() == want && secs < 10.0,
        format!(
            "frequency sum error {sum_err:.1e}, rerun identical {same}, {{(0,0),(3,4)}} → {triangle}, heatmap total {} vs Σ(len+1) {want}, {secs:.2} s (< 10)",
            heat.total()
        ),
    )
}

// ------------------------------------------------------------ training suites

fn train(ctx: &Ctx, name: &str, cfg: &ExperimentConfig) -> Result<(PathBuf, Report)> {
    let out = ctx.root.join(name);
    let report = run_experiment(
        cfg,
        &RunOptions {
            out: out.clone(),
            workers: default_workers(),
            force: false,
        },
    )?;
    if let Some((id, RunStatus::Failed(e))) = report.runs.iter().find(|r| matches!(r.1, RunStatus::Failed(_))) {
        bail!("run {id} failed: {e}");
    }
    if let Some((pass, Some(e))) = report.passes.iter().find(|p| p.1.is_some()) {
        bail!("pass {pass} failed: {e}");
    }
    Ok((out, report))
}

fn max_trained_seconds(report: &Report) -> f64 {
    report
        .runs
        .iter()
        .zip(&report.seconds)
        .filter(|(r, _)| r.1 == RunStatus::Trained)
        .map(|(_, s)| *s)
        .fold(0.0, f64::max)
}

fn total_trained_seconds(report: &Report) -> f64 {
    report
        .runs
        .iter()
        .zip(&report.seconds)
        .filter(|(r, _)| r.1 == RunStatus::Trained)
        .map(|(_, s)| *s)
        .sum()
}

fn rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    reader
        .records()
        .map(|r| {
            Ok(header
                .iter()
                .map(String::from)
                .zip(r?.iter().map(String::from))
                .collect())
        })
        .collect()
}

fn field(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    row.get(key)
        .ok_or_else(|| anyhow!("missing column {key}"))?
        .parse()
        .map_err(|e| anyhow!("column {key}: {e}"))
}

fn summary_value(out: &Path, baseline: Baseline, seed: u64, window: &str, column: &str) -> Result<f64> {
    let path = out.join(baseline.name()).join(seed.to_string()).join("summary.csv");
    let row = rows(&path)?
        .into_iter()
        .find(|r| r.get("window").is_some_and(|w| w == window))
        .ok_or_else(|| anyhow!("{}: no {window} window", path.display()))?;
    field(&row, column)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Half-width of a two-sided 95% t interval for the mean.
fn ci95(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    const T: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    let t = T.get(n - 2).copied().unwrap_or(1.96);
    t * sd / (n as f64).sqrt()
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn load_config(ctx: &Ctx, file: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&ctx.configs.join(file))?;
    cfg.output = None;
    Ok(cfg)
}

/// Shortest path length from the start to the goal, by breadth-first search.
fn shortest_path(env: &GridEnv) -> Option<usize> {
    let mut seen = BTreeMap::from([(env.start(), 0usize)]);
    let mut queue = VecDeque::from([env.start()]);
    while let Some(s) = queue.pop_front() {
        let d = seen[&s];
        if s == env.goal() {
            return Some(d);
        }
        for a in 0..4 {
            let n = env.successor(s, Action::from_id(a).expect("action id"));
            seen.entry(n).or_insert_with(|| {
                queue.push_back(n);
                d + 1
            });
        }
    }
    None
}

fn c7(ctx: &Ctx) -> Result<Outcome> {
    let cfg = load_config(ctx, "fixed4_dqn.toml")?;
    let optimal = shortest_path(&frozen(EnvKind::Fixed4, None)?).ok_or_else(|| anyhow!("fixed4 goal unreachable"))?;
    let (out, report) = train(ctx, "c7_fixed4_dqn", &cfg)?;
    let mut parts = Vec::new();
    let mut all = true;
    for b in Baseline::PRESETS {
        let mut good_seeds = 0;
        let mut counts = Vec::new();
        for &seed in &cfg.seeds {
            let evals = rows(&out.join(b.name()).join(seed.to_string()).join("eval.csv"))?;
            let hits = evals
                .iter()
                .map(|r| Ok(field(r, "success")? == 1.0 && field(r, "length")? as usize == optimal))
                .collect::<Result<Vec<bool>>>()?
                .into_iter()
                .filter(|&h| h)
                .count();
            if hits * 10 >= 9 * evals.len() {
                good_seeds += 1;
            }
            counts.push(format!("{hits}/{}", evals.len()));
        }
        let ok = good_seeds * 5 >= 4 * cfg.seeds.len();
        all &= ok;
        parts.push(format!(
            "{b} {good_seeds}/{} seeds ({})",
            cfg.seeds.len(),
            counts.join(" ")
        ));
    }
    let slowest = max_trained_seconds(&report);
    let time_ok = ctx.reuse || slowest < 120.0;
    outcome(
        all && time_ok,
        format!(
            "optimal length {optimal}; {}; slowest run {slowest:.1} s (< 120)",
            parts.join("; ")
        ),
    )
}

fn random10_runs(ctx: &Ctx) -> Result<(ExperimentConfig, PathBuf, Report)> {
    let cfg = load_config(ctx, "random10_ppo.toml")?;
    let (out, report) = train(ctx, "c8_random10_ppo", &cfg)?;
    Ok((cfg, out, report))
}

fn c8(ctx: &Ctx) -> Result<Outcome> {
    let (cfg, out, report) = random10_runs(ctx)?;
    let per = |b: Baseline| -> Result<Vec<f64>> {
        cfg.seeds
            .iter()
            .map(|&s| summary_value(&out, b, s, "train_final10", "success_rate"))
            .collect()
    };
    let (s2d, sparse, d2s, dense) = (
        per(Baseline::S2d)?,
        per(Baseline::OnlySparse)?,
        per(Baseline::D2s)?,
        per(Baseline::OnlyDense)?,
    );
    let total = total_trained_seconds(&report);
    let pass = mean(&s2d) >= mean(&sparse) && mean(&s2d) >= mean(&d2s) && (ctx.reuse || total < 1800.0);
    outcome(
        pass,
        format!(
            "final-10% success mean(S2D) {:.3} {} vs Only Sparse {:.3} {}, D2S {:.3} {} (Only Dense {:.3} {}); training {total:.0} s (< 1800)",
            mean(&s2d),
            fmt_list(&s2d),
            mean(&sparse),
            fmt_list(&sparse),
            mean(&d2s),
            fmt_list(&d2s),
            mean(&dense),
            fmt_list(&dense)
        ),
    )
}

fn final_sharpness(out: &Path, b: Baseline, seed: u64) -> Result<f64> {
    let path = out.join(b.name()).join(seed.to_string()).join("sharpness.csv");
    let last = rows(&path)?
        .pop()
        .ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    field(&last, "sharpness")
}

fn c9(ctx: &Ctx) -> Result<Outcome> {
    // reuses the criterion 8 runs; cached when they already exist
    let (cfg, out, _) = random10_runs(ctx)?;
    let per = |b: Baseline| -> Result<Vec<f64>> { cfg.seeds.iter().map(|&s| final_sharpness(&out, b, s)).collect() };
    let (s2d, dense) = (per(Baseline::S2d)?, per(Baseline::OnlyDense)?);
    let pass = mean(&s2d) <= mean(&dense);
    let detail = format!(
        "end-of-training sharpness S2D {:.4} ± {:.4} {} vs Only Dense {:.4} ± {:.4} {} (95% t intervals)",
        mean(&s2d),
        ci95(&s2d),
        fmt_list(&s2d),
        mean(&dense),
        ci95(&dense),
        fmt_list(&dense)
    );
    if pass {
        return outcome(true, detail);
    }
    let warning = ctx.root.join("c9_warning.txt");
    fs::write(&warning, format!("soft criterion 9 not met: {detail}\n"))?;
    outcome(
        false,
        format!("{detail}; soft, warning written to {}", warning.display()),
    )
}

fn c11(ctx: &Ctx) -> Result<Outcome> {
    let mut cfg = load_config(ctx, "crossmaze_rnn.toml")?;
    cfg.baselines = Some(vec![Baseline::OnlySparse, Baseline::S2d]);
    let (out, report) = train(ctx, "c11_crossmaze_rnn", &cfg)?;
    let per = |b: Baseline| -> Result<Vec<f64>> {
        cfg.seeds
            .iter()
            .map(|&s| summary_value(&out, b, s, "eval_held_out", "mean_len"))
            .collect()
    };
    let (s2d, sparse) = (per(Baseline::S2d)?, per(Baseline::OnlySparse)?);
    let cap = cfg.env.max_steps as f64;
    let capped = if mean(&s2d) == cap && mean(&sparse) == cap {
        " (both at the step cap)"
    } else {
        ""
    };
    let total = total_trained_seconds(&report);
    outcome(
        mean(&s2d) <= mean(&sparse) && (ctx.reuse || total < 2700.0),
        format!(
            "held-out goal mean episode length S2D {:.1} {} vs Only Sparse {:.1} {}{capped}; training {total:.0} s (< 2700)",
            mean(&s2d),
            fmt_list(&s2d),
            mean(&sparse),
            fmt_list(&sparse)
        ),
    )
}

const SMALL_DQN: &str = r#"
seeds = [0, 1]
[env]
kind = "fixed4"
[agent.dqn]
batch = 32
[curriculum]
transitions = [20]
[budget]
amount = 60
unit = "episodes"
checkpoint_every = 20
[analyses]
landscape = true
landscape_offsets = [10]
landscape_points = 7
"#;

const SMALL_RNN: &str = r#"
seeds = [0]
[env]
kind = "crossmaze"
[agent.ppo]
hidden = [32]
[agent.ppo.recurrent]
hidden_size = 16
truncation = 8
[curriculum]
transitions = [1500]
[budget]
amount = 4000
unit = "steps"
checkpoint_every = 1000
[analyses]
features = true
landscape = true
landscape_offsets = [500]
landscape_points = 5
"#;

fn tree(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root)?.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c12(ctx: &Ctx) -> Result<Outcome> {
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, text) in [("dqn", SMALL_DQN), ("rnn", SMALL_RNN)] {
        let cfg = ExperimentConfig::from_toml(text)?;
        let mut roots = Vec::new();
        for pass in ["a", "b"] {
            let dir = ctx.root.join(format!("c12_{name}_{pass}"));
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            train(ctx, &format!("c12_{name}_{pass}"), &cfg)?;
            roots.push(dir);
        }
        let (fa, fb) = (tree(&roots[0])?, tree(&roots[1])?);
        if fa != fb {
            differing.push(format!("{name}: different file sets"));
            continue;
        }
        for f in fa.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")) {
            compared += 1;
            if fs::read(roots[0].join(f))? != fs::read(roots[1].join(f))? {
                differing.push(format!("{name}/{}", f.display()));
            }
        }
    }
    outcome(
        differing.is_empty() && compared > 0,
        format!("{compared} CSV files compared across two runs, differing: {differing:?}"),
    )
}
