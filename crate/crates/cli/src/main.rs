use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use s2dlab::envs::{crossmaze_goal, EnvKind, GridEnv, GridPos};
use s2dlab::shaping::validate_s2d;

use s2dlab_cli::analyze::{analyze_run, feature_trajectory, features_table, Selection};
use s2dlab_cli::config::{Baseline, ExperimentConfig};
use s2dlab_cli::protocol::{compare_landscapes, Snapshot};
use s2dlab_cli::render::{render_file, RenderOptions};
use s2dlab_cli::run::LoadedRun;
use s2dlab_cli::runner::{default_workers, run_experiment, RunOptions, RunStatus};

#[derive(Parser)]
#[command(name = "s2dlab", version, about = "Staged reward shaping experiments on gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (baseline, seed) pair of a config and write its artifacts.
    Run {
        config: PathBuf,
        /// Overwrite partial or stale run directories.
        #[arg(long)]
        force: bool,
        #[arg(long, env = "S2DLAB_WORKERS")]
        workers: Option<usize>,
        /// Output root (overrides the config's `output`).
        #[arg(long, env = "S2DLAB_OUT")]
        out: Option<PathBuf>,
    },
    /// Paired loss landscapes of two completed runs.
    CompareLandscapes {
        config: PathBuf,
        /// Run directory, or `<baseline>/<seed>` under the output root.
        run_a: String,
        run_b: String,
        /// Absolute clock values to compare at.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u64>,
        /// Clock offsets after the first stage transition (default: the config's).
        #[arg(long, value_delimiter = ',')]
        offsets: Vec<u64>,
        #[arg(long, env = "S2DLAB_OUT")]
        out: Option<PathBuf>,
    },
    /// Recompute analyses of one completed run in place.
    Analyze {
        run: PathBuf,
        #[arg(long)]
        features: bool,
        #[arg(long)]
        actions: bool,
        #[arg(long)]
        heatmap: bool,
        #[arg(long)]
        sharpness: bool,
    },
    /// Render a grid, heatmap or curve CSV as SVG.
    Render {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
        /// Heatmap start marker, `x,y`.
        #[arg(long, value_parser = parse_cell)]
        start: Option<(i32, i32)>,
        /// Heatmap goal marker, `x,y`.
        #[arg(long, value_parser = parse_cell)]
        goal: Option<(i32, i32)>,
    },
    /// Check support and optimal-set nesting of each curriculum on a frozen goal.
    ValidateCurriculum { config: PathBuf },
}

fn parse_cell(s: &str) -> Result<(i32, i32), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    Ok((
        x.trim().parse().map_err(|_| format!("bad x in {s:?}"))?,
        y.trim().parse().map_err(|_| format!("bad y in {s:?}"))?,
    ))
}

fn output_root(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn resolve_run(root: &Path, arg: &str) -> PathBuf {
    let p = PathBuf::from(arg);
    if p.join("run.toml").exists() {
        p
    } else {
        root.join(arg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run {
            config,
            force,
            workers,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                out: output_root(&cfg, out),
                workers: workers.unwrap_or_else(default_workers),
                force,
            };
            let report = run_experiment(&cfg, &opts)?;
            for (id, st) in &report.runs {
                match st {
                    RunStatus::Trained => println!("{id}: trained"),
                    RunStatus::Cached => println!("{id}: up to date"),
                    RunStatus::Failed(e) => eprintln!("{id}: FAILED: {e}"),
                }
            }
            for (name, err) in &report.passes {
                if let Some(e) = err {
                    eprintln!("{name}: FAILED: {e}");
                }
            }
            println!("manifest: {}", opts.out.join("manifest.txt").display());
            Ok(report.ok())
        }
        Command::CompareLandscapes {
            config,
            run_a,
            run_b,
            steps,
            offsets,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let root = output_root(&cfg, out);
            let a = LoadedRun::load(&resolve_run(&root, &run_a))?;
            let b = LoadedRun::load(&resolve_run(&root, &run_b))?;
            let mut snaps: Vec<Snapshot> = steps.into_iter().map(Snapshot::Clock).collect();
            let offsets = if offsets.is_empty() && snaps.is_empty() {
                cfg.analyses.landscape_offsets.clone()
            } else {
                offsets
            };
            snaps.extend(offsets.into_iter().map(Snapshot::AfterTransition));
            let label = |r: &LoadedRun| r.id().replace('/', "-");
            let dir = root.join("landscape").join(format!("{}_vs_{}", label(&a), label(&b)));
            let written = compare_landscapes(&a, &b, &snaps, &dir)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Analyze {
            run,
            features,
            actions,
            heatmap,
            sharpness,
        } => {
            let loaded = LoadedRun::load(&run)?;
            let a = &loaded.record.experiment.analyses;
            let any = features || actions || heatmap || sharpness;
            let sel = if any {
                Selection {
                    actions,
                    heatmap,
                    sharpness,
                }
            } else {
                Selection {
                    actions: a.actions,
                    heatmap: a.heatmap,
                    sharpness: a.sharpness,
                }
            };
            analyze_run(&loaded, sel)?;
            if features || (!any && a.features) {
                // share the Only Sparse trajectory of this seed when that run exists
                let sibling = run.parent().and_then(Path::parent).map(|root| {
                    root.join(Baseline::OnlySparse.name())
                        .join(loaded.record.seed.to_string())
                });
                let source = match sibling {
                    Some(dir) if dir.join("DONE").exists() => LoadedRun::load(&dir)?,
                    _ => loaded.clone(),
                };
                let traj = feature_trajectory(&source)?;
                features_table(&loaded, &traj)?.save(&loaded.dir.join("features.csv"))?;
            }
            println!("analyses written to {}", run.display());
            Ok(true)
        }
        Command::Render {
            csv,
            out,
            title,
            start,
            goal,
        } => {
            render_file(&csv, &out, &RenderOptions { title, start, goal })?;
            println!("{}", out.display());
            Ok(true)
        }
        Command::ValidateCurriculum { config } => validate_curricula(&config),
    }
}

fn validate_curricula(path: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::load(path)?;
    let seed = cfg.seeds[0];
    let mut all_ok = true;
    for baseline in cfg.baselines() {
        let plan = cfg.plan(baseline, seed)?;
        let mut env = GridEnv::new(plan.train.env.clone())?;
        let goal = match env.kind() {
            EnvKind::Fixed4 => env.goal(),
            EnvKind::Random10 => GridPos::new(9, 9),
            EnvKind::CrossMaze => crossmaze_goal(env.config().arm_length, 0),
        };
        env.freeze_goal(goal)
            .with_context(|| format!("freezing goal at {goal}"))?;
        let gamma = cfg.agent.gamma();
        let report =
            validate_s2d(&plan.train.curriculum, &env, gamma, 1e-10).map_err(|e| anyhow!("{baseline}: {e}"))?;
        let must_pass = matches!(baseline, Baseline::S2d | Baseline::Custom);
        let verdict = if report.valid { "valid" } else { "INVALID" };
        println!(
            "{baseline}: {verdict} (goal {goal}; supports {:?}; nested {:?}; optimal sets equal {:?}; differing states {:?})",
            report.support_sizes, report.support_nested, report.optimal_equal, report.differing_states
        );
        if report.invariance_not_guaranteed.iter().any(|&b| b) {
            println!("  note: a stage adds non-potential reward; invariance is not guaranteed");
        }
        if must_pass && !report.valid {
            all_ok = false;
        }
    }
    if !all_ok {
        bail!("a sparse-to-dense curriculum failed validation");
    }
    Ok(true)
}
