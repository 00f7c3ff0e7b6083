//! Deterministic CSV output, atomic file writes and the readers the
//! analyses use to reload a finished run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use s2dlab::agents::{EpisodeMetrics, StoredTransition};
use s2dlab::envs::GridPos;

/// 17 significant digits; parses back to the same bits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| anyhow!("{} has no parent directory", path.display()))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Accumulates CSV rows in memory; `save` writes them atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }

    pub fn save(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes())
    }
}

/// Parsed CSV: header plus string rows.
#[derive(Debug, Clone)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub path: PathBuf,
}

impl Csv {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header = reader
            .headers()
            .with_context(|| format!("reading header of {}", path.display()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            header,
            rows,
            path: path.to_path_buf(),
        })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: missing column '{name}'", self.path.display()))
    }

    pub fn expect_header(&self, want: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(want.iter().copied()) {
            bail!(
                "{}: expected columns {}, found {}",
                self.path.display(),
                want.join(","),
                self.header.join(",")
            );
        }
        Ok(())
    }

    pub fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| {
            anyhow!(
                "{}: row {} column '{}': cannot parse '{s}'",
                self.path.display(),
                row + 2,
                self.header[col]
            )
        })
    }
}

pub const METRICS_HEADER: [&str; 10] = [
    "episode",
    "clock",
    "global_step",
    "stage",
    "length",
    "env_return",
    "shaped_return",
    "success",
    "goal_x",
    "goal_y",
];

pub fn metrics_table(metrics: &[EpisodeMetrics]) -> Table {
    let mut t = Table::new(&METRICS_HEADER);
    for m in metrics {
        t.row([
            m.episode.to_string(),
            m.clock.to_string(),
            m.global_step.to_string(),
            m.stage.to_string(),
            m.length.to_string(),
            num(m.env_return),
            num(m.shaped_return),
            u8::from(m.success).to_string(),
            m.goal.x.to_string(),
            m.goal.y.to_string(),
        ]);
    }
    t
}

/// Metrics rows without positions (those are not logged).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    pub clock: u64,
    pub global_step: u64,
    pub stage: usize,
    pub length: usize,
    pub env_return: f64,
    pub shaped_return: f64,
    pub success: bool,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let csv = Csv::read(path)?;
    csv.expect_header(&METRICS_HEADER)?;
    (0..csv.rows.len())
        .map(|r| {
            Ok(MetricsRow {
                episode: csv.parse(r, 0)?,
                clock: csv.parse(r, 1)?,
                global_step: csv.parse(r, 2)?,
                stage: csv.parse(r, 3)?,
                length: csv.parse(r, 4)?,
                env_return: csv.parse(r, 5)?,
                shaped_return: csv.parse(r, 6)?,
                success: csv.parse::<u8>(r, 7)? == 1,
            })
        })
        .collect()
}

fn replay_header(obs: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..obs).map(|i| format!("f{i}")).collect();
    h.push("action".into());
    h.push("reward".into());
    h.extend((0..obs).map(|i| format!("nf{i}")));
    for k in ["done", "x", "y", "next_x", "next_y", "goal_x", "goal_y", "reward_env"] {
        h.push(k.into());
    }
    h
}

pub fn replay_table<'a>(items: impl IntoIterator<Item = &'a StoredTransition>, obs: usize) -> Table {
    let header = replay_header(obs);
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for s in items {
        let mut row: Vec<String> = s.features.iter().map(|&v| num(v)).collect();
        row.push(s.action.to_string());
        row.push(num(s.reward));
        row.extend(s.next_features.iter().map(|&v| num(v)));
        row.push(u8::from(s.done).to_string());
        for v in [s.pos.x, s.pos.y, s.next_pos.x, s.next_pos.y, s.goal.x, s.goal.y] {
            row.push(v.to_string());
        }
        row.push(num(s.reward_env));
        t.row(row);
    }
    t
}

pub fn read_replay(path: &Path, obs: usize) -> Result<Vec<StoredTransition>> {
    let csv = Csv::read(path)?;
    let want = replay_header(obs);
    let refs: Vec<&str> = want.iter().map(String::as_str).collect();
    csv.expect_header(&refs)?;
    let mut out = Vec::with_capacity(csv.rows.len());
    for r in 0..csv.rows.len() {
        let f = |c: usize| csv.parse::<f64>(r, c);
        let i = |c: usize| csv.parse::<i32>(r, c);
        let base = 2 * obs + 2;
        out.push(StoredTransition {
            features: (0..obs).map(f).collect::<Result<_>>()?,
            action: csv.parse(r, obs)?,
            reward: f(obs + 1)?,
            next_features: (obs + 2..base).map(f).collect::<Result<_>>()?,
            done: csv.parse::<u8>(r, base)? == 1,
            pos: GridPos::new(i(base + 1)?, i(base + 2)?),
            next_pos: GridPos::new(i(base + 3)?, i(base + 4)?),
            goal: GridPos::new(i(base + 5)?, i(base + 6)?),
            reward_env: f(base + 7)?,
        });
    }
    Ok(out)
}

pub const CHECKPOINTS_HEADER: [&str; 4] = ["clock", "global_step", "stage", "file"];

/// One entry of `checkpoints.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub clock: u64,
    pub global_step: u64,
    pub stage: usize,
    pub file: String,
}

pub fn read_checkpoint_index(dir: &Path) -> Result<Vec<CheckpointEntry>> {
    let csv = Csv::read(&dir.join("checkpoints.csv"))?;
    csv.expect_header(&CHECKPOINTS_HEADER)?;
    (0..csv.rows.len())
        .map(|r| {
            Ok(CheckpointEntry {
                clock: csv.parse(r, 0)?,
                global_step: csv.parse(r, 1)?,
                stage: csv.parse(r, 2)?,
                file: csv.rows[r][3].clone(),
            })
        })
        .collect()
}
