//! Standalone SVG figures for the three CSV schemas: landscape grids,
//! visit heatmaps and learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};

use s2dlab::landscape::LandscapeGrid;

use crate::io::Csv;

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    pub title: Option<String>,
    /// Heatmap start marker (cell coordinates).
    pub start: Option<(i32, i32)>,
    /// Heatmap goal marker.
    pub goal: Option<(i32, i32)>,
}

/// Which schema a CSV follows, decided by its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Grid,
    Heatmap,
    Curve,
}

impl Schema {
    pub fn detect(header: &[String]) -> Option<Self> {
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        match h.as_slice() {
            ["checkpoint_step", "alpha", "beta", "loss", "overflow_flag"] => Some(Schema::Grid),
            ["x", "y", "visits"] => Some(Schema::Heatmap),
            ["series", "seed", "x", "y"] => Some(Schema::Curve),
            _ => None,
        }
    }
}

/// Renders `csv` and writes the SVG to `out`; nothing is written on error.
pub fn render_file(csv: &Path, out: &Path, opts: &RenderOptions) -> Result<()> {
    let svg = render_csv(csv, opts)?;
    crate::io::write_atomic(out, svg.as_bytes())
}

pub fn render_csv(path: &Path, opts: &RenderOptions) -> Result<String> {
    let csv = Csv::read(path)?;
    let schema = Schema::detect(&csv.header).ok_or_else(|| {
        anyhow::anyhow!(
            "{}: unknown CSV schema (columns {}); expected a landscape grid, heatmap or curve",
            path.display(),
            csv.header.join(",")
        )
    })?;
    if csv.rows.is_empty() {
        bail!("{}: no data rows to render", path.display());
    }
    match schema {
        Schema::Grid => {
            let mut cells = Vec::with_capacity(csv.rows.len());
            let mut step = None;
            for r in 0..csv.rows.len() {
                let s: u64 = csv.parse(r, 0)?;
                if *step.get_or_insert(s) != s {
                    bail!("{}: rows from more than one checkpoint", path.display());
                }
                let flag: u8 = csv.parse(r, 4)?;
                let loss: f64 = csv.parse(r, 3)?;
                cells.push((
                    csv.parse::<f64>(r, 1)?,
                    csv.parse::<f64>(r, 2)?,
                    (flag == 0).then_some(loss),
                ));
            }
            let grid = GridData::from_cells(&cells)?;
            Ok(grid_svg(&grid, step.unwrap_or(0), opts))
        }
        Schema::Heatmap => {
            let mut cells = Vec::with_capacity(csv.rows.len());
            for r in 0..csv.rows.len() {
                cells.push((
                    csv.parse::<i32>(r, 0)?,
                    csv.parse::<i32>(r, 1)?,
                    csv.parse::<u64>(r, 2)?,
                ));
            }
            heatmap_svg(&cells, opts)
        }
        Schema::Curve => {
            let mut points = Vec::with_capacity(csv.rows.len());
            for r in 0..csv.rows.len() {
                points.push((
                    csv.rows[r][0].clone(),
                    csv.parse::<u64>(r, 1)?,
                    csv.parse::<f64>(r, 2)?,
                    csv.parse::<f64>(r, 3)?,
                ));
            }
            Ok(curve_svg(&points, opts))
        }
    }
}

/// Grid values indexed `[i * betas.len() + j]`; `None` marks overflow.
struct GridData {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    values: Vec<Option<f64>>,
}

impl GridData {
    fn from_cells(cells: &[(f64, f64, Option<f64>)]) -> Result<Self> {
        let mut alphas: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let mut betas: Vec<f64> = cells.iter().map(|c| c.1).collect();
        for v in [&mut alphas, &mut betas] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if alphas.len() * betas.len() != cells.len() {
            bail!(
                "grid has {} rows but {} alphas × {} betas",
                cells.len(),
                alphas.len(),
                betas.len()
            );
        }
        let mut values = vec![None; cells.len()];
        let mut seen = vec![false; cells.len()];
        for &(a, b, v) in cells {
            let i = alphas.partition_point(|&x| x < a);
            let j = betas.partition_point(|&x| x < b);
            let k = i * betas.len() + j;
            if seen[k] {
                bail!("grid cell (alpha {a}, beta {b}) appears twice");
            }
            seen[k] = true;
            values[k] = v;
        }
        Ok(Self { alphas, betas, values })
    }
}

/// Dark blue, teal, yellow: a perceptually ordered ramp for `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [
        (0.0, [48.0, 18.0, 110.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = if t <= 0.5 { 0 } else { 1 };
    let (t0, c0) = STOPS[k];
    let (t1, c1) = STOPS[k + 1];
    let u = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|i| (c0[i] + u * (c1[i] - c0[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64, title: Option<&str>) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    if let Some(t) = title {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            w / 2.0,
            escape(t)
        );
    }
    s
}

fn colorbar(s: &mut String, x: f64, y: f64, h: f64, lo: &str, hi: &str) {
    let steps = 50;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"14\" height=\"{:.2}\" fill=\"{}\"/>",
            y + h * k as f64 / steps as f64,
            h / steps as f64 + 0.5,
            ramp(t)
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", x + 18.0, y + 10.0, escape(hi));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", x + 18.0, y + h, escape(lo));
}

fn grid_svg(g: &GridData, step: u64, opts: &RenderOptions) -> String {
    let (na, nb) = (g.alphas.len(), g.betas.len());
    let cell = (480.0 / na.max(nb) as f64).clamp(4.0, 40.0);
    let (left, top) = (60.0, 40.0);
    let (pw, ph) = (cell * na as f64, cell * nb as f64);
    let width = left + pw + 150.0;
    let height = top + ph + 60.0;
    let title = opts
        .title
        .clone()
        .unwrap_or_else(|| format!("loss landscape at step {step}"));
    let mut s = header(width, height, Some(&title));

    let finite: Vec<f64> = g.values.iter().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for i in 0..na {
        for j in 0..nb {
            // alpha runs left to right, beta bottom to top
            let x = left + i as f64 * cell;
            let y = top + (nb - 1 - j) as f64 * cell;
            let fill = match g.values[i * nb + j] {
                Some(v) => ramp((v - lo) / span),
                None => "#9e9e9e".to_string(),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{fill}\"/>"
            );
        }
    }
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let fmt = |v: f64| format!("{v:.3}");
    let (a0, a1) = (g.alphas[0], g.alphas[na - 1]);
    let (b0, b1) = (g.betas[0], g.betas[nb - 1]);
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"{}\" text-anchor=\"start\">{}</text>",
        top + ph + 16.0,
        fmt(a0)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        left + pw,
        top + ph + 16.0,
        fmt(a1)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">α</text>",
        left + pw / 2.0,
        top + ph + 32.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        left - 4.0,
        top + ph,
        fmt(b0)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        left - 4.0,
        top + 10.0,
        fmt(b1)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">β</text>",
        left - 30.0,
        top + ph / 2.0
    );
    if finite.is_empty() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">z range: none (all cells overflowed)</text>",
            left,
            height - 8.0
        );
    } else {
        colorbar(
            &mut s,
            left + pw + 20.0,
            top,
            ph.min(240.0),
            &format!("{lo:.4e}"),
            &format!("{hi:.4e}"),
        );
        let _ = writeln!(
            s,
            "<text x=\"{left}\" y=\"{}\">z range [{lo:.6e}, {hi:.6e}] (this figure only)</text>",
            height - 8.0
        );
    }
    let overflow = g.values.iter().filter(|v| v.is_none()).count();
    if overflow > 0 {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{overflow} overflowed cells shown grey</text>",
            left + pw + 20.0,
            top + ph.min(240.0) + 24.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// SVG of one landscape grid.
pub fn render_grid(grid: &LandscapeGrid<f64>, opts: &RenderOptions) -> Result<String> {
    let nb = grid.betas.len();
    let values = (0..grid.alphas.len() * nb)
        .map(|k| (!grid.overflow[k]).then(|| grid.losses.get(k / nb, k % nb)))
        .collect();
    let data = GridData {
        alphas: grid.alphas.clone(),
        betas: grid.betas.clone(),
        values,
    };
    if data.alphas.is_empty() || data.betas.is_empty() {
        bail!("empty landscape grid");
    }
    Ok(grid_svg(&data, grid.checkpoint_step, opts))
}

fn heatmap_svg(cells: &[(i32, i32, u64)], opts: &RenderOptions) -> Result<String> {
    let w = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let h = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    if cells.iter().any(|c| c.0 < 0 || c.1 < 0) {
        bail!("heatmap has negative coordinates");
    }
    let cell = (480.0 / w.max(h) as f64).clamp(8.0, 48.0);
    let (left, top) = (30.0, 40.0);
    let width = left + cell * w as f64 + 140.0;
    let height = top + cell * h as f64 + 40.0;
    let mut s = header(width, height, Some(opts.title.as_deref().unwrap_or("visit counts")));
    let max = cells.iter().map(|c| c.2).max().unwrap_or(0).max(1);
    for &(x, y, v) in cells {
        // row 0 on top: "up" decreases y
        let px = left + x as f64 * cell;
        let py = top + y as f64 * cell;
        let fill = if v == 0 {
            "#f4f4f4".to_string()
        } else {
            ramp(v as f64 / max as f64)
        };
        let _ = writeln!(
            s,
            "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{fill}\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>"
        );
    }
    let marker = |s: &mut String, p: (i32, i32), color: &str, label: &str| {
        let cx = left + (p.0 as f64 + 0.5) * cell;
        let cy = top + (p.1 as f64 + 0.5) * cell;
        let _ = writeln!(
            s,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            cell * 0.35
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{label}</text>",
            cy + 4.0
        );
    };
    if let Some(p) = opts.start {
        marker(&mut s, p, "#e53935", "S");
    }
    if let Some(p) = opts.goal {
        marker(&mut s, p, "#43a047", "G");
    }
    colorbar(
        &mut s,
        left + cell * w as f64 + 20.0,
        top,
        (cell * h as f64).min(240.0),
        "1",
        &max.to_string(),
    );
    s.push_str("</svg>\n");
    Ok(s)
}

const PALETTE: [&str; 6] = ["#1e88e5", "#d81b60", "#43a047", "#fb8c00", "#8e24aa", "#00897b"];

/// Per series and x: mean over seeds and sample std (0 for a single seed).
pub fn aggregate(points: &[(String, u64, f64, f64)]) -> BTreeMap<String, Vec<(f64, f64, f64)>> {
    let mut by: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for (series, _, x, y) in points {
        by.entry(series.clone())
            .or_default()
            .entry(x.to_bits())
            .or_default()
            .push(*y);
    }
    by.into_iter()
        .map(|(name, xs)| {
            let mut rows: Vec<(f64, f64, f64)> = xs
                .into_iter()
                .map(|(xb, ys)| {
                    let n = ys.len() as f64;
                    let mean = ys.iter().sum::<f64>() / n;
                    let std = if ys.len() > 1 {
                        (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    (f64::from_bits(xb), mean, std)
                })
                .collect();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, rows)
        })
        .collect()
}

fn curve_svg(points: &[(String, u64, f64, f64)], opts: &RenderOptions) -> String {
    let series = aggregate(points);
    let (left, top, pw, ph) = (70.0, 40.0, 520.0, 320.0);
    let width = left + pw + 160.0;
    let height = top + ph + 50.0;
    let mut s = header(
        width,
        height,
        Some(
            opts.title
                .as_deref()
                .unwrap_or("learning curves (mean ± 1 std over seeds)"),
        ),
    );
    let all = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, sd) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for (k, (name, rows)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut band = String::new();
        for &(x, m, sd) in rows {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(m + sd));
        }
        for &(x, m, sd) in rows.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(m - sd));
        }
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            band.trim_end()
        );
        let line: Vec<String> = rows
            .iter()
            .map(|&(x, m, _)| format!("{:.2},{:.2}", px(x), py(m)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            line.join(" ")
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            left + pw + 14.0,
            ly - 10.0
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\">{}</text>", left + pw + 32.0, escape(name));
    }
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"{}\" text-anchor=\"start\">{x0}</text>",
        top + ph + 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1}</text>",
        left + pw,
        top + ph + 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.3}</text>",
        left - 4.0,
        top + ph
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3}</text>",
        left - 4.0,
        top + 10.0
    );
    s.push_str("</svg>\n");
    s
}
