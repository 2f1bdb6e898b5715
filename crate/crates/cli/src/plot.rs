//! Deterministic SVG output: learning curves with quantile bands and
//! coverage heatmaps on a shared colour scale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;
use crate::records::{self, AggregateRow, SeedRecord};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const VIRIDIS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// One loaded experiment directory.
pub struct Experiment {
    pub label: String,
    pub config: RunConfig,
    pub records: Vec<SeedRecord>,
    /// Visit counts summed over seeds, when the task has a 2-D state.
    pub coverage: Option<Vec<Vec<u64>>>,
}

pub fn load_experiment(dir: &Path) -> Result<Experiment> {
    let cfg_path = dir.join("config.toml");
    let text = fs::read_to_string(&cfg_path)
        .with_context(|| format!("missing config {}", cfg_path.display()))?;
    let config: RunConfig =
        toml::from_str(&text).with_context(|| format!("corrupt config {}", cfg_path.display()))?;
    let records = config
        .seeds
        .iter()
        .map(|&s| records::read_record(&records::seed_csv(dir, s)))
        .collect::<Result<Vec<_>>>()?;
    let mut coverage: Option<Vec<Vec<u64>>> = None;
    if records
        .iter()
        .all(|r| r.rows.iter().all(|row| row.coverage.is_some()))
        && !records.is_empty()
    {
        for &s in &config.seeds {
            let grid = records::read_coverage(&records::coverage_csv(dir, s))?;
            coverage = Some(match coverage {
                None => grid,
                Some(mut acc) => {
                    if acc.len() != grid.len() {
                        bail!("coverage grids in {} differ in resolution", dir.display());
                    }
                    for (a, g) in acc.iter_mut().zip(&grid) {
                        for (x, y) in a.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                    acc
                }
            });
        }
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| config.agent.name().to_string());
    Ok(Experiment {
        label,
        config,
        records,
        coverage,
    })
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64, f64, f64)>,
}

/// Mean curves with shaded bands; `points` are `(x, mean, low, high)`.
fn curve_svg(title: &str, ylabel: &str, series: &[Series<'_>]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, m, l, h) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(l).min(m);
        y1 = y1.max(h).max(m);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    );
    for t in nice_ticks(y0, y1, 6) {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            W - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    for t in nice_ticks(x0, x1, 8) {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 16.0,
            fmt_num(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if ser.points.is_empty() {
            continue;
        }
        let mut band: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.3)))
            .collect();
        band.extend(
            ser.points
                .iter()
                .rev()
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.2))),
        );
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            LEFT + 10.0,
            LEFT + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + 36.0,
            ly + 4.0,
            escape(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn viridis(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let c = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Heatmap of visit counts with colour `log(1 + count) / log(1 + max)`;
/// unvisited cells are white. Position runs left to right, velocity bottom
/// to top.
fn heatmap_svg(title: &str, counts: &[Vec<u64>], max: u64, cfg: &RunConfig) -> String {
    let g = counts.len();
    let size = 360.0;
    let cell = size / g as f64;
    let (w, h) = (size + LEFT + 90.0, size + TOP + BOTTOM);
    let denom = (1.0 + max as f64).ln().max(f64::MIN_POSITIVE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + size / 2.0,
        escape(title)
    );
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x = LEFT + i as f64 * cell;
            let y = TOP + size - (j + 1) as f64 * cell;
            let color = viridis((1.0 + c as f64).ln() / denom);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let c = &cfg.coverage;
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="{:.2}">{}</text>"#,
        TOP + size + 16.0,
        fmt_num(c.low[0])
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
        LEFT + size,
        TOP + size + 16.0,
        fmt_num(c.high[0])
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">position</text>"#,
        LEFT + size / 2.0,
        TOP + size + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
        LEFT - 6.0,
        TOP + size,
        fmt_num(c.low[1])
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
        LEFT - 6.0,
        TOP + 10.0,
        fmt_num(c.high[1])
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">velocity</text>"#,
        TOP + size / 2.0,
        TOP + size / 2.0
    );
    let bar_x = LEFT + size + 20.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let y = TOP + size - (k + 1) as f64 * size / 50.0;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x:.2}" y="{y:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            size / 50.0 + 0.5,
            viridis(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">{max}</text>"#,
        bar_x + 20.0,
        TOP + 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">1</text>"#,
        bar_x + 20.0,
        TOP + size
    );
    s.push_str("</svg>\n");
    s
}

fn band_points(
    rows: &[AggregateRow],
    f: impl Fn(&AggregateRow) -> Option<(f64, f64, f64)>,
) -> Vec<(f64, f64, f64, f64)> {
    rows.iter()
        .filter_map(|r| f(r).map(|(m, l, h)| (r.epoch as f64, m, l, h)))
        .collect()
}

/// Writes `returns.svg`, `coverage_curve.svg` and one
/// `coverage-<label>.svg` per experiment into `out`. Returns the files
/// written.
pub fn plot_dirs(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let exps = dirs
        .iter()
        .map(|d| load_experiment(d))
        .collect::<Result<Vec<_>>>()?;
    plot_experiments(&exps, out)
}

pub fn plot_experiments(exps: &[Experiment], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let aggs: Vec<Vec<AggregateRow>> = exps
        .iter()
        .map(|e| records::aggregate(&e.records))
        .collect();
    let mut written = Vec::new();

    let returns: Vec<Series<'_>> = exps
        .iter()
        .zip(&aggs)
        .map(|(e, a)| Series {
            label: &e.label,
            points: band_points(a, |r| Some((r.return_mean, r.return_q025, r.return_q975))),
        })
        .collect();
    let path = out.join("returns.svg");
    fs::write(
        &path,
        curve_svg(
            "Average return, 2.5 to 97.5% band",
            "episode return",
            &returns,
        ),
    )?;
    written.push(path);

    if exps.iter().any(|e| e.coverage.is_some()) {
        let cov: Vec<Series<'_>> = exps
            .iter()
            .zip(&aggs)
            .filter(|(e, _)| e.coverage.is_some())
            .map(|(e, a)| Series {
                label: &e.label,
                points: band_points(a, |r| {
                    Some((r.coverage_mean?, r.coverage_q025?, r.coverage_q975?))
                }),
            })
            .collect();
        let path = out.join("coverage_curve.svg");
        fs::write(
            &path,
            curve_svg("Cumulative state-space coverage", "coverage fraction", &cov),
        )?;
        written.push(path);

        let max = exps
            .iter()
            .filter_map(|e| e.coverage.as_ref())
            .flat_map(|g| g.iter().flatten().copied())
            .max()
            .unwrap_or(0);
        for e in exps {
            if let Some(g) = &e.coverage {
                let path = out.join(format!("coverage-{}.svg", e.label));
                let title = format!("{} ({} seeds)", e.label, e.records.len());
                fs::write(&path, heatmap_svg(&title, g, max, &e.config))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_the_range() {
        let t = nice_ticks(-1.3, 7.9, 6);
        assert!(t.first().unwrap() >= &-1.3 && t.last().unwrap() <= &7.9);
        assert!(t.len() >= 3);
    }

    #[test]
    fn colour_map_endpoints() {
        assert_eq!(viridis(0.0), "#440154");
        assert_eq!(viridis(1.0), "#fde725");
    }
}
