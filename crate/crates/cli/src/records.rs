//! Per-seed CSV records with a commented metadata header, and the
//! cross-seed aggregate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aif_core::agentloop::{CoverageGrid, EpochRow, EpochTiming};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FORMAT: &str = "aif-record/1";
pub const QUANTILE_METHOD: &str = "linear interpolation between order statistics (h = (n-1)p)";
pub const BAND: (f64, f64) = (0.025, 0.975);

pub fn seed_csv(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.csv"))
}

pub fn timings_csv(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.timings.csv"))
}

pub fn coverage_csv(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.coverage.csv"))
}

pub fn checkpoint_json(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.model.json"))
}

pub fn steps_jsonl(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.steps.jsonl"))
}

/// Metadata lines written before the CSV header, as `# key: value`.
pub fn metadata(config: &RunConfig, seed: u64) -> Vec<(String, String)> {
    vec![
        ("format".into(), FORMAT.into()),
        ("seed".into(), seed.to_string()),
        ("task".into(), config.task.name().into()),
        ("agent".into(), config.agent.name().into()),
        (
            "version".into(),
            format!("aif {}", env!("CARGO_PKG_VERSION")),
        ),
        (
            "config".into(),
            serde_json::to_string(config).expect("configs always serialise"),
        ),
    ]
}

/// Streams epoch rows to disk, flushing after each so that partial runs
/// keep every completed epoch.
pub struct RecordWriter {
    out: csv::Writer<BufWriter<File>>,
}

impl RecordWriter {
    pub fn create(path: &Path, meta: &[(String, String)]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        for (k, v) in meta {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(Self {
            out: csv::Writer::from_writer(w),
        })
    }

    pub fn row(&mut self, row: &EpochRow) -> Result<()> {
        self.out.serialize(row)?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRecord {
    pub path: PathBuf,
    pub meta: Vec<(String, String)>,
    pub rows: Vec<EpochRow>,
}

impl SeedRecord {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn read_record(path: &Path) -> Result<SeedRecord> {
    let file = File::open(path).with_context(|| format!("missing record {}", path.display()))?;
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if let Some(m) = line.strip_prefix("# ") {
            let (k, v) = m
                .split_once(": ")
                .ok_or_else(|| anyhow!("corrupt metadata line in {}: {line}", path.display()))?;
            meta.push((k.to_string(), v.to_string()));
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    if !meta.iter().any(|(k, v)| k == "format" && v == FORMAT) {
        bail!("corrupt record {}: missing format header", path.display());
    }
    let rows = csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<EpochRow>, _>>()
        .with_context(|| format!("corrupt record {}", path.display()))?;
    Ok(SeedRecord {
        path: path.to_path_buf(),
        meta,
        rows,
    })
}

pub fn write_timings(path: &Path, timings: &[EpochTiming]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for t in timings {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

/// Visit counts as a `G×G` matrix, first state dimension down the rows.
pub fn write_coverage(path: &Path, grid: &CoverageGrid) -> Result<()> {
    let g = grid.settings.resolution;
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(
        w,
        "# resolution: {g}\n# low: {:?}\n# high: {:?}\n# out_of_box: {}",
        grid.settings.low, grid.settings.high, grid.out_of_box
    )?;
    for row in grid.counts.chunks(g) {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coverage(path: &Path) -> Result<Vec<Vec<u64>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("missing coverage grid {}", path.display()))?;
    let rows: Vec<Vec<u64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(|c| c.trim().parse::<u64>()).collect())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("corrupt coverage grid {}", path.display()))?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        bail!("corrupt coverage grid {}: not square", path.display());
    }
    Ok(rows)
}

/// Quantile of sorted data by linear interpolation between order
/// statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

pub fn band(values: &[f64]) -> BandPoint {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BandPoint {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        low: quantile(&v, BAND.0),
        high: quantile(&v, BAND.1),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub epoch: usize,
    pub seeds: usize,
    pub return_mean: f64,
    pub return_q025: f64,
    pub return_q975: f64,
    pub coverage_mean: Option<f64>,
    pub coverage_q025: Option<f64>,
    pub coverage_q975: Option<f64>,
}

/// Per-epoch mean and 2.5 to 97.5% band across seeds, over the epochs every
/// seed completed.
pub fn aggregate(records: &[SeedRecord]) -> Vec<AggregateRow> {
    let epochs = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let returns: Vec<f64> = records.iter().map(|r| r.rows[e].episode_return).collect();
            let cov: Option<Vec<f64>> = records.iter().map(|r| r.rows[e].coverage).collect();
            let r = band(&returns);
            let c = cov.map(|c| band(&c));
            AggregateRow {
                epoch: records[0].rows[e].epoch,
                seeds: records.len(),
                return_mean: r.mean,
                return_q025: r.low,
                return_q975: r.high,
                coverage_mean: c.map(|c| c.mean),
                coverage_q025: c.map(|c| c.low),
                coverage_q975: c.map(|c| c.high),
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "# quantile_method: {QUANTILE_METHOD}")?;
    writeln!(w, "# band: {} {}", BAND.0, BAND.1)?;
    let mut c = csv::Writer::from_writer(w);
    for r in rows {
        c.serialize(r)?;
    }
    c.flush()?;
    Ok(())
}
