use std::fs;
use std::io::Write;
use std::path::Path;

use aif_core::agentloop::run_experiment_with;
use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::plot;
use crate::records::{self, RecordWriter, SeedRecord};

/// Runs one seed, streaming its record to disk.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedRecord> {
    let dir = config.out_dir();
    let path = records::seed_csv(&dir, seed);
    let mut writer = RecordWriter::create(&path, &records::metadata(config, seed))?;
    let mut env = config
        .make_env()
        .with_context(|| format!("seed {seed}: creating environment"))?;
    let agent = config.agent_config();
    let mut timings = Vec::new();
    let result = run_experiment_with(env.as_mut(), &agent, config.epochs, seed, |row, t| {
        writer
            .row(row)
            .map_err(|e| aif_core::Error::Io(std::io::Error::other(e.to_string())))?;
        timings.push(t.clone());
        Ok(())
    });
    records::write_timings(&records::timings_csv(&dir, seed), &timings)?;
    let ex = result.with_context(|| {
        format!(
            "seed {seed} failed; completed epochs kept in {}",
            path.display()
        )
    })?;

    ex.model
        .to_checkpoint(Some(&ex.optimizer))
        .save(records::checkpoint_json(&dir, seed))?;
    if let Some(grid) = &ex.record.coverage {
        records::write_coverage(&records::coverage_csv(&dir, seed), grid)?;
    }
    if config.trace_steps {
        let mut w = std::io::BufWriter::new(fs::File::create(records::steps_jsonl(&dir, seed))?);
        for s in &ex.record.steps {
            writeln!(w, "{}", serde_json::to_string(s)?)?;
        }
        w.flush()?;
    }
    records::read_record(&path)
}

/// Writes the aggregate CSV and plots for a finished output directory.
pub fn summarise(dir: &Path, records: &[SeedRecord]) -> Result<()> {
    let agg = records::aggregate(records);
    records::write_aggregate(&dir.join("aggregate.csv"), &agg)?;
    plot::plot_dirs(&[dir.to_path_buf()], dir)?;
    Ok(())
}

/// Runs every configured seed, then aggregates and plots.
pub fn run(config: &RunConfig) -> Result<Vec<SeedRecord>> {
    let dir = config.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    let results: Vec<Result<SeedRecord>> = if config.parallel_seeds {
        config
            .seeds
            .par_iter()
            .map(|&s| run_seed(config, s))
            .collect()
    } else {
        config.seeds.iter().map(|&s| run_seed(config, s)).collect()
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    summarise(&dir, &records)?;
    Ok(records)
}
