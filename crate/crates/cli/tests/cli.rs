use std::fs;
use std::path::Path;
use std::process::Command;

use aif_cli::config::{resolve, Overrides, RunConfig, Task, REFERENCE_CONFIG};
use aif_cli::plot::plot_dirs;
use aif_cli::records::{self, aggregate, quantile, read_record};
use proptest::prelude::*;

fn aif() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aif"))
}

/// Overrides for a run that finishes in about a second.
const TINY: &[&str] = &[
    "--epochs",
    "2",
    "--planner.H",
    "3",
    "--planner.N",
    "20",
    "--planner.M",
    "4",
    "--planner.I",
    "2",
    "--planner.B",
    "2",
    "--planner.J",
    "2",
    "--model.hidden",
    "8",
    "--model.reward_hidden",
    "8",
    "--train.batches",
    "3",
    "--train.batch_size",
    "16",
    "--episode_steps",
    "25",
];

fn run_tiny(out: &Path, extra: &[&str]) -> std::process::Output {
    let out = aif()
        .arg("run")
        .args(TINY)
        .args(["--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_out(out: &str) -> Overrides {
    Overrides {
        out: Some(out.into()),
        ..Default::default()
    }
}

#[test]
fn reference_config_equals_the_defaults() {
    let from_file = resolve(Some(REFERENCE_CONFIG), &with_out("o")).unwrap();
    let defaults = resolve(None, &with_out("o")).unwrap();
    assert_eq!(from_file, defaults);
    let mut preset = RunConfig::preset(Task::ExploreMountaincar);
    preset.out = "o".into();
    assert_eq!(defaults, preset);
}

#[test]
fn pendulum_preset() {
    let o = Overrides {
        task: Some("exploit-pendulum".into()),
        out: Some("o".into()),
        ..Default::default()
    };
    let c = resolve(Some(REFERENCE_CONFIG), &o).unwrap();
    assert_eq!(c.action_repeat, 1, "file values win over the preset");
    let c = resolve(None, &o).unwrap();
    assert_eq!(c.action_repeat, 3);
    assert_eq!(c.model.mode, aif_core::genmodel::ModelMode::PointEstimate);
    assert_eq!(
        (c.planner.H, c.planner.N, c.planner.M, c.planner.I),
        (12, 1000, 100, 10)
    );
    assert_eq!(c.seed_episodes, 5);
    assert_eq!((c.train.batches, c.train.batch_size), (100, 50));
    assert_eq!(c.noise_variance, 0.3);
    assert_eq!(c.planner.B, 5);
    assert!(c.planner.extrinsic && !c.planner.info_gain);
}

#[test]
fn default_output_root_comes_from_the_environment() {
    // Only this test touches the variable.
    std::env::set_var(aif_cli::config::OUT_ROOT_ENV, "/data/runs");
    let c = resolve(None, &Overrides::default()).unwrap();
    std::env::remove_var(aif_cli::config::OUT_ROOT_ENV);
    assert_eq!(c.out, "/data/runs/explore-mountaincar-active_inference");
}

#[test]
fn unknown_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "epochs = 3\n[planner]\nN = 10\nhorizon = 4\n").unwrap();
    let out = aif()
        .args(["run", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("planner.horizon"), "{err}");
    assert!(!dir.path().join("runs").exists());

    let out = aif().args(["run", "--model.width", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.width"));

    let out = aif().args(["run", "--seeds", "1,1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn invalid_values_exit_with_status_two() {
    for args in [
        &["run", "--planner.M", "2000"][..],
        &["run", "--task", "cartpole"],
        &["run", "--epochs", "0"],
        &["run", "--task", "custom"],
        &["run", "--planner.N", "many"],
    ] {
        let out = aif().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn override_reaches_the_output_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let stdout = run_tiny(&out, &["--seeds", "4", "--planner.N=50"]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("N = 50"));
    let rec = read_record(&records::seed_csv(&out, 4)).unwrap();
    let cfg: serde_json::Value = serde_json::from_str(rec.meta("config").unwrap()).unwrap();
    assert_eq!(cfg["planner"]["N"], 50);
    assert_eq!(rec.meta("seed"), Some("4"));
    assert_eq!(rec.rows.len(), 2);

    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    let reparsed: RunConfig = toml::from_str(&written).unwrap();
    assert_eq!(reparsed.planner.N, 50);
    for f in [
        "aggregate.csv",
        "returns.svg",
        "coverage_curve.svg",
        "seed-4.model.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn repeated_invocations_write_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_tiny(&a, &["--seeds", "1,2"]);
    run_tiny(&b, &["--seeds", "1,2", "--parallel_seeds", "false"]);
    for name in [
        "seed-1.csv",
        "seed-2.csv",
        "seed-1.coverage.csv",
        "aggregate.csv",
    ] {
        let strip = |p: &Path| -> String {
            fs::read_to_string(p.join(name))
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with("# config:"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&a), strip(&b), "{name}");
    }
}

fn write_seed(dir: &Path, cfg: &RunConfig, seed: u64, rows: &[(usize, f64, f64)]) {
    write_seed_scaled(dir, cfg, seed, rows, 1);
}

/// Hand-written record; the coverage grid holds `scale * ((i*j + seed) % 3)`.
fn write_seed_scaled(
    dir: &Path,
    cfg: &RunConfig,
    seed: u64,
    rows: &[(usize, f64, f64)],
    scale: usize,
) {
    let mut text = String::new();
    for (k, v) in records::metadata(cfg, seed) {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str("epoch,episode_return,episode_length,terminal,free_energy,state_kl,parameter_kl,reward_nll,observation_nll,kl_weight,parameter_uncertainty,coverage,buffer_size\n");
    for (e, r, c) in rows {
        text.push_str(&format!(
            "{e},{r},200,false,1.0,0.5,0.5,0.1,0.1,0.5,0.05,{c},1200\n"
        ));
    }
    fs::write(records::seed_csv(dir, seed), text).unwrap();
    let g = cfg.coverage.resolution;
    let mut grid = format!("# resolution: {g}\n");
    for i in 0..g {
        let row: Vec<String> = (0..g)
            .map(|j| (scale * ((i * j + seed as usize) % 3)).to_string())
            .collect();
        grid.push_str(&row.join(","));
        grid.push('\n');
    }
    fs::write(records::coverage_csv(dir, seed), grid).unwrap();
}

fn hand_built(dir: &Path, seeds: &[u64]) -> RunConfig {
    fs::create_dir_all(dir).unwrap();
    let mut cfg = resolve(None, &with_out(dir.to_str().unwrap())).unwrap();
    cfg.seeds = seeds.to_vec();
    fs::write(dir.join("config.toml"), cfg.to_toml()).unwrap();
    cfg
}

#[test]
fn two_seed_band_matches_hand_computed_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("two");
    let cfg = hand_built(&exp, &[1, 2]);
    write_seed(&exp, &cfg, 1, &[(1, -100.0, 0.10), (2, -40.0, 0.30)]);
    write_seed(&exp, &cfg, 2, &[(1, -20.0, 0.50), (2, -60.0, 0.20)]);
    let recs: Vec<_> = [1, 2]
        .iter()
        .map(|&s| read_record(&records::seed_csv(&exp, s)).unwrap())
        .collect();
    let agg = aggregate(&recs);
    // With two values the h = (n-1)p rule gives a + p(b - a):
    // epoch 1: -100 + 0.025*80 = -98, -100 + 0.975*80 = -22.
    // epoch 2: -60 + 0.025*20 = -59.5, -60 + 0.975*20 = -40.5.
    let expect = [
        (-60.0, -98.0, -22.0, 0.30, 0.11, 0.49),
        (-50.0, -59.5, -40.5, 0.25, 0.2025, 0.2975),
    ];
    for (row, (m, lo, hi, cm, clo, chi)) in agg.iter().zip(expect) {
        assert!((row.return_mean - m).abs() < 1e-12);
        assert!((row.return_q025 - lo).abs() < 1e-12, "{row:?}");
        assert!((row.return_q975 - hi).abs() < 1e-12, "{row:?}");
        assert!((row.coverage_mean.unwrap() - cm).abs() < 1e-12);
        assert!((row.coverage_q025.unwrap() - clo).abs() < 1e-12, "{row:?}");
        assert!((row.coverage_q975.unwrap() - chi).abs() < 1e-12, "{row:?}");
        assert!(row.return_q025 <= row.return_mean && row.return_mean <= row.return_q975);
    }
    let files = plot_dirs(std::slice::from_ref(&exp), &dir.path().join("plots")).unwrap();
    assert_eq!(files.len(), 3);
}

#[test]
fn single_seed_band_collapses() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("one");
    let cfg = hand_built(&exp, &[7]);
    write_seed(&exp, &cfg, 7, &[(1, -3.5, 0.1), (2, 2.25, 0.2)]);
    let agg = aggregate(&[read_record(&records::seed_csv(&exp, 7)).unwrap()]);
    for row in &agg {
        assert_eq!(row.return_q025, row.return_mean);
        assert_eq!(row.return_q975, row.return_mean);
        assert_eq!(row.coverage_q025, row.coverage_mean);
    }
}

#[test]
fn plots_are_deterministic_and_share_a_colour_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (k, agent) in ["active_inference", "reward_only", "epsilon_greedy"]
        .iter()
        .enumerate()
    {
        let exp = dir.path().join(agent);
        let cfg = hand_built(&exp, &[1, 2]);
        let base = k as f64;
        write_seed_scaled(
            &exp,
            &cfg,
            1,
            &[(1, -base, 0.1 * base), (2, base, 0.2)],
            k + 1,
        );
        write_seed_scaled(&exp, &cfg, 2, &[(1, base, 0.3), (2, -base, 0.1)], k + 1);
        dirs.push(exp);
    }
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    let f1 = plot_dirs(&dirs, &p1).unwrap();
    let f2 = plot_dirs(&dirs, &p2).unwrap();
    assert_eq!(f1.len(), 5);
    let heatmaps: Vec<_> = f1
        .iter()
        .filter(|f| {
            f.file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("coverage-")
        })
        .collect();
    assert_eq!(heatmaps.len(), 3);
    for (a, b) in f1.iter().zip(&f2) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
    // Seeds 1 and 2 sum to at most 3 per cell, times the directory's scale
    // 1..=3; every heatmap uses the overall maximum 9, so equal counts get
    // equal colours across agents.
    let mut cells = Vec::new();
    for h in heatmaps {
        let svg = fs::read_to_string(h).unwrap();
        assert!(svg.contains(">9</text>"), "{}", h.display());
        cells.push(
            svg.lines()
                .filter(|l| l.starts_with("<rect x=") && l.contains("fill=\"#"))
                .count(),
        );
    }
    assert!(cells.iter().all(|&c| c == cells[0]));
}

#[test]
fn plot_names_missing_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("e");
    let cfg = hand_built(&exp, &[1, 2]);
    write_seed(&exp, &cfg, 1, &[(1, 0.0, 0.1)]);
    let out = aif()
        .args(["plot", exp.to_str().unwrap(), "--out"])
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed-2.csv"));

    write_seed(&exp, &cfg, 2, &[(1, 0.0, 0.1)]);
    let path = records::seed_csv(&exp, 2);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("200,false", "200,maybe");
    fs::write(&path, text).unwrap();
    let err = plot_dirs(std::slice::from_ref(&exp), &dir.path().join("p")).unwrap_err();
    assert!(
        format!("{err:#}").contains("corrupt record") && format!("{err:#}").contains("seed-2.csv")
    );
}

#[test]
fn selftest_passes_and_reports_injected_bias() {
    let ok = aif().arg("selftest").output().unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("threshold") && text.contains("7.000e-2"));

    let bad = aif()
        .args(["selftest", "--inject-entropy-bias", "0.5"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let text = String::from_utf8_lossy(&bad.stdout);
    let line = text.lines().find(|l| l.contains("N(0,1)")).unwrap();
    assert!(line.ends_with("FAIL"), "{line}");
}

#[test]
fn help_lists_the_reference_config() {
    let out = aif().args(["run", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[planner]") && text.contains("info_gain_weight"));
}

fn quantile_oracle(values: &[f64], p: f64) -> f64 {
    // Definition by rank: position p(n-1) between the sorted order statistics.
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let (i, frac) = (pos as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

proptest! {
    #[test]
    fn quantiles_match_the_rank_definition(
        values in prop::collection::vec(-1e3..1e3f64, 1..12), p in 0.0..=1.0f64,
    ) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let q = quantile(&sorted, p);
        prop_assert!((q - quantile_oracle(&values, p)).abs() <= 1e-9 * (1.0 + q.abs()));
        prop_assert!(q >= sorted[0] && q <= sorted[sorted.len() - 1]);
        let b = records::band(&values);
        prop_assert!(b.low <= b.high);
        // For 2 <= n <= 40 the 2.5% point lies between the two smallest
        // values, which keeps it below the mean (and symmetrically above).
        if values.len() >= 2 {
            prop_assert!(b.low <= b.mean + 1e-9 && b.mean <= b.high + 1e-9);
        }
    }

    #[test]
    fn resolved_configs_round_trip(
        n in 1usize..3000, h in 1usize..30, seeds in prop::collection::btree_set(0u64..1000, 1..6),
        agent in prop::sample::select(vec!["active_inference", "reward_only", "epsilon_greedy"]),
        task in prop::sample::select(vec!["explore-mountaincar", "exploit-pendulum"]),
        w in -5.0..5.0f64, kl in prop::option::of(0.0..1.0f64),
    ) {
        let mut dotted = vec![
            ("planner.N".to_string(), n.to_string()),
            ("planner.M".to_string(), n.min(7).to_string()),
            ("planner.H".to_string(), h.to_string()),
            ("planner.info_gain_weight".to_string(), format!("{w:?}")),
        ];
        if let Some(kl) = kl {
            dotted.push(("train.kl_weight".to_string(), format!("{kl:?}")));
        }
        let o = Overrides {
            task: Some(task.into()),
            agent: Some(agent.into()),
            seeds: Some(seeds.into_iter().collect()),
            out: Some("out".into()),
            dotted,
            ..Default::default()
        };
        let cfg = resolve(None, &o).unwrap();
        prop_assert_eq!(cfg.planner.info_gain_weight, w);
        let again = resolve(Some(&cfg.to_toml()), &Overrides::default()).unwrap();
        prop_assert_eq!(&again, &cfg);
        let parsed: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(parsed, cfg);
    }
}
