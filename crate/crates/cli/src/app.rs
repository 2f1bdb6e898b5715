use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{self, ConfigError, Overrides, Task, REFERENCE_CONFIG};
use crate::selftest::{self, SelftestOptions};

const RUN_HELP: &str = "Any config key can be overridden with a dotted flag, e.g. \
`--planner.H 12` or `--train.learning_rate=1e-3`; top-level keys use their own name \
(`--episode_steps 100`). Unset keys take the task preset; \
the reference config below lists every key with its default.\n\n";

#[derive(Parser, Debug)]
#[command(
    name = "aif",
    version,
    about = "Active inference agents with Bayesian world models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment over one or more seeds.
    #[command(after_long_help = format!("{RUN_HELP}{REFERENCE_CONFIG}"))]
    Run {
        /// TOML config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// explore-mountaincar, exploit-pendulum or custom.
        #[arg(long)]
        task: Option<String>,
        /// active_inference, reward_only or epsilon_greedy.
        #[arg(long)]
        agent: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory; defaults to $AIF_OUT_ROOT/<task>-<agent>.
        #[arg(long)]
        out: Option<String>,
    },
    /// Plot learning curves and coverage heatmaps from experiment directories.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory for the SVG files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the numerical oracle suite.
    Selftest {
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_entropy_bias: f64,
    },
    /// Host a built-in environment behind the line protocol.
    EnvServe {
        #[arg(long, default_value = "explore-mountaincar")]
        task: String,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
        #[arg(long, default_value_t = 1)]
        action_repeat: usize,
        #[arg(long, default_value_t = 200)]
        episode_steps: usize,
    },
}

/// Splits config overrides (`--a.b v`, `--a.b=v`, and top-level keys
/// written with underscores such as `--episode_steps 50`) out of `args`.
pub fn extract_dotted(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut dotted = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') && !key.contains('_') {
            rest.push(a);
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{key} needs a value"))?,
        };
        dotted.push((key, value));
    }
    Ok((rest, dotted))
}

fn config_error(e: ConfigError) -> i32 {
    eprintln!("error: {e}");
    2
}

/// Entry point; returns the process exit code.
pub fn main(args: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let (args, dotted) = match extract_dotted(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if !dotted.is_empty() && !matches!(cli.command, Command::Run { .. }) {
        eprintln!("error: dotted overrides apply to `run` only");
        return 2;
    }
    let result = match cli.command {
        Command::Run {
            config,
            task,
            agent,
            seeds,
            epochs,
            out,
        } => {
            let overrides = Overrides {
                task,
                agent,
                seeds,
                epochs,
                out,
                dotted,
            };
            let cfg = match config::load(config.as_deref(), &overrides) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            println!("# resolved config\n{}", cfg.to_toml());
            crate::run::run(&cfg).map(|records| {
                println!(
                    "wrote {} seed records, aggregate.csv and plots to {}",
                    records.len(),
                    cfg.out_dir().display()
                );
            })
        }
        Command::Plot { dirs, out } => crate::plot::plot_dirs(&dirs, &out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Selftest {
            inject_entropy_bias,
        } => {
            let report = selftest::run(SelftestOptions {
                entropy_bias: inject_entropy_bias,
            });
            println!("{report}");
            return if report.passed() { 0 } else { 1 };
        }
        Command::EnvServe {
            task,
            bind,
            action_repeat,
            episode_steps,
        } => {
            let Some(task) = Task::parse(&task) else {
                return config_error(ConfigError::Invalid(
                    "task".into(),
                    format!("unknown task `{task}`"),
                ));
            };
            crate::serve::env_serve(task, &bind, action_repeat, episode_steps)
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn dotted_pairs_are_split_out() {
        let (rest, dotted) = extract_dotted(s(&[
            "aif",
            "run",
            "--planner.N",
            "50",
            "--out",
            "a.b",
            "--train.eps=1e-8",
            "--epochs",
            "3",
        ]))
        .unwrap();
        assert_eq!(rest, s(&["aif", "run", "--out", "a.b", "--epochs", "3"]));
        assert_eq!(
            dotted,
            vec![
                ("planner.N".into(), "50".into()),
                ("train.eps".into(), "1e-8".into())
            ]
        );
        assert!(extract_dotted(s(&["aif", "--planner.N"])).is_err());
    }
}
