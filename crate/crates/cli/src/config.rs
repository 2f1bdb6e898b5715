//! Run configuration: task presets, TOML files and dotted command-line
//! overrides, resolved into one fully specified [`RunConfig`].

use std::fmt;
use std::path::PathBuf;

use aif_core::agentloop::{AgentConfig, AgentKind, CoverageSettings};
use aif_core::diffcore::AdamConfig;
use aif_core::envsim::{ActionRepeat, Environment, MountainCar, Pendulum, RemoteEnv};
use aif_core::genmodel::{ModelConfig, ModelMode, TrainConfig};
use aif_core::planner::PlannerConfig;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "AIF_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

/// The committed reference configuration (the `explore-mountaincar`
/// defaults, with every key documented).
pub const REFERENCE_CONFIG: &str = include_str!("../../../configs/reference.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ExploreMountaincar,
    ExploitPendulum,
    Custom,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ExploreMountaincar => "explore-mountaincar",
            Task::ExploitPendulum => "exploit-pendulum",
            Task::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Task::ExploreMountaincar,
            Task::ExploitPendulum,
            Task::Custom,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

/// A number, or `"auto"` for a value derived elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

impl AutoOr {
    pub fn value(self) -> Option<f64> {
        match self {
            AutoOr::Auto => None,
            AutoOr::Value(v) => Some(v),
        }
    }
}

impl Serialize for AutoOr {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        match self {
            AutoOr::Auto => s.serialize_str("auto"),
            AutoOr::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for AutoOr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = AutoOr;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"auto\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<AutoOr, E> {
                Ok(AutoOr::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<AutoOr, E> {
                Ok(AutoOr::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<AutoOr, E> {
                Ok(AutoOr::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<AutoOr, E> {
                if v == "auto" {
                    Ok(AutoOr::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct PlannerSection {
    pub H: usize,
    pub N: usize,
    pub M: usize,
    pub I: usize,
    pub B: usize,
    pub J: usize,
    pub extrinsic: bool,
    pub info_gain: bool,
    pub info_gain_weight: f64,
    pub transition_noise: bool,
    pub variance_floor: f64,
    pub state_clamp: f64,
    pub distance_floor: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self {
            H: p.horizon,
            N: p.candidates,
            M: p.elites,
            I: p.iterations,
            B: p.theta_samples,
            J: p.particles,
            extrinsic: p.extrinsic,
            info_gain: p.info_gain,
            info_gain_weight: p.info_gain_weight,
            transition_noise: p.transition_noise,
            variance_floor: p.variance_floor,
            state_clamp: p.state_clamp,
            distance_floor: p.distance_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mode: ModelMode,
    pub hidden: usize,
    pub reward_hidden: usize,
    pub weight_variance_init: f64,
    /// `"auto"`: 1.0 in bayesian mode, 0.1 in point-estimate mode.
    pub recognition_variance: AutoOr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batches: usize,
    pub batch_size: usize,
    pub k_theta: usize,
    /// `"auto"`: batch size over buffer size.
    pub kl_weight: AutoOr,
    pub include_observation_nll: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batches: t.batches,
            batch_size: t.batch_size,
            k_theta: t.k_theta,
            kl_weight: t.kl_weight.map_or(AutoOr::Auto, AutoOr::Value),
            include_observation_nll: t.include_observation_nll,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub agent: AgentKind,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Output directory; empty means `$AIF_OUT_ROOT/<task>-<agent>`.
    pub out: String,
    pub action_repeat: usize,
    /// Environment steps per episode before truncation.
    pub episode_steps: usize,
    pub seed_episodes: usize,
    pub noise_variance: f64,
    /// `host:port` of a remote environment; required by the custom task.
    pub remote: String,
    pub remote_timeout_secs: f64,
    pub parallel_seeds: bool,
    pub trace_steps: bool,
    pub planner: PlannerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub coverage: CoverageSettings,
}

impl RunConfig {
    /// Defaults for a task.
    pub fn preset(task: Task) -> Self {
        let (agent, mode, repeat) = match task {
            Task::ExploreMountaincar | Task::Custom => {
                (AgentKind::ActiveInference, ModelMode::Bayesian, 1)
            }
            Task::ExploitPendulum => (AgentKind::ActiveInference, ModelMode::PointEstimate, 3),
        };
        let m = ModelConfig::default();
        let planner = PlannerSection {
            info_gain: task != Task::ExploitPendulum,
            ..PlannerSection::default()
        };
        Self {
            task,
            agent,
            epochs: 100,
            seeds: vec![1, 2, 3, 4, 5],
            out: String::new(),
            action_repeat: repeat,
            episode_steps: 200,
            seed_episodes: 5,
            noise_variance: 0.3,
            remote: String::new(),
            remote_timeout_secs: 10.0,
            parallel_seeds: true,
            trace_steps: false,
            planner,
            model: ModelSection {
                mode,
                hidden: m.hidden,
                reward_hidden: m.reward_hidden,
                weight_variance_init: m.weight_variance_init,
                recognition_variance: AutoOr::Auto,
            },
            train: TrainSection::default(),
            coverage: CoverageSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::Invalid(key.into(), msg.into()));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "must be distinct");
        }
        if self.action_repeat == 0 {
            return bad("action_repeat", "must be at least 1");
        }
        if self.episode_steps == 0 {
            return bad("episode_steps", "must be at least 1");
        }
        if self.task == Task::Custom && self.remote.is_empty() {
            return bad("remote", "the custom task needs a remote endpoint");
        }
        if !(self.remote_timeout_secs > 0.0 && self.remote_timeout_secs.is_finite()) {
            return bad("remote_timeout_secs", "must be positive");
        }
        if self.model.hidden == 0 || self.model.reward_hidden == 0 {
            return bad("model.hidden", "network widths must be positive");
        }
        if self.train.batches == 0 || self.train.batch_size == 0 {
            return bad("train.batches", "batches and batch_size must be positive");
        }
        self.agent_config().validate().map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split_whitespace()
                .find(|w| w.contains('.') && w.chars().next().is_some_and(char::is_alphabetic))
                .unwrap_or("planner")
                .to_string();
            ConfigError::Invalid(key, msg)
        })
    }

    pub fn agent_config(&self) -> AgentConfig {
        let p = &self.planner;
        let planner = PlannerConfig {
            horizon: p.H,
            candidates: p.N,
            elites: p.M,
            iterations: p.I,
            theta_samples: p.B,
            particles: p.J,
            extrinsic: p.extrinsic,
            info_gain: p.info_gain,
            info_gain_weight: p.info_gain_weight,
            transition_noise: p.transition_noise,
            variance_floor: p.variance_floor,
            state_clamp: p.state_clamp,
            distance_floor: p.distance_floor,
            ..PlannerConfig::default()
        };
        let t = &self.train;
        AgentConfig {
            kind: self.agent,
            noise_variance: self.noise_variance,
            seed_episodes: self.seed_episodes,
            planner,
            model: ModelConfig {
                mode: self.model.mode,
                hidden: self.model.hidden,
                reward_hidden: self.model.reward_hidden,
                weight_variance_init: self.model.weight_variance_init,
                recognition_variance: self.model.recognition_variance.value(),
            },
            train: TrainConfig {
                batches: t.batches,
                batch_size: t.batch_size,
                k_theta: t.k_theta,
                kl_weight: t.kl_weight.value(),
                include_observation_nll: t.include_observation_nll,
                refit_normalizer: true,
                adam: AdamConfig {
                    lr: t.learning_rate,
                    beta1: t.beta1,
                    beta2: t.beta2,
                    eps: t.eps,
                },
            },
            coverage: self.coverage.clone(),
        }
    }

    /// Builds the task's environment, wrapped in the configured action
    /// repeat.
    pub fn make_env(&self) -> aif_core::Result<Box<dyn Environment>> {
        let inner: Box<dyn Environment> = match self.task {
            Task::ExploreMountaincar => Box::new(MountainCar::new(self.episode_steps)),
            Task::ExploitPendulum => Box::new(Pendulum::new(self.episode_steps)),
            Task::Custom => Box::new(RemoteEnv::connect(
                self.remote.as_str(),
                std::time::Duration::from_secs_f64(self.remote_timeout_secs),
            )?),
        };
        Ok(if self.action_repeat == 1 {
            inner
        } else {
            Box::new(ActionRepeat::new(inner, self.action_repeat)?)
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialise")
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    /// Offending key path and message.
    Invalid(String, String),
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(k, m) => write!(f, "invalid config key `{k}`: {m}"),
            ConfigError::Io(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Values given on the command line, applied over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub task: Option<String>,
    pub agent: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub out: Option<String>,
    /// `(dotted.key, raw value)` pairs.
    pub dotted: Vec<(String, String)>,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a command-line value as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        return Err(ConfigError::Invalid(key.into(), "empty key".into()));
    };
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(key.into(), format!("`{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn path_error(e: serde_path_to_error::Error<toml::de::Error>) -> ConfigError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let msg = inner.message().to_string();
    // Unknown fields are reported at the enclosing section; name the field.
    let key = match msg
        .strip_prefix("unknown field `")
        .and_then(|r| r.split('`').next())
    {
        Some(field) if path == "." => field.to_string(),
        Some(field) if !path.ends_with(&format!(".{field}")) && path != field => {
            format!("{path}.{field}")
        }
        Some(_) => path,
        None => path,
    };
    ConfigError::Invalid(key, msg)
}

/// Resolves presets, an optional config file and command-line overrides.
pub fn resolve(file: Option<&str>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let file: Table = match file {
        Some(text) => text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
        None => Table::new(),
    };
    let task_name = match (&overrides.task, file.get("task")) {
        (Some(t), _) => t.clone(),
        (None, Some(Value::String(t))) => t.clone(),
        (None, Some(_)) => {
            return Err(ConfigError::Invalid(
                "task".into(),
                "must be a string".into(),
            ))
        }
        (None, None) => Task::ExploreMountaincar.name().to_string(),
    };
    let task = Task::parse(&task_name).ok_or_else(|| {
        ConfigError::Invalid(
            "task".into(),
            format!("unknown task `{task_name}` (explore-mountaincar, exploit-pendulum, custom)"),
        )
    })?;

    let mut table = Table::try_from(RunConfig::preset(task)).expect("presets serialise");
    merge(&mut table, file);
    table.insert("task".into(), Value::String(task_name));
    if let Some(a) = &overrides.agent {
        table.insert("agent".into(), Value::String(a.replace('-', "_")));
    }
    if let Some(s) = &overrides.seeds {
        table.insert(
            "seeds".into(),
            Value::Array(s.iter().map(|&x| Value::Integer(x as i64)).collect()),
        );
    }
    if let Some(e) = overrides.epochs {
        table.insert("epochs".into(), Value::Integer(e as i64));
    }
    if let Some(o) = &overrides.out {
        table.insert("out".into(), Value::String(o.clone()));
    }
    for (k, v) in &overrides.dotted {
        set_dotted(&mut table, k, parse_value(v))?;
    }

    let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let de = toml::Deserializer::new(&text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(path_error)?;
    if cfg.out.is_empty() {
        let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| DEFAULT_OUT_ROOT.into());
        cfg.out = PathBuf::from(root)
            .join(format!("{}-{}", cfg.task.name(), cfg.agent.name()))
            .to_string_lossy()
            .into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(
    path: Option<&std::path::Path>,
    overrides: &Overrides,
) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError::Io(p.into(), e))?),
        None => None,
    };
    resolve(text.as_deref(), overrides)
}
