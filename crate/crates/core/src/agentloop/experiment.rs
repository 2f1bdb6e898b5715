use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentloop::agent::{choose_action, AgentConfig};
use crate::agentloop::buffer::ReplayBuffer;
use crate::agentloop::coverage::CoverageGrid;
use crate::diffcore::OptimizerState;
use crate::envsim::Environment;
use crate::error::{Error, Result};
use crate::genmodel::{train_epoch, WorldModel};
use crate::rng::{derive_seed, stream};

const MODEL_STREAM: u64 = 1;
const RESET_STREAM: u64 = 2;
const RANDOM_ACTION_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
const PLAN_STREAM: u64 = 5;

/// Summary of one train-then-collect epoch. Free-energy terms are averages
/// over the epoch's batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub episode_return: f64,
    pub episode_length: usize,
    pub terminal: bool,
    pub free_energy: f64,
    pub state_kl: f64,
    pub parameter_kl: f64,
    pub reward_nll: f64,
    pub observation_nll: f64,
    pub kl_weight: f64,
    pub parameter_uncertainty: Option<f64>,
    pub coverage: Option<f64>,
    pub buffer_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub train_seconds: f64,
    pub collect_seconds: f64,
}

/// One agent step of a collected episode (epoch 0 for seed episodes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Everything an experiment produces that is determined by its
/// configuration and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub seed_returns: Vec<f64>,
    pub rows: Vec<EpochRow>,
    pub steps: Vec<StepRecord>,
    pub coverage: Option<CoverageGrid>,
}

/// The record plus the final learner state and wall-clock timings.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub record: ExperimentRecord,
    pub timings: Vec<EpochTiming>,
    pub model: WorldModel<f64>,
    pub optimizer: OptimizerState<f64>,
    pub buffer: ReplayBuffer,
}

struct Episode {
    ret: f64,
    length: usize,
    terminal: bool,
}

fn uniform_action<R: Rng>(low: &[f64], high: &[f64], rng: &mut R) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(&l, &h)| if l < h { rng.random_range(l..=h) } else { l })
        .collect()
}

struct Collector<'a> {
    env: &'a mut dyn Environment,
    buffer: ReplayBuffer,
    coverage: Option<CoverageGrid>,
    steps: Vec<StepRecord>,
    seed: u64,
}

impl Collector<'_> {
    fn episode(
        &mut self,
        epoch: usize,
        mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Episode> {
        let id = self.buffer.begin_episode();
        let max_steps = self.env.spec().max_steps;
        let mut state = self
            .env
            .reset(derive_seed(self.seed, &[RESET_STREAM, id as u64]))?;
        if let Some(g) = &mut self.coverage {
            g.mark(&state)?;
        }
        let mut ep = Episode {
            ret: 0.0,
            length: 0,
            terminal: false,
        };
        loop {
            let action = policy(&state)?;
            let r = self.env.step(&action)?;
            let spec = self.env.spec();
            let applied = spec.clamp_action(&action)?;
            self.buffer
                .push(&state, &applied, &r.next_state, r.reward, r.terminal)?;
            if let Some(g) = &mut self.coverage {
                g.mark(&r.next_state)?;
            }
            self.steps.push(StepRecord {
                epoch,
                step: ep.length,
                state: std::mem::replace(&mut state, r.next_state.clone()),
                action: applied,
                reward: r.reward,
            });
            ep.ret += r.reward;
            ep.length += 1;
            ep.terminal = r.terminal;
            if r.done() || ep.length >= max_steps {
                return Ok(ep);
            }
        }
    }
}

pub fn run_experiment(
    env: &mut dyn Environment,
    config: &AgentConfig,
    epochs: usize,
    seed: u64,
) -> Result<Experiment> {
    run_experiment_with(env, config, epochs, seed, |_, _| Ok(()))
}

/// Seeds the buffer with random-action episodes, then alternates model
/// training and one replanning episode per epoch. `on_epoch` sees every
/// row as soon as it is complete, so callers can persist partial results.
pub fn run_experiment_with(
    env: &mut dyn Environment,
    config: &AgentConfig,
    epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRow, &EpochTiming) -> Result<()>,
) -> Result<Experiment> {
    if epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    let spec = env.spec().clone();
    spec.validate()?;
    let mut config = config.clone();
    config.planner = config.planner.with_bounds(
        spec.bounds.action_low.clone(),
        spec.bounds.action_high.clone(),
    );
    config.validate()?;

    let mut model = WorldModel::<f64>::new(
        config.model.clone(),
        spec.state_dim,
        spec.action_dim,
        &mut stream(seed, &[MODEL_STREAM]),
    )?;
    let mut optimizer = model.new_optimizer(config.train.adam);
    let coverage = if spec.state_dim == 2 {
        Some(CoverageGrid::new(config.coverage.clone())?)
    } else {
        None
    };
    let mut c = Collector {
        env,
        buffer: ReplayBuffer::new(spec.state_dim, spec.action_dim),
        coverage,
        steps: Vec::new(),
        seed,
    };

    let mut seed_returns = Vec::with_capacity(config.seed_episodes);
    for i in 0..config.seed_episodes {
        let mut rng = stream(seed, &[RANDOM_ACTION_STREAM, i as u64]);
        let (lo, hi) = (&spec.bounds.action_low, &spec.bounds.action_high);
        let ep = c.episode(0, |_| Ok(uniform_action(lo, hi, &mut rng)))?;
        seed_returns.push(ep.ret);
    }

    let mut train = config.train.clone();
    train.refit_normalizer = false;
    let mut rows = Vec::with_capacity(epochs);
    let mut timings = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let t0 = Instant::now();
        model.normalizer = c.buffer.normalizer();
        let stats = train_epoch(
            &mut model,
            &mut optimizer,
            &c.buffer.views(),
            &train,
            &mut stream(seed, &[TRAIN_STREAM, epoch as u64]),
        )?;
        let t1 = Instant::now();
        let mut plan_rng = stream(seed, &[PLAN_STREAM, epoch as u64]);
        let ep = c.episode(epoch, |s| {
            Ok(choose_action(&config, &model, s, &mut plan_rng)?.action)
        })?;
        let coverage = c.coverage.as_mut().map(CoverageGrid::close_epoch);
        let fe = stats.mean_terms();
        let row = EpochRow {
            epoch,
            episode_return: ep.ret,
            episode_length: ep.length,
            terminal: ep.terminal,
            free_energy: fe.total,
            state_kl: fe.state_kl,
            parameter_kl: fe.parameter_kl,
            reward_nll: fe.reward_nll,
            observation_nll: fe.observation_nll,
            kl_weight: fe.kl_weight,
            parameter_uncertainty: model.parameter_uncertainty().ok(),
            coverage,
            buffer_size: c.buffer.len(),
        };
        let timing = EpochTiming {
            epoch,
            train_seconds: (t1 - t0).as_secs_f64(),
            collect_seconds: t1.elapsed().as_secs_f64(),
        };
        log::info!(
            "seed {seed} epoch {epoch}: return {:.3} length {} coverage {:?} ({:.1}s)",
            row.episode_return,
            row.episode_length,
            row.coverage,
            timing.train_seconds + timing.collect_seconds
        );
        on_epoch(&row, &timing)?;
        rows.push(row);
        timings.push(timing);
    }

    Ok(Experiment {
        record: ExperimentRecord {
            seed,
            seed_returns,
            rows,
            steps: c.steps,
            coverage: c.coverage,
        },
        timings,
        model,
        optimizer,
        buffer: c.buffer,
    })
}
