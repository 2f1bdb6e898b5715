//! Agents, the replay buffer, the train-then-collect experiment loop and the
//! state-space coverage metric.

mod agent;
mod buffer;
mod coverage;
mod experiment;

pub use agent::{choose_action, select_action, ActionChoice, AgentConfig, AgentKind};
pub use buffer::{ReplayBuffer, Transition};
pub use coverage::{CoverageGrid, CoverageSettings};
pub use experiment::{
    run_experiment, run_experiment_with, EpochRow, EpochTiming, Experiment, ExperimentRecord,
    StepRecord,
};
