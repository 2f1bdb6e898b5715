use std::io::Write;
use std::net::{SocketAddr, TcpListener};

use aif_core::envsim::{self, ActionRepeat, Environment, MountainCar, Pendulum};
use anyhow::{bail, Result};

use crate::config::Task;

/// Builds a fresh in-process environment for one remote session.
pub fn local_env(
    task: Task,
    action_repeat: usize,
    episode_steps: usize,
) -> Result<Box<dyn Environment>> {
    let inner: Box<dyn Environment> = match task {
        Task::ExploreMountaincar => Box::new(MountainCar::new(episode_steps)),
        Task::ExploitPendulum => Box::new(Pendulum::new(episode_steps)),
        Task::Custom => bail!("env-serve hosts built-in tasks only"),
    };
    Ok(if action_repeat == 1 {
        inner
    } else {
        Box::new(ActionRepeat::new(inner, action_repeat)?)
    })
}

/// Binds `bind`, prints `listening on <addr>` and serves until killed.
pub fn env_serve(task: Task, bind: &str, action_repeat: usize, episode_steps: usize) -> Result<()> {
    local_env(task, action_repeat, episode_steps)?;
    let listener = TcpListener::bind(bind)?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    envsim::serve(listener, move || {
        local_env(task, action_repeat, episode_steps).expect("validated before binding")
    })?;
    Ok(())
}
