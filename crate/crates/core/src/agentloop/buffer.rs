use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{Normalizer, TransitionRef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub episode: usize,
    pub step: usize,
}

impl Transition {
    pub fn view(&self) -> TransitionRef<'_> {
        TransitionRef {
            state: &self.state,
            action: &self.action,
            next_state: &self.next_state,
            reward: self.reward,
        }
    }
}

/// Welford accumulator over fixed-width rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Moments {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((x, m), s) in row.into_iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Mean and population deviation; near-constant columns get unit scale.
    fn mean_std(&self) -> (Vec<f64>, Vec<f64>) {
        if self.n == 0 {
            return (vec![0.0; self.mean.len()], vec![1.0; self.mean.len()]);
        }
        let std = self
            .m2
            .iter()
            .map(|&s| {
                let sd = (s / self.n as f64).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        (self.mean.clone(), std)
    }
}

/// Append-only store of transitions grouped into contiguous episodes, with
/// running normalisation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
    /// Index of the first transition of each episode.
    episode_starts: Vec<usize>,
    state: Moments,
    action: Moments,
    delta: Moments,
    reward: Moments,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
            episode_starts: Vec::new(),
            state: Moments::new(state_dim),
            action: Moments::new(action_dim),
            delta: Moments::new(state_dim),
            reward: Moments::new(1),
        }
    }

    /// Opens a new episode and returns its id.
    pub fn begin_episode(&mut self) -> usize {
        self.episode_starts.push(self.transitions.len());
        self.episode_starts.len() - 1
    }

    /// Appends a transition to the open episode. Its `episode` and `step`
    /// fields are assigned here.
    pub fn push(
        &mut self,
        state: &[f64],
        action: &[f64],
        next_state: &[f64],
        reward: f64,
        terminal: bool,
    ) -> Result<&Transition> {
        let Some(&start) = self.episode_starts.last() else {
            return Err(Error::invalid("push before begin_episode"));
        };
        if state.len() != self.state_dim || next_state.len() != self.state_dim {
            return Err(Error::Dimension {
                what: "transition state",
                expected: self.state_dim,
                got: state.len().max(next_state.len()),
            });
        }
        if action.len() != self.action_dim {
            return Err(Error::Dimension {
                what: "transition action",
                expected: self.action_dim,
                got: action.len(),
            });
        }
        let finite = state
            .iter()
            .chain(action)
            .chain(next_state)
            .chain([&reward])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition"));
        }
        self.state.push(state.iter().copied());
        self.action.push(action.iter().copied());
        self.delta
            .push(next_state.iter().zip(state).map(|(b, a)| b - a));
        self.reward.push([reward]);
        self.transitions.push(Transition {
            state: state.to_vec(),
            action: action.to_vec(),
            next_state: next_state.to_vec(),
            reward,
            terminal,
            episode: self.episode_starts.len() - 1,
            step: self.transitions.len() - start,
        });
        Ok(self.transitions.last().expect("just pushed"))
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episodes(&self) -> usize {
        self.episode_starts.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episode(&self, id: usize) -> &[Transition] {
        let start = self.episode_starts[id];
        let end = self
            .episode_starts
            .get(id + 1)
            .copied()
            .unwrap_or(self.transitions.len());
        &self.transitions[start..end]
    }

    pub fn views(&self) -> Vec<TransitionRef<'_>> {
        self.transitions.iter().map(Transition::view).collect()
    }

    /// Normalisation statistics of the current contents.
    pub fn normalizer(&self) -> Normalizer {
        let (state_mean, state_std) = self.state.mean_std();
        let (action_mean, action_std) = self.action.mean_std();
        let (delta_mean, delta_std) = self.delta.mean_std();
        let (rm, rs) = self.reward.mean_std();
        Normalizer {
            state_mean,
            state_std,
            action_mean,
            action_std,
            delta_mean,
            delta_std,
            reward_mean: rm[0],
            reward_std: rs[0],
        }
    }
}
