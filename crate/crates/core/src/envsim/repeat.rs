use crate::envsim::{EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

/// Applies each action `k` times, summing rewards and stopping early when
/// the inner episode ends.
#[derive(Clone, Debug)]
pub struct ActionRepeat<E> {
    inner: E,
    k: usize,
    spec: EnvSpec,
}

impl<E: Environment> ActionRepeat<E> {
    pub fn new(inner: E, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("action repeat must be at least 1"));
        }
        let mut spec = inner.spec().clone();
        spec.max_steps = spec.max_steps.div_ceil(k);
        spec.reward_range = (
            spec.reward_range.0 * k as f64,
            spec.reward_range.1 * k as f64,
        );
        Ok(Self { inner, k, spec })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for ActionRepeat<E> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut total = 0.0;
        let mut last = self.inner.step(action)?;
        total += last.reward;
        for _ in 1..self.k {
            if last.done() {
                break;
            }
            last = self.inner.step(action)?;
            total += last.reward;
        }
        last.reward = total;
        Ok(last)
    }
}
