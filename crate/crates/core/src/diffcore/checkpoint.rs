//! Versioned JSON container for named parameters and optimizer state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::optim::{AdamConfig, OptimizerState};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "aif-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor<S: Scalar>(name: impl Into<String>, t: &Tensor<S>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        Tensor::new(
            self.shape.clone(),
            self.values.iter().map(|&v| S::of(v)).collect(),
        )
        .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: Vec<NamedTensor>,
    pub second: Vec<NamedTensor>,
}

impl OptimizerRecord {
    pub fn from_state<S: Scalar>(state: &OptimizerState<S>, names: &[String]) -> Self {
        let conv = |ts: &[Tensor<S>]| {
            ts.iter()
                .zip(names)
                .map(|(t, n)| NamedTensor::from_tensor(n.clone(), t))
                .collect()
        };
        Self {
            config: state.config,
            steps: state.steps,
            first: conv(&state.first),
            second: conv(&state.second),
        }
    }

    pub fn to_state<S: Scalar>(&self) -> Result<OptimizerState<S>> {
        let conv = |ts: &[NamedTensor]| {
            ts.iter()
                .map(NamedTensor::to_tensor)
                .collect::<Result<Vec<_>>>()
        };
        Ok(OptimizerState {
            config: self.config,
            first: conv(&self.first)?,
            second: conv(&self.second)?,
            steps: self.steps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerRecord>,
    /// Free-form metadata owned by the caller (architecture, mode, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: Vec<NamedTensor>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
            optimizer: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn param(&self, name: &str) -> Option<&NamedTensor> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag {:?}",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let w = Tensor::<f64>::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.25]).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), [&w]);
        let mut w2 = w.clone();
        opt.step(&mut [&mut w2], &[Tensor::full(&[2, 2], 0.3)])
            .unwrap();
        let names = vec!["w".to_string()];
        let mut ck = Checkpoint::new(vec![NamedTensor::from_tensor("w", &w2)]);
        ck.optimizer = Some(OptimizerRecord::from_state(&opt, &names));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let t: Tensor<f64> = back.param("w").unwrap().to_tensor().unwrap();
        assert_eq!(t, w2);
        let restored: OptimizerState<f64> = back.optimizer.unwrap().to_state().unwrap();
        assert_eq!(restored, opt);
    }

    #[test]
    fn rejects_wrong_version() {
        let mut ck = Checkpoint::new(vec![]);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
        assert!(Checkpoint::from_json("{not json").is_err());
    }
}
