//! JSON run configs. Keys left out are filled from the task preset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{PairMap, NUM_TERMS};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub task: Option<String>,
    pub dim: Option<usize>,
    pub bottleneck: Option<usize>,
    pub losses: Option<[bool; NUM_TERMS]>,
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_every_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub inverse_temperature: Option<f64>,
    pub init_mode: Option<String>,
    pub grad_clip: Option<f64>,
    /// Term-to-pair mapping override, six `[query, target]` kinds.
    pub pairs: Option<PairMap>,
    /// Only `false` is supported; the logit scale stays fixed.
    pub learnable_temperature: Option<bool>,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves against the task preset. `data_dim` fills a missing `dim` and
    /// must agree with an explicit one.
    pub fn resolve(&self, data_dim: Option<usize>) -> Result<TrainConfig> {
        let task = self
            .task
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key \"task\"".into()))?;
        let dim = match (self.dim, data_dim) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config dim {a} but data dimension {b}")))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::Config("dim unknown: set \"dim\" or supply data".into())),
        };
        if self.learnable_temperature == Some(true) {
            return Err(Error::Config("learnable_temperature=true is not supported".into()));
        }
        let mut c = TrainConfig::preset(task, dim)?;
        macro_rules! fill {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        fill!(
            bottleneck,
            losses,
            gamma,
            learning_rate,
            decay_factor,
            decay_every_steps,
            batch_size,
            epochs,
            seed,
            inverse_temperature,
            init_mode,
            pairs
        );
        c.grad_clip = self.grad_clip;
        c.validate()?;
        Ok(c)
    }
}
