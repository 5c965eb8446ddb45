//! Adam optimization of `W` with a step learning-rate schedule.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius;
use crate::objectives::{
    composite_loss, LossBreakdown, LossTermSpec, PairMap, DEFAULT_INVERSE_TEMPERATURE, DEFAULT_PAIRS,
    NUM_TERMS,
};
use crate::projection::{init_projection, ProjectionMatrix};
use crate::store::{batch_iter, common_dim, EmbeddingKind, EmbeddingTuple};
use crate::task::lookup_task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: String,
    pub dim: usize,
    pub bottleneck: usize,
    pub losses: [bool; NUM_TERMS],
    pub gamma: f64,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub inverse_temperature: f64,
    pub init_mode: String,
    /// Rescales the gradient to this Frobenius norm when exceeded.
    pub grad_clip: Option<f64>,
    pub pairs: PairMap,
}

impl TrainConfig {
    /// Task preset with the default schedule: lr 1e-4 halved every 4000
    /// steps, batch 128, one epoch, gamma 0.5, gaussian init.
    pub fn preset(task: &str, dim: usize) -> Result<Self> {
        let t = lookup_task(task)?;
        Ok(Self {
            task: t.name().to_string(),
            dim,
            bottleneck: t.default_bottleneck(),
            losses: t.default_losses(),
            gamma: 0.5,
            learning_rate: 1e-4,
            decay_factor: 0.5,
            decay_every_steps: 4000,
            batch_size: 128,
            epochs: 1,
            seed: 0,
            inverse_temperature: DEFAULT_INVERSE_TEMPERATURE,
            init_mode: "gaussian".to_string(),
            grad_clip: None,
            pairs: DEFAULT_PAIRS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        lookup_task(&self.task)?;
        crate::projection::init_registry().get(&self.init_mode)?;
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.bottleneck == 0 || self.bottleneck > self.dim {
            return bad(format!("bottleneck {} must lie in 1..={}", self.bottleneck, self.dim));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_every_steps == 0 {
            return bad("decay_every_steps must be positive".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for in-batch negatives".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.inverse_temperature > 0.0 && self.inverse_temperature.is_finite()) {
            return bad(format!("inverse_temperature must be > 0, got {}", self.inverse_temperature));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> Result<LossTermSpec> {
        let task = lookup_task(&self.task)?;
        Ok(LossTermSpec {
            enabled: self.losses,
            signs: task.signs(),
            gamma: self.gamma,
            inverse_temperature: self.inverse_temperature,
            pairs: self.pairs,
        })
    }

    pub fn has_objective(&self) -> bool {
        self.losses.iter().any(|&l| l) || self.gamma > 0.0
    }
}

/// Learning rate in effect at a zero-based optimizer step.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let decays = (step / config.decay_every_steps) as i32;
    config.learning_rate * config.decay_factor.powi(decays)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `w` in place.
pub fn adam_step(w: &mut Array2<f64>, grad: &Array2<f64>, state: &mut AdamState, lr: f64) -> Result<()> {
    if w.dim() != grad.dim() || w.dim() != state.m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "adam shapes disagree: w {:?}, grad {:?}, state {:?}",
            w.dim(),
            grad.dim(),
            state.m.dim()
        )));
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: state.t as usize,
            what: format!("gradient entry {pos}"),
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    ndarray::Zip::from(w)
        .and(grad)
        .and(&mut state.m)
        .and(&mut state.v)
        .for_each(|w, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Orthogonality residual of the `W` the loss was evaluated at.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub projection: ProjectionMatrix,
    pub initial: ProjectionMatrix,
    pub log: Vec<TrainLogRecord>,
}

/// Trains one projection. Deterministic for a fixed config.
pub fn train(dataset: &[EmbeddingTuple], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let d = common_dim(dataset)?;
    if d != config.dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {d} but config dim {}",
            config.dim
        )));
    }
    if dataset.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} tuples, fewer than batch_size {}",
            dataset.len(),
            config.batch_size
        )));
    }

    if let Some((i, t)) = dataset
        .iter()
        .enumerate()
        .find(|(_, t)| EmbeddingKind::ALL.iter().any(|&k| t.get(k).iter().all(|&x| x == 0.0)))
    {
        return Err(Error::InvalidArgument(format!(
            "tuple {i} ({:?}) has an all-zero embedding",
            t.string
        )));
    }

    let initial = init_projection(config.dim, config.bottleneck, config.seed, &config.init_mode)?;
    if !config.has_objective() {
        return Ok(TrainOutcome {
            projection: initial.clone(),
            initial,
            log: Vec::new(),
        });
    }
    let spec = config.loss_spec()?;
    let mut w = initial.weights().to_owned();
    let mut adam = AdamState::new(w.dim());
    let mut log = Vec::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let shuffle_seed = config.seed.wrapping_add(1 + epoch as u64);
        for batch in batch_iter(dataset, config.batch_size, shuffle_seed, true)? {
            // Inputs are validated nonzero, so a degenerate projected row means W diverged.
            let (loss, mut grad) = composite_loss(w.view(), &batch, &spec).map_err(|e| match e {
                Error::ZeroNorm(row) => Error::NonFinite {
                    step,
                    what: format!("projected batch row {row} has zero or non-finite norm"),
                },
                other => other,
            })?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    what: format!("loss total {}", loss.total),
                });
            }
            if let Some(limit) = config.grad_clip {
                let norm = frobenius(grad.view());
                if norm > limit {
                    grad *= limit / norm;
                }
            }
            let lr = lr_at(step, config);
            adam_step(&mut w, &grad, &mut adam, lr).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { step, what },
                other => other,
            })?;
            log.push(TrainLogRecord {
                step,
                lr,
                residual: loss.regularizer,
                loss,
            });
            step += 1;
        }
    }

    Ok(TrainOutcome {
        projection: ProjectionMatrix::new(w)?,
        initial,
        log,
    })
}

/// Writes the log as `step,lr,L1,...,L6,reg,total,residual`; `reg` is `γ R(W)`.
pub fn write_log_csv<W: Write>(out: W, log: &[TrainLogRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["step", "lr", "L1", "L2", "L3", "L4", "L5", "L6", "reg", "total", "residual"])?;
    for r in log {
        let mut row = vec![r.step.to_string(), r.lr.to_string()];
        row.extend(r.loss.terms.iter().map(|t| t.map(|v| v.to_string()).unwrap_or_default()));
        row.push((r.loss.gamma * r.loss.regularizer).to_string());
        row.push(r.loss.total.to_string());
        row.push(r.residual.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
