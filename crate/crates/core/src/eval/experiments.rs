//! Bottleneck sweeps and loss-term ablations. Every row trains with the
//! base config's seed, so identical rows give identical results.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::report::{pair_task_report, PairTaskReport};
use crate::error::{Error, Result};
use crate::objectives::NUM_TERMS;
use crate::store::EmbeddingTuple;
use crate::train::{train, TrainConfig};

/// Regularizer weight used for every sweep row.
pub const SWEEP_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    /// Word-image to string retrieval on the nonsense-word validation subset.
    pub score: Option<f64>,
    pub final_residual: f64,
}

/// Only `L_4` with `gamma = 0.5`, one projection per bottleneck.
pub fn sweep_config(base: &TrainConfig, k: usize) -> TrainConfig {
    let mut c = base.clone();
    c.bottleneck = k;
    c.losses = [false, false, false, true, false, false];
    c.gamma = SWEEP_GAMMA;
    c
}

/// Score a sweep row reports for a trained (or absent) projection.
pub fn sweep_metric(report: &PairTaskReport) -> Option<f64> {
    report.retrieval.xt_yt.fake
}

pub fn bottleneck_sweep(
    train_set: &[EmbeddingTuple],
    val: &[EmbeddingTuple],
    class_texts: ArrayView2<f64>,
    base: &TrainConfig,
    dims: &[usize],
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no bottleneck dimensions given".into()));
    }
    if let Some(&k) = dims.iter().find(|&&k| k == 0 || k > base.dim) {
        return Err(Error::InvalidArgument(format!(
            "bottleneck {k} outside 1..={}",
            base.dim
        )));
    }
    dims.iter()
        .map(|&k| {
            let out = train(train_set, &sweep_config(base, k))?;
            let report = pair_task_report(val, class_texts, Some(&out.projection))?;
            Ok(SweepRow {
                k,
                score: sweep_metric(&report),
                final_residual: out.projection.orthogonality_residual(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRowSpec {
    pub losses: [bool; NUM_TERMS],
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` for the untrained baseline.
    pub spec: Option<AblationRowSpec>,
    pub report: PairTaskReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        match &self.spec {
            None => "baseline".to_string(),
            Some(s) => {
                let terms: Vec<String> = s
                    .losses
                    .iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(i, _)| format!("L{}", i + 1))
                    .collect();
                format!("{} gamma={}", terms.join("+"), s.gamma)
            }
        }
    }
}

/// Baseline row followed by one trained row per spec, in input order.
pub fn ablation_grid(
    train_set: &[EmbeddingTuple],
    val: &[EmbeddingTuple],
    class_texts: ArrayView2<f64>,
    base: &TrainConfig,
    rows: &[AblationRowSpec],
) -> Result<Vec<AblationRow>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("ablation grid has no rows".into()));
    }
    let mut out = vec![AblationRow {
        spec: None,
        report: pair_task_report(val, class_texts, None)?,
    }];
    for spec in rows {
        let mut c = base.clone();
        c.losses = spec.losses;
        c.gamma = spec.gamma;
        if !c.has_objective() {
            return Err(Error::Config("ablation row with an empty objective".into()));
        }
        let trained = train(train_set, &c)?;
        out.push(AblationRow {
            spec: Some(*spec),
            report: pair_task_report(val, class_texts, Some(&trained.projection))?,
        });
    }
    Ok(out)
}
