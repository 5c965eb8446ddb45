//! Per-pair validation report: classification plus retrieval split by real and nonsense words.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::retrieval::{top1_classification, top1_retrieval_by_key};
use crate::error::{Error, Result};
use crate::projection::ProjectionMatrix;
use crate::store::{Batch, EmbeddingKind, EmbeddingTuple};

/// Retrieval score over the real-word subset, the nonsense subset, and both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub real: Option<f64>,
    pub fake: Option<f64>,
    pub all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationScores {
    pub xi_yi: f64,
    pub xit_yi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalScores {
    pub xt_yt: SplitScore,
    pub xit_xt: SplitScore,
    pub xit_xi: SplitScore,
    pub xit_yt: SplitScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTaskReport {
    pub n_val: usize,
    pub n_real: usize,
    pub n_fake: usize,
    pub n_classes: usize,
    pub classification: ClassificationScores,
    pub retrieval: RetrievalScores,
}

/// Which rows are candidates for a retrieval pair and how they are matched.
#[derive(Clone, Copy)]
enum MatchKey {
    /// Same string; galleries hold one row per distinct string.
    String,
    /// Same tuple.
    Instance,
}

fn retrieval_score(
    batch: &Batch,
    rows: &[usize],
    query: EmbeddingKind,
    target: EmbeddingKind,
    key: MatchKey,
    p: Option<&ProjectionMatrix>,
) -> Result<Option<f64>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let q = batch.get(query).select(Axis(0), rows);
    let g = batch.get(target).select(Axis(0), rows);
    let score = match key {
        MatchKey::String => {
            let keys: Vec<&str> = rows.iter().map(|&i| batch.strings[i].as_str()).collect();
            top1_retrieval_by_key(q.view(), &keys, g.view(), &keys, p)?
        }
        MatchKey::Instance => top1_retrieval_by_key(q.view(), rows, g.view(), rows, p)?,
    };
    Ok(Some(score.top1_percent))
}

fn split_score(
    batch: &Batch,
    subsets: &[Vec<usize>; 3],
    query: EmbeddingKind,
    target: EmbeddingKind,
    key: MatchKey,
    p: Option<&ProjectionMatrix>,
) -> Result<SplitScore> {
    let [real, fake, all] = subsets;
    Ok(SplitScore {
        real: retrieval_score(batch, real, query, target, key, p)?,
        fake: retrieval_score(batch, fake, query, target, key, p)?,
        all: retrieval_score(batch, all, query, target, key, p)?.expect("nonempty validation set"),
    })
}

/// Classification of `x_i` and `x_it` against class texts, plus the four
/// image-to-text retrievals split by real and nonsense words.
pub fn pair_task_report(
    val: &[EmbeddingTuple],
    class_texts: ArrayView2<f64>,
    p: Option<&ProjectionMatrix>,
) -> Result<PairTaskReport> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let all: Vec<usize> = (0..val.len()).collect();
    let batch = Batch::from_tuples(val, &all)?;
    if class_texts.ncols() != batch.dim() {
        return Err(Error::DimensionMismatch(format!(
            "class texts have dimension {}, tuples {}",
            class_texts.ncols(),
            batch.dim()
        )));
    }
    let labels: Vec<usize> = batch.class_ids.iter().map(|&c| c as usize).collect();
    let (real, fake): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| batch.is_real_word[i]);
    let subsets = [real, fake, all];

    let classification = ClassificationScores {
        xi_yi: top1_classification(batch.get(EmbeddingKind::XI).view(), class_texts, &labels, p)?,
        xit_yi: top1_classification(batch.get(EmbeddingKind::XIT).view(), class_texts, &labels, p)?,
    };
    use EmbeddingKind::*;
    let retrieval = RetrievalScores {
        xt_yt: split_score(&batch, &subsets, XT, YT, MatchKey::String, p)?,
        xit_xt: split_score(&batch, &subsets, XIT, XT, MatchKey::String, p)?,
        xit_xi: split_score(&batch, &subsets, XIT, XI, MatchKey::Instance, p)?,
        xit_yt: split_score(&batch, &subsets, XIT, YT, MatchKey::String, p)?,
    };
    Ok(PairTaskReport {
        n_val: val.len(),
        n_real: subsets[0].len(),
        n_fake: subsets[1].len(),
        n_classes: class_texts.nrows(),
        classification,
        retrieval,
    })
}

pub const REPORT_CSV_COLUMNS: [&str; 15] = [
    "label",
    "xi_yi",
    "xit_yi",
    "xt_yt_real",
    "xt_yt_fake",
    "xit_xt_real",
    "xit_xt_fake",
    "xit_xi_real",
    "xit_xi_fake",
    "xit_yt_real",
    "xit_yt_fake",
    "xt_yt_all",
    "xit_xt_all",
    "xit_xi_all",
    "xit_yt_all",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl PairTaskReport {
    /// Cells in [`REPORT_CSV_COLUMNS`] order, after the label.
    pub fn csv_cells(&self) -> Vec<String> {
        let r = &self.retrieval;
        let mut out = vec![
            cell(Some(self.classification.xi_yi)),
            cell(Some(self.classification.xit_yi)),
        ];
        for s in [&r.xt_yt, &r.xit_xt, &r.xit_xi, &r.xit_yt] {
            out.push(cell(s.real));
            out.push(cell(s.fake));
        }
        for s in [&r.xt_yt, &r.xit_xt, &r.xit_xi, &r.xit_yt] {
            out.push(cell(Some(s.all)));
        }
        out
    }

    /// All scores as a flat list, for comparisons.
    pub fn scores(&self) -> Vec<Option<f64>> {
        let r = &self.retrieval;
        let mut out = vec![Some(self.classification.xi_yi), Some(self.classification.xit_yi)];
        for s in [&r.xt_yt, &r.xit_xt, &r.xit_xi, &r.xit_yt] {
            out.extend([s.real, s.fake, Some(s.all)]);
        }
        out
    }

    /// Largest absolute score difference, or `None` when absent cells disagree.
    pub fn max_abs_diff(&self, other: &PairTaskReport) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in self.scores().into_iter().zip(other.scores()) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return None,
            }
        }
        Some(worst)
    }
}

/// Writes labelled reports as CSV rows.
pub fn write_reports_csv<W: Write>(out: W, rows: &[(String, &PairTaskReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_COLUMNS)?;
    for (label, report) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(report.csv_cells());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn class_texts_or_derived(
    explicit: Option<Array2<f64>>,
    tuples: &[EmbeddingTuple],
) -> Result<Array2<f64>> {
    match explicit {
        Some(m) => Ok(m),
        None => crate::store::class_texts_from_tuples(tuples),
    }
}
