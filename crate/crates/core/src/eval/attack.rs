//! Typographic-attack accuracy over images with misleading text.

use std::io::Read;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::retrieval::similarity_matrix;
use crate::error::{Error, Result};
use crate::linalg::argmax_rows;
use crate::projection::ProjectionMatrix;
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub embedding: Vec<f64>,
    pub true_label_id: usize,
    pub attack_label_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackScores {
    pub true_label_accuracy: f64,
    pub fooled_rate: f64,
}

fn stack(records: &[AttackRecord]) -> Result<Array2<f64>> {
    let d = records[0].embedding.len();
    let mut m = Array2::zeros((records.len(), d));
    for (i, r) in records.iter().enumerate() {
        if r.embedding.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "attack record {i} has dimension {}, expected {d}",
                r.embedding.len()
            )));
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&r.embedding));
    }
    Ok(m)
}

/// Percent of images matched to their true label, and to their attack label.
pub fn attack_accuracy(
    records: &[AttackRecord],
    label_texts: ArrayView2<f64>,
    p: Option<&ProjectionMatrix>,
) -> Result<AttackScores> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no attack records".into()));
    }
    let c = label_texts.nrows();
    for (i, r) in records.iter().enumerate() {
        if r.true_label_id >= c || r.attack_label_id >= c {
            return Err(Error::InvalidArgument(format!(
                "attack record {i} references label {} / {} but only {c} labels exist",
                r.true_label_id, r.attack_label_id
            )));
        }
    }
    let images = stack(records)?;
    let sims = similarity_matrix(images.view(), label_texts, p)?;
    let pred = argmax_rows(sims.view());
    let n = records.len() as f64;
    let hits = records.iter().zip(&pred).filter(|(r, &p)| p == r.true_label_id).count();
    let fooled = records.iter().zip(&pred).filter(|(r, &p)| p == r.attack_label_id).count();
    Ok(AttackScores {
        true_label_accuracy: 100.0 * hits as f64 / n,
        fooled_rate: 100.0 * fooled as f64 / n,
    })
}

/// Joins image rows with a `row_index,true_label_id,attack_label_id` CSV map.
/// A header line is optional.
pub fn read_attack_records<R: Read>(images: &EmbeddingMatrix, map: R) -> Result<Vec<AttackRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(map);
    let rows = images.to_f64();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.get(0) == Some("row_index") {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let field = |k: usize| -> Result<usize> {
            rec[k].parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("field {} is not a non-negative integer: {:?}", k + 1, &rec[k]),
            })
        };
        let (row, t, a) = (field(0)?, field(1)?, field(2)?);
        if row >= rows.nrows() {
            return Err(Error::Parse {
                line,
                msg: format!("row_index {row} outside {} image rows", rows.nrows()),
            });
        }
        out.push(AttackRecord {
            embedding: rows.row(row).to_vec(),
            true_label_id: t,
            attack_label_id: a,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_attack_world, generate_world, SyntheticWorldSpec};

    fn records_from(images: &Array2<f64>, t: &[usize], a: &[usize]) -> Vec<AttackRecord> {
        images
            .rows()
            .into_iter()
            .zip(t.iter().zip(a))
            .map(|(r, (&t, &a))| AttackRecord {
                embedding: r.to_vec(),
                true_label_id: t,
                attack_label_id: a,
            })
            .collect()
    }

    #[test]
    fn identical_embeddings_give_extremes() {
        let labels = Array2::<f64>::eye(4);
        let t = [0, 1, 2, 3];
        let a = [1, 2, 3, 0];
        let at_true = records_from(&labels, &t, &a);
        let s = attack_accuracy(&at_true, labels.view(), None).unwrap();
        assert_eq!((s.true_label_accuracy, s.fooled_rate), (100.0, 0.0));

        let shifted: Array2<f64> = labels.select(ndarray::Axis(0), &a);
        let at_attack = records_from(&shifted, &t, &a);
        let s = attack_accuracy(&at_attack, labels.view(), None).unwrap();
        assert_eq!((s.true_label_accuracy, s.fooled_rate), (0.0, 100.0));
    }

    #[test]
    fn visual_projection_defends() {
        let (_, truth) = generate_world(&SyntheticWorldSpec {
            records: 20,
            ..Default::default()
        })
        .unwrap();
        let world = generate_attack_world(&truth, 1, 1.5, 0.02, 4);
        let recs = records_from(&world.images, &world.true_labels, &world.attack_labels);
        let base = attack_accuracy(&recs, world.label_texts.view(), None).unwrap();
        let defended = attack_accuracy(&recs, world.label_texts.view(), Some(&truth.visual_projector())).unwrap();
        assert!(defended.true_label_accuracy > base.true_label_accuracy, "{base:?} {defended:?}");
        assert!(defended.fooled_rate < base.fooled_rate, "{base:?} {defended:?}");
    }

    #[test]
    fn out_of_range_label() {
        let labels = Array2::<f64>::eye(2);
        let recs = vec![AttackRecord {
            embedding: vec![1.0, 0.0],
            true_label_id: 0,
            attack_label_id: 2,
        }];
        assert!(attack_accuracy(&recs, labels.view(), None).is_err());
        assert!(attack_accuracy(&[], labels.view(), None).is_err());
    }

    #[test]
    fn map_parsing() {
        let m = EmbeddingMatrix::new(Array2::<f32>::eye(3)).unwrap();
        let ok = "row_index,true_label_id,attack_label_id\n0,1,2\n2,0,1\n";
        let recs = read_attack_records(&m, ok.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].embedding, vec![0.0, 0.0, 1.0]);

        let bad = "row_index,true_label_id,attack_label_id\n0,1,2\n1,x,0\n";
        match read_attack_records(&m, bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_attack_records(&m, "7,0,0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
