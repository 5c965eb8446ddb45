use std::collections::HashMap;
use std::hash::Hash;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax_rows, cosine_matrix, row_norms, NORM_EPS};
use crate::projection::ProjectionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Img2Txt,
    Txt2Img,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub top1_percent: f64,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub direction: Direction,
}

fn maybe_project(x: ArrayView2<f64>, p: Option<&ProjectionMatrix>) -> Result<Array2<f64>> {
    match p {
        Some(p) => p.project(x),
        None => Ok(x.to_owned()),
    }
}

/// Cosine similarities after optional projection; zero rows after projection score 0.
fn projected_cosines(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    p: Option<&ProjectionMatrix>,
) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "left side has dimension {}, right side {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let pa = maybe_project(a, p)?;
    let pb = maybe_project(b, p)?;
    Ok(cosine_matrix(pa.view(), pb.view()))
}

/// Percentage of queries whose most similar gallery row is their ground truth.
pub fn top1_retrieval(
    queries: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    ground_truth: &[usize],
    p: Option<&ProjectionMatrix>,
    direction: Direction,
) -> Result<RetrievalResult> {
    if gallery.nrows() == 0 {
        return Err(Error::InvalidArgument("empty gallery".into()));
    }
    if queries.nrows() == 0 {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    if ground_truth.len() != queries.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} ground-truth entries for {} queries",
            ground_truth.len(),
            queries.nrows()
        )));
    }
    if let Some(&g) = ground_truth.iter().find(|&&g| g >= gallery.nrows()) {
        return Err(Error::InvalidArgument(format!(
            "ground truth index {g} outside gallery of {}",
            gallery.nrows()
        )));
    }
    let sims = projected_cosines(queries, gallery, p)?;
    let hits = argmax_rows(sims.view())
        .iter()
        .zip(ground_truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(RetrievalResult {
        top1_percent: 100.0 * hits as f64 / queries.nrows() as f64,
        n_queries: queries.nrows(),
        n_gallery: gallery.nrows(),
        direction,
    })
}

/// Retrieval where queries and gallery candidates are matched by key.
///
/// The gallery keeps the first row of every distinct key; a query is correct
/// when its nearest gallery row carries the query's key.
pub fn top1_retrieval_by_key<K: Eq + Hash + Clone>(
    queries: ArrayView2<f64>,
    query_keys: &[K],
    candidates: ArrayView2<f64>,
    candidate_keys: &[K],
    p: Option<&ProjectionMatrix>,
) -> Result<RetrievalResult> {
    if candidate_keys.len() != candidates.nrows() || query_keys.len() != queries.nrows() {
        return Err(Error::DimensionMismatch("key count differs from row count".into()));
    }
    let mut slot: HashMap<K, usize> = HashMap::new();
    let mut keep = Vec::new();
    for (i, k) in candidate_keys.iter().enumerate() {
        slot.entry(k.clone()).or_insert_with(|| {
            keep.push(i);
            keep.len() - 1
        });
    }
    let gallery = candidates.select(ndarray::Axis(0), &keep);
    let truth = query_keys
        .iter()
        .map(|k| {
            slot.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidArgument("query key missing from gallery".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    top1_retrieval(queries, gallery.view(), &truth, p, Direction::Img2Txt)
}

/// Percentage of images whose most similar class text is their label.
pub fn top1_classification(
    images: ArrayView2<f64>,
    class_texts: ArrayView2<f64>,
    labels: &[usize],
    p: Option<&ProjectionMatrix>,
) -> Result<f64> {
    if class_texts.nrows() == 0 {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= class_texts.nrows()) {
        return Err(Error::InvalidArgument(format!(
            "label {l} outside {} classes",
            class_texts.nrows()
        )));
    }
    Ok(top1_retrieval(images, class_texts, labels, p, Direction::Img2Txt)?.top1_percent)
}

/// Cosine similarity of every image to every text, after optional projection.
pub fn similarity_matrix(
    images: ArrayView2<f64>,
    texts: ArrayView2<f64>,
    p: Option<&ProjectionMatrix>,
) -> Result<Array2<f64>> {
    for (side, m) in [("image", images), ("text", texts)] {
        if let Some(i) = row_norms(m).iter().position(|&n| n < NORM_EPS) {
            return Err(Error::InvalidArgument(format!("{side} row {i} is a zero vector")));
        }
    }
    projected_cosines(images, texts, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram_schmidt_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(seed: u64, r: usize, c: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((r, c), || n.sample(&mut rng))
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let q = gaussian(0, 50, 16);
        let truth: Vec<usize> = (0..50).collect();
        let r = top1_retrieval(q.view(), q.view(), &truth, None, Direction::Img2Txt).unwrap();
        assert_eq!(r.top1_percent, 100.0);
        assert_eq!((r.n_queries, r.n_gallery), (50, 50));
    }

    #[test]
    fn all_wrong_truth_scores_zero() {
        let e = Array2::<f64>::eye(6);
        let truth: Vec<usize> = (0..6).map(|i| (i + 1) % 6).collect();
        let r = top1_retrieval(e.view(), e.view(), &truth, None, Direction::Txt2Img).unwrap();
        assert_eq!(r.top1_percent, 0.0);
        let empty = Array2::<f64>::zeros((0, 6));
        assert!(top1_retrieval(e.view(), empty.view(), &[], None, Direction::Img2Txt).is_err());
    }

    #[test]
    fn retrieval_chance_level() {
        let mut scores = Vec::new();
        for seed in 0..20 {
            let q = gaussian(2 * seed, 1000, 512);
            let g = gaussian(2 * seed + 1, 1000, 512);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<usize> = (0..1000).map(|_| rand::Rng::random_range(&mut rng, 0..1000)).collect();
            scores.push(top1_retrieval(q.view(), g.view(), &truth, None, Direction::Img2Txt).unwrap().top1_percent);
        }
        let mean = scores.iter().sum::<f64>() / 20.0;
        assert!((mean - 0.1).abs() <= 0.3, "{mean}");
    }

    #[test]
    fn classification_basics() {
        let e = Array2::<f64>::eye(5);
        let labels: Vec<usize> = (0..5).collect();
        assert_eq!(top1_classification(e.view(), e.view(), &labels, None).unwrap(), 100.0);
        let shifted: Vec<usize> = (0..5).map(|i| (i + 1) % 5).collect();
        assert_eq!(top1_classification(e.view(), e.view(), &shifted, None).unwrap(), 0.0);
        let none = Array2::<f64>::zeros((0, 5));
        assert!(top1_classification(e.view(), none.view(), &labels, None).is_err());
        assert!(top1_classification(e.view(), e.view(), &[0, 1, 2, 3, 9], None).is_err());
    }

    #[test]
    fn classification_chance_level() {
        let mut total = 0.0;
        for seed in 0..50 {
            let images = gaussian(1000 + seed, 2000, 512);
            let classes = gaussian(5000 + seed, 365, 512);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..2000).map(|_| rand::Rng::random_range(&mut rng, 0..365)).collect();
            total += top1_classification(images.view(), classes.view(), &labels, None).unwrap();
        }
        let mean = total / 50.0;
        // Chance is 100/365 = 0.274; sd of the mean over 100k draws is about 0.017.
        assert!((mean - 100.0 / 365.0).abs() < 0.07, "{mean}");
    }

    #[test]
    fn key_retrieval_deduplicates_gallery() {
        let g = ndarray::array![[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]];
        let keys = ["a", "a", "b"];
        let r = top1_retrieval_by_key(g.view(), &keys, g.view(), &keys, None).unwrap();
        assert_eq!(r.top1_percent, 100.0);
        assert_eq!(r.n_gallery, 2);
    }

    #[test]
    fn similarity_matrix_cases() {
        let e = Array2::<f64>::eye(4);
        let s = similarity_matrix(e.view(), e.view(), None).unwrap();
        assert_eq!(s, Array2::<f64>::eye(4));

        let a = gaussian(3, 7, 9);
        let b = gaussian(4, 5, 9);
        let s = similarity_matrix(a.view(), b.view(), None).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for t in 0..9 {
                    dot += a[[i, t]] * b[[j, t]];
                    na += a[[i, t]] * a[[i, t]];
                    nb += b[[j, t]] * b[[j, t]];
                }
                assert!((s[[i, j]] - dot / (na.sqrt() * nb.sqrt())).abs() < 1e-6);
            }
        }
        let st = similarity_matrix(b.view(), a.view(), None).unwrap();
        assert!(s.t().iter().zip(st.iter()).all(|(x, y)| (x - y).abs() < 1e-6));

        // Texts live in the first two coordinates; the projection keeps the rest.
        let mut texts = Array2::<f64>::zeros((3, 6));
        texts[[0, 0]] = 1.0;
        texts[[1, 1]] = 1.0;
        texts[[2, 0]] = 0.5;
        texts[[2, 1]] = 0.5;
        let images = gaussian(5, 4, 6);
        let p = ProjectionMatrix::new(ndarray::array![
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        ])
        .unwrap();
        let z = similarity_matrix(images.view(), texts.view(), Some(&p)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));

        let zero = Array2::<f64>::zeros((1, 6));
        assert!(similarity_matrix(zero.view(), texts.view(), None).is_err());
    }

    #[test]
    fn orthonormal_rotation_keeps_scores() {
        let q = gaussian(6, 40, 12);
        let g = gaussian(7, 40, 12);
        let truth: Vec<usize> = (0..40).collect();
        let rot = ProjectionMatrix::new(gram_schmidt_rows(gaussian(8, 12, 12).view()).unwrap()).unwrap();
        let a = top1_retrieval(q.view(), g.view(), &truth, None, Direction::Img2Txt).unwrap();
        let b = top1_retrieval(q.view(), g.view(), &truth, Some(&rot), Direction::Img2Txt).unwrap();
        assert_eq!(a.top1_percent, b.top1_percent);
    }
}
