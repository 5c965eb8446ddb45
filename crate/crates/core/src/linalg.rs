//! Small dense helpers on top of ndarray.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Rows with norm below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Projected rows shorter than this count as empty when scoring. It sits
/// above the f32 rounding floor of unit-scale embeddings.
pub const ZERO_ROW_EPS: f64 = 1e-6;

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn row_norms(m: ArrayView2<f64>) -> Array1<f64> {
    m.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}

/// L2-normalizes every row, failing on a zero row.
pub fn normalize_rows(m: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = row_norms(m);
    if let Some(i) = norms.iter().position(|&n| n < NORM_EPS || !n.is_finite()) {
        return Err(Error::ZeroNorm(i));
    }
    let mut out = m.to_owned();
    for (mut r, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        r /= n;
    }
    Ok((out, norms))
}

/// L2-normalizes rows, leaving zero rows at zero.
pub fn normalize_rows_lenient(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n >= ZERO_ROW_EPS {
            r /= n;
        } else {
            r.fill(0.0);
        }
    }
    out
}

/// Modified Gram-Schmidt over the rows of `m`.
pub fn gram_schmidt_rows(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut q = m.to_owned();
    for i in 0..q.nrows() {
        for j in 0..i {
            let (done, mut rest) = q.view_mut().split_at(Axis(0), i);
            let qj = done.row(j);
            let mut qi = rest.row_mut(0);
            let proj = qi.dot(&qj);
            qi.scaled_add(-proj, &qj);
        }
        let mut qi = q.row_mut(i);
        let n = qi.dot(&qi).sqrt();
        if n < 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "row {i} is linearly dependent on earlier rows"
            )));
        }
        qi /= n;
    }
    Ok(q)
}

/// Cosine similarities between rows of `a` and rows of `b`, zero rows scoring 0.
pub fn cosine_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let an = normalize_rows_lenient(a);
    let bn = normalize_rows_lenient(b);
    an.dot(&bn.t())
}

/// Column of the maximum per row, ties resolved to the lowest index.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in r.iter().enumerate() {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}
