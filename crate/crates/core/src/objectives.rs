//! Symmetric cross-entropy pair losses and the signed six-term objective.
//!
//! Each term compares two row-aligned embedding kinds after projection by
//! `W`. Rows are L2-normalized, scaled cosine logits `s * Â B̂ᵀ` are formed and
//! the matched pairs on the diagonal are scored in both directions. The
//! objective is `Σ sign_i δ_i L_i + γ R(W)` and its gradient with respect to
//! `W` is propagated analytically through normalization and both softmaxes.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::normalize_rows;
use crate::projection::{orthogonality_residual, residual_gradient};
use crate::store::{Batch, EmbeddingKind};

pub const NUM_TERMS: usize = 6;

/// Default logit scale, the saturated value of the frozen encoder.
pub const DEFAULT_INVERSE_TEMPERATURE: f64 = 100.0;

pub type PairMap = [(EmbeddingKind, EmbeddingKind); NUM_TERMS];

/// Term index to embedding pair.
pub const DEFAULT_PAIRS: PairMap = [
    (EmbeddingKind::XI, EmbeddingKind::YI),
    (EmbeddingKind::XIT, EmbeddingKind::YI),
    (EmbeddingKind::XT, EmbeddingKind::YT),
    (EmbeddingKind::XIT, EmbeddingKind::XT),
    (EmbeddingKind::XIT, EmbeddingKind::YT),
    (EmbeddingKind::XIT, EmbeddingKind::XI),
];

#[derive(Debug, Clone, PartialEq)]
pub struct LossTermSpec {
    pub enabled: [bool; NUM_TERMS],
    /// `+1` minimizes a term, `-1` maximizes it.
    pub signs: [f64; NUM_TERMS],
    pub gamma: f64,
    pub inverse_temperature: f64,
    pub pairs: PairMap,
}

impl LossTermSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.inverse_temperature > 0.0 && self.inverse_temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be > 0, got {}",
                self.inverse_temperature
            )));
        }
        if self.signs.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::InvalidArgument("term signs must be +1 or -1".into()));
        }
        if self.is_empty() {
            return Err(Error::InvalidArgument(
                "empty objective: enable a loss term or set gamma > 0".into(),
            ));
        }
        Ok(())
    }

    /// No term enabled and no regularizer.
    pub fn is_empty(&self) -> bool {
        !self.enabled.iter().any(|&e| e) && self.gamma == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// `L_1..L_6`, `None` for disabled terms.
    pub terms: [Option<f64>; NUM_TERMS],
    /// `R(W)`, unweighted.
    pub regularizer: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the stored parts.
    pub fn recompute_total(&self, signs: &[f64; NUM_TERMS]) -> f64 {
        let mut total = 0.0;
        for (t, s) in self.terms.iter().zip(signs) {
            if let Some(v) = t {
                total += s * v;
            }
        }
        total + self.gamma * self.regularizer
    }
}

/// `s * Â B̂ᵀ` with a fixed summation order, so that swapping the inputs
/// yields exactly the transpose.
fn scaled_logits(a: ArrayView2<f64>, b: ArrayView2<f64>, s: f64) -> Array2<f64> {
    let n = a.nrows();
    let m = b.nrows();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let bj = b.row(j);
            let mut acc = 0.0;
            for (x, y) in ai.iter().zip(bj.iter()) {
                acc += x * y;
            }
            out[[i, j]] = s * acc;
        }
    }
    out
}

/// Row-wise softmax of `m` and the mean cross-entropy of the diagonal.
fn row_softmax_ce(m: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = m.nrows();
    let mut probs = Array2::zeros(m.raw_dim());
    let mut ce = 0.0;
    for i in 0..n {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &x in row.iter() {
            z += (x - max).exp();
        }
        for (p, &x) in probs.row_mut(i).iter_mut().zip(row.iter()) {
            *p = (x - max).exp() / z;
        }
        ce += max + z.ln() - row[i];
    }
    (probs, ce / n as f64)
}

fn column_softmax_ce(m: &Array2<f64>) -> (Array2<f64>, f64) {
    let t = m.t().to_owned();
    let (p, ce) = row_softmax_ce(&t);
    (p.reversed_axes(), ce)
}

/// Symmetric cross-entropy between row-aligned `a` and `b`.
pub fn symmetric_cross_entropy(a: ArrayView2<f64>, b: ArrayView2<f64>, s: f64) -> Result<f64> {
    check_pair(a, b)?;
    let (an, _) = normalize_rows(a)?;
    let (bn, _) = normalize_rows(b)?;
    let m = scaled_logits(an.view(), bn.view(), s);
    let (_, row_ce) = row_softmax_ce(&m);
    let (_, col_ce) = column_softmax_ce(&m);
    Ok(0.5 * (row_ce + col_ce))
}

/// Loss plus gradients with respect to the unnormalized `a` and `b`.
pub fn symmetric_cross_entropy_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    s: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_pair(a, b)?;
    let n = a.nrows();
    let (an, a_norms) = normalize_rows(a)?;
    let (bn, b_norms) = normalize_rows(b)?;
    let m = scaled_logits(an.view(), bn.view(), s);
    let (row_p, row_ce) = row_softmax_ce(&m);
    let (col_p, col_ce) = column_softmax_ce(&m);
    let loss = 0.5 * (row_ce + col_ce);

    // dL/dM = ((P_row - I) + (P_col - I)) / (2n)
    let mut g = row_p + col_p;
    for i in 0..n {
        g[[i, i]] -= 2.0;
    }
    g *= 0.5 / n as f64;

    let d_an = g.dot(&bn) * s;
    let d_bn = g.t().dot(&an) * s;
    Ok((
        loss,
        normalize_backward(&an, &a_norms, d_an),
        normalize_backward(&bn, &b_norms, d_bn),
    ))
}

/// Pulls a gradient back through row normalization: `(g - x̂ (x̂·g)) / ‖x‖`.
fn normalize_backward(xn: &Array2<f64>, norms: &ndarray::Array1<f64>, mut g: Array2<f64>) -> Array2<f64> {
    for ((mut gi, xi), &n) in g.rows_mut().into_iter().zip(xn.rows()).zip(norms.iter()) {
        let dot = gi.dot(&xi);
        gi.scaled_add(-dot, &xi);
        gi /= n;
    }
    g
}

fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "pair shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument("pair loss needs at least one row".into()));
    }
    Ok(())
}

fn check_batch(w: ArrayView2<f64>, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.dim() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "batch dimension {} but projection expects {}",
            batch.dim(),
            w.ncols()
        )));
    }
    Ok(())
}

fn project_kinds(w: ArrayView2<f64>, batch: &Batch, needed: &[bool; 5]) -> [Option<Array2<f64>>; 5] {
    std::array::from_fn(|k| needed[k].then(|| batch.mats[k].dot(&w.t())))
}

/// All six pair losses of a batch under `W`.
pub fn pair_losses(
    w: ArrayView2<f64>,
    batch: &Batch,
    pairs: &PairMap,
    s: f64,
) -> Result<[f64; NUM_TERMS]> {
    check_batch(w, batch)?;
    let projected = project_kinds(w, batch, &[true; 5]);
    let mut out = [0.0; NUM_TERMS];
    for (o, (ka, kb)) in out.iter_mut().zip(pairs) {
        let a = projected[ka.index()].as_ref().unwrap();
        let b = projected[kb.index()].as_ref().unwrap();
        *o = symmetric_cross_entropy(a.view(), b.view(), s)?;
    }
    Ok(out)
}

/// Objective value, breakdown, and `∂total/∂W`.
pub fn composite_loss(
    w: ArrayView2<f64>,
    batch: &Batch,
    spec: &LossTermSpec,
) -> Result<(LossBreakdown, Array2<f64>)> {
    spec.validate()?;
    check_batch(w, batch)?;

    let mut needed = [false; 5];
    for (on, (ka, kb)) in spec.enabled.iter().zip(&spec.pairs) {
        if *on {
            needed[ka.index()] = true;
            needed[kb.index()] = true;
        }
    }
    let projected = project_kinds(w, batch, &needed);
    let mut d_proj: [Option<Array2<f64>>; 5] = Default::default();

    let mut terms = [None; NUM_TERMS];
    let mut total = 0.0;
    for t in 0..NUM_TERMS {
        if !spec.enabled[t] {
            continue;
        }
        let (ka, kb) = spec.pairs[t];
        let a = projected[ka.index()].as_ref().unwrap();
        let b = projected[kb.index()].as_ref().unwrap();
        let (loss, da, db) = symmetric_cross_entropy_grad(a.view(), b.view(), spec.inverse_temperature)?;
        terms[t] = Some(loss);
        total += spec.signs[t] * loss;
        for (kind, g) in [(ka, da), (kb, db)] {
            match &mut d_proj[kind.index()] {
                Some(acc) => acc.scaled_add(spec.signs[t], &g),
                slot @ None => *slot = Some(g * spec.signs[t]),
            }
        }
    }

    let mut grad = Array2::<f64>::zeros(w.raw_dim());
    for (k, dp) in d_proj.iter().enumerate() {
        if let Some(dp) = dp {
            // P = X Wᵀ  =>  dW = dPᵀ X
            grad += &dp.t().dot(&batch.mats[k]);
        }
    }

    let regularizer = orthogonality_residual(w);
    if spec.gamma > 0.0 {
        total += spec.gamma * regularizer;
        grad.scaled_add(spec.gamma, &residual_gradient(w));
    }

    Ok((
        LossBreakdown {
            terms,
            regularizer,
            gamma: spec.gamma,
            total,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram_schmidt_rows;
    use crate::store::tests::random_tuple;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        let n = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((r, c), || n.sample(rng))
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Batch {
        let tuples: Vec<_> = (0..n).map(|_| random_tuple(rng, d, "abc")).collect();
        Batch::from_tuples(&tuples, &(0..n).collect::<Vec<_>>()).unwrap()
    }

    const LEARN_SIGNS: [f64; 6] = [-1.0, -1.0, 1.0, 1.0, 1.0, -1.0];

    fn spec(enabled: [bool; 6], signs: [f64; 6], gamma: f64, s: f64) -> LossTermSpec {
        LossTermSpec {
            enabled,
            signs,
            gamma,
            inverse_temperature: s,
            pairs: DEFAULT_PAIRS,
        }
    }

    #[test]
    fn sce_single_row_is_zero() {
        let a = ndarray::array![[0.3, -2.0]];
        let b = ndarray::array![[1.0, 5.0]];
        assert_eq!(symmetric_cross_entropy(a.view(), b.view(), 100.0).unwrap(), 0.0);
    }

    #[test]
    fn sce_uniform_logits() {
        let a = Array2::from_elem((4, 3), 1.0);
        let l = symmetric_cross_entropy(a.view(), a.view(), 100.0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sce_identity_closed_form() {
        // -log(e^s / (e^s + N - 1)) for orthonormal matched rows.
        let oracle = |s: f64, n: usize| -(s.exp() / (s.exp() + (n - 1) as f64)).ln();
        let e = Array2::<f64>::eye(2);
        let l = symmetric_cross_entropy(e.view(), e.view(), 1.0).unwrap();
        assert!((l - 0.3133).abs() < 1e-4);
        assert!((l - oracle(1.0, 2)).abs() < 1e-12);
        let e5 = Array2::<f64>::eye(5);
        let l5 = symmetric_cross_entropy(e5.view(), e5.view(), 3.0).unwrap();
        assert!((l5 - oracle(3.0, 5)).abs() < 1e-12);
    }

    #[test]
    fn sce_rejects_zero_rows_and_shape_mismatch() {
        let a = ndarray::array![[1.0, 0.0], [0.0, 0.0]];
        let b = Array2::<f64>::eye(2);
        assert!(matches!(symmetric_cross_entropy(a.view(), b.view(), 1.0), Err(Error::ZeroNorm(1))));
        assert!(symmetric_cross_entropy(b.view(), Array2::<f64>::eye(3).view(), 1.0).is_err());
    }

    #[test]
    fn sce_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a = gaussian(&mut rng, 9, 5);
            let b = gaussian(&mut rng, 9, 5);
            let ab = symmetric_cross_entropy(a.view(), b.view(), 100.0).unwrap();
            let ba = symmetric_cross_entropy(b.view(), a.view(), 100.0).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn sce_scale_and_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = gaussian(&mut rng, 8, 6);
            let b = gaussian(&mut rng, 8, 6);
            let base = symmetric_cross_entropy(a.view(), b.view(), 10.0).unwrap();
            let mut a2 = a.clone();
            for mut r in a2.rows_mut() {
                r *= rng.random_range(0.1..10.0);
            }
            let scaled = symmetric_cross_entropy(a2.view(), b.view(), 10.0).unwrap();
            assert!((base - scaled).abs() < 1e-6);

            let q = gram_schmidt_rows(gaussian(&mut rng, 6, 6).view()).unwrap();
            let rotated = symmetric_cross_entropy(a.dot(&q).view(), b.dot(&q).view(), 10.0).unwrap();
            assert!((base - rotated).abs() < 1e-5);
        }
    }

    #[test]
    fn sce_decreases_with_scale_at_alignment() {
        let e = Array2::<f64>::eye(4);
        let l: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&s| symmetric_cross_entropy(e.view(), e.view(), s).unwrap())
            .collect();
        assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
    }

    #[test]
    fn matched_pair_beats_unmatched() {
        let mut successes = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = random_batch(&mut rng, 64, 16);
            b.mats[EmbeddingKind::YT.index()] = b.mats[EmbeddingKind::XT.index()].clone();
            let l = pair_losses(Array2::<f64>::eye(16).view(), &b, &DEFAULT_PAIRS, 100.0).unwrap();
            if l[2] < l[3] {
                successes += 1;
            }
        }
        assert!(successes >= 95, "{successes}");
    }

    #[test]
    fn pair_losses_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = random_batch(&mut rng, 1, 8);
        let w = gaussian(&mut rng, 3, 8);
        assert_eq!(pair_losses(w.view(), &one, &DEFAULT_PAIRS, 100.0).unwrap(), [0.0; 6]);

        let b = random_batch(&mut rng, 10, 8);
        let got = pair_losses(Array2::<f64>::eye(8).view(), &b, &DEFAULT_PAIRS, 100.0).unwrap();
        for (t, (ka, kb)) in DEFAULT_PAIRS.iter().enumerate() {
            let want = symmetric_cross_entropy(b.get(*ka).view(), b.get(*kb).view(), 100.0).unwrap();
            assert!((got[t] - want).abs() < 1e-12);
        }
        assert!(pair_losses(Array2::<f64>::eye(7).view(), &b, &DEFAULT_PAIRS, 1.0).is_err());
    }

    #[test]
    fn regularizer_only_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_batch(&mut rng, 8, 16);
        let w = gaussian(&mut rng, 4, 16) * 0.25;
        let (br, g) = composite_loss(w.view(), &b, &spec([false; 6], LEARN_SIGNS, 0.5, 100.0)).unwrap();
        assert!((br.total - 0.5 * orthogonality_residual(w.view())).abs() < 1e-15);
        let want = residual_gradient(w.view()) * 0.5;
        assert!(g.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(composite_loss(w.view(), &b, &spec([false; 6], LEARN_SIGNS, 0.0, 100.0)).is_err());
    }

    #[test]
    fn task_signs_negate_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_batch(&mut rng, 8, 16);
        let w = gaussian(&mut rng, 4, 16);
        let forget = LEARN_SIGNS.map(|s| -s);
        let on = [true, false, true, true, true, false];
        let (l, _) = composite_loss(w.view(), &b, &spec(on, LEARN_SIGNS, 0.0, 100.0)).unwrap();
        let (f, _) = composite_loss(w.view(), &b, &spec(on, forget, 0.0, 100.0)).unwrap();
        assert_eq!(l.total, -f.total);
        assert!((l.recompute_total(&LEARN_SIGNS) - l.total).abs() < 1e-12);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-4;
        for case in 0..10 {
            let b = random_batch(&mut rng, 8, 16);
            let w = gaussian(&mut rng, 4, 16) * 0.25;
            let enabled: [bool; 6] = std::array::from_fn(|_| rng.random_bool(0.5));
            let signs: [f64; 6] = std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
            let sp = spec(enabled, signs, if case % 2 == 0 { 0.5 } else { 0.0 }, 10.0);
            if sp.is_empty() {
                continue;
            }
            let (_, g) = composite_loss(w.view(), &b, &sp).unwrap();
            let f = |w: &Array2<f64>| composite_loss(w.view(), &b, &sp).unwrap().0.total;
            let mut max_err: f64 = 0.0;
            for i in 0..4 {
                for j in 0..16 {
                    let mut wp = w.clone();
                    wp[[i, j]] += h;
                    let mut wm = w.clone();
                    wm[[i, j]] -= h;
                    let fd = (f(&wp) - f(&wm)) / (2.0 * h);
                    let scale = fd.abs().max(g[[i, j]].abs()).max(1e-2);
                    max_err = max_err.max((fd - g[[i, j]]).abs() / scale);
                }
            }
            assert!(max_err < 1e-3, "case {case}: {max_err}");
        }
    }

    #[test]
    fn composite_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_batch(&mut rng, 8, 16);
        let w = gaussian(&mut rng, 4, 16);
        let sp = spec([true; 6], LEARN_SIGNS, 0.5, 100.0);
        let (a1, g1) = composite_loss(w.view(), &b, &sp).unwrap();
        let (a2, g2) = composite_loss(w.view(), &b, &sp).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(g1, g2);
    }
}
