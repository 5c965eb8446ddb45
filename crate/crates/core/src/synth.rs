//! Synthetic embedding worlds with known visual and text subspaces.
//!
//! Two mutually orthogonal orthonormal bases are drawn in `R^d`. Classes live in
//! the visual subspace and words in the text subspace; every embedding kind is a
//! normalized mix of lifted centers plus isotropic noise. Because the generating
//! subspaces are known exactly, a learned projection can be scored against them.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, gram_schmidt_rows};
use crate::projection::ProjectionMatrix;
use crate::store::{EmbeddingTuple, MAX_STRING_LEN, MIN_STRING_LEN};
use crate::train::TrainConfig;

/// Projections with a larger residual have no well-defined row space projector.
pub const RECOVERY_MAX_RESIDUAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldSpec {
    pub d: usize,
    pub k_vis: usize,
    pub k_txt: usize,
    /// Number of object classes.
    pub classes: usize,
    /// Vocabulary size; the first half is flagged as real words.
    pub vocab: usize,
    pub noise_sigma: f64,
    pub mix_a: f64,
    pub mix_b: f64,
    pub seed: u64,
    pub records: usize,
    /// Per-record spread of the visual latent around its class center, so
    /// that a photo and its text-overlaid copy share instance detail.
    pub instance_sigma: f64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            d: 64,
            k_vis: 16,
            k_txt: 16,
            classes: 20,
            vocab: 500,
            noise_sigma: 0.05,
            mix_a: std::f64::consts::FRAC_1_SQRT_2,
            mix_b: std::f64::consts::FRAC_1_SQRT_2,
            seed: 0,
            records: 100_000,
            instance_sigma: 0.1,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_vis == 0 || self.k_txt == 0 {
            return bad("k_vis and k_txt must be positive".into());
        }
        if self.k_vis + self.k_txt > self.d {
            return bad(format!(
                "k_vis + k_txt = {} exceeds d = {}",
                self.k_vis + self.k_txt,
                self.d
            ));
        }
        if self.classes < 2 || self.vocab < 2 {
            return bad("classes and vocab must both be at least 2".into());
        }
        // 26^3 + ... + 26^10 strings exist; only guard against absurd requests.
        if self.vocab > 10_000_000 {
            return bad("vocab too large".into());
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("instance_sigma", self.instance_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.mix_a.is_finite() && self.mix_b.is_finite()) || (self.mix_a == 0.0 && self.mix_b == 0.0) {
            return bad("mix_a and mix_b must be finite and not both zero".into());
        }
        if self.records == 0 {
            return bad("records must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `k_vis x d`, orthonormal rows.
    pub b_vis: Array2<f64>,
    /// `k_txt x d`, orthonormal rows, orthogonal to `b_vis`.
    pub b_txt: Array2<f64>,
    /// `C x k_vis` unit-norm class centers.
    pub class_centers: Array2<f64>,
    /// `V x k_txt` unit-norm word centers.
    pub word_centers: Array2<f64>,
    pub vocabulary: Vec<String>,
}

impl GroundTruth {
    pub fn lift_visual(&self, u: ArrayView1<f64>) -> Array1<f64> {
        u.dot(&self.b_vis)
    }

    pub fn lift_text(&self, u: ArrayView1<f64>) -> Array1<f64> {
        u.dot(&self.b_txt)
    }

    /// Noise-free class-label embeddings, `C x d`.
    pub fn class_texts(&self) -> Array2<f64> {
        let mut out = self.class_centers.dot(&self.b_vis);
        normalize_in_place(&mut out);
        out
    }

    pub fn text_projector(&self) -> ProjectionMatrix {
        ProjectionMatrix::new(self.b_txt.clone()).expect("orthonormal basis")
    }

    pub fn visual_projector(&self) -> ProjectionMatrix {
        ProjectionMatrix::new(self.b_vis.clone()).expect("orthonormal basis")
    }

    /// Orthonormal basis of the complement of the text subspace (`(d - k_txt) x d`).
    pub fn text_complement(&self, seed: u64) -> Array2<f64> {
        complement_basis(self.b_txt.view(), seed)
    }
}

fn normalize_in_place(m: &mut Array2<f64>) {
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
}

fn normalized(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, sigma: f64) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((r, c), || sigma * n.sample(rng))
}

/// Uniform length in `[min_len, max_len]`, i.i.d. uniform letters `a-z`.
pub fn sample_nonsense_string(rng: &mut impl Rng, min_len: usize, max_len: usize) -> String {
    let len = rng.random_range(min_len..=max_len);
    (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

/// Orthonormal rows spanning the orthogonal complement of `basis`'s row space.
pub fn complement_basis(basis: ArrayView2<f64>, seed: u64) -> Array2<f64> {
    let (k, d) = basis.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let extra = gaussian_matrix(&mut rng, d - k, d, 1.0);
        let stacked = concatenate(Axis(0), &[basis, extra.view()]).unwrap();
        if let Ok(q) = gram_schmidt_rows(stacked.view()) {
            return q.slice(s![k.., ..]).to_owned();
        }
    }
}

/// Training recipe calibrated for synthetic worlds. The task preset supplies
/// the loss terms; the bottleneck is the text subspace for `learn_to_spell`
/// and its complement for `forget_to_spell`. Cosines here span a far wider
/// range than in a trained joint embedding, so a lower logit scale keeps the
/// contrastive gradients in balance with the orthogonality penalty.
pub fn oracle_train_config(task: &str, spec: &SyntheticWorldSpec) -> Result<TrainConfig> {
    let mut c = TrainConfig::preset(task, spec.d)?;
    c.bottleneck = match task {
        "forget_to_spell" => spec.d - spec.k_txt,
        _ => spec.k_txt,
    };
    c.learning_rate = ORACLE_LEARNING_RATE;
    c.decay_every_steps = ORACLE_DECAY_EVERY;
    c.inverse_temperature = ORACLE_INVERSE_TEMPERATURE;
    c.validate()?;
    Ok(c)
}

pub const ORACLE_LEARNING_RATE: f64 = 1e-2;
pub const ORACLE_DECAY_EVERY: usize = 100;
pub const ORACLE_INVERSE_TEMPERATURE: f64 = 5.0;

/// Draws a world. Bit-deterministic per `spec.seed`.
pub fn generate_world(spec: &SyntheticWorldSpec) -> Result<(Vec<EmbeddingTuple>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d;

    let basis = loop {
        let g = gaussian_matrix(&mut rng, spec.k_vis + spec.k_txt, d, 1.0);
        if let Ok(q) = gram_schmidt_rows(g.view()) {
            break q;
        }
    };
    let b_vis = basis.slice(s![..spec.k_vis, ..]).to_owned();
    let b_txt = basis.slice(s![spec.k_vis.., ..]).to_owned();

    let mut class_centers = gaussian_matrix(&mut rng, spec.classes, spec.k_vis, 1.0);
    normalize_in_place(&mut class_centers);
    let mut word_centers = gaussian_matrix(&mut rng, spec.vocab, spec.k_txt, 1.0);
    normalize_in_place(&mut word_centers);

    let mut vocabulary = Vec::with_capacity(spec.vocab);
    let mut seen = std::collections::HashSet::new();
    while vocabulary.len() < spec.vocab {
        let w = sample_nonsense_string(&mut rng, MIN_STRING_LEN, MAX_STRING_LEN);
        if seen.insert(w.clone()) {
            vocabulary.push(w);
        }
    }

    let truth = GroundTruth {
        b_vis,
        b_txt,
        class_centers,
        word_centers,
        vocabulary,
    };

    let noise = Normal::new(0.0, 1.0).unwrap();
    let eps = |rng: &mut ChaCha8Rng| -> Array1<f64> {
        Array1::from_shape_simple_fn(d, || spec.noise_sigma * noise.sample(rng))
    };
    let to_f32 = |v: Array1<f64>| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let real_cutoff = spec.vocab.div_ceil(2);

    let mut tuples = Vec::with_capacity(spec.records);
    for r in 0..spec.records {
        let c = r % spec.classes;
        let w = rng.random_range(0..spec.vocab);
        let jitter = gaussian_matrix(&mut rng, 1, spec.k_vis, spec.instance_sigma);
        let visual_latent = &truth.class_centers.row(c) + &jitter.row(0);

        let class_vec = truth.lift_visual(truth.class_centers.row(c));
        let instance_vec = truth.lift_visual(visual_latent.view());
        let word_vec = truth.lift_text(truth.word_centers.row(w));

        let x_i = normalized(&instance_vec + &eps(&mut rng));
        let y_i = normalized(&class_vec + &eps(&mut rng));
        let x_t = normalized(&word_vec + &eps(&mut rng));
        let y_t = normalized(&word_vec + &eps(&mut rng));
        let x_it = normalized(&instance_vec * spec.mix_a + &word_vec * spec.mix_b + eps(&mut rng));

        tuples.push(EmbeddingTuple {
            x_i: to_f32(x_i),
            y_i: to_f32(y_i),
            x_t: to_f32(x_t),
            y_t: to_f32(y_t),
            x_it: to_f32(x_it),
            string: truth.vocabulary[w].clone(),
            is_real_word: w < real_cutoff,
            class_id: c as u32,
        });
    }
    Ok((tuples, truth))
}

/// `‖Π_P - Π_T‖_F` between the row space of `p` (re-orthonormalized) and the
/// span of the orthonormal rows of `target`.
pub fn subspace_recovery_error(p: &ProjectionMatrix, target: ArrayView2<f64>) -> Result<f64> {
    let residual = p.orthogonality_residual();
    if residual >= RECOVERY_MAX_RESIDUAL {
        return Err(Error::InvalidArgument(format!(
            "projection residual {residual:.4} >= {RECOVERY_MAX_RESIDUAL}; rows are not near-orthonormal"
        )));
    }
    if target.ncols() != p.d() {
        return Err(Error::DimensionMismatch(format!(
            "target basis has dimension {}, projection {}",
            target.ncols(),
            p.d()
        )));
    }
    let q = gram_schmidt_rows(p.weights())?;
    let pi_p = q.t().dot(&q);
    let pi_t = target.t().dot(&target);
    Ok(frobenius((pi_p - pi_t).view()))
}

/// Images of objects carrying misleading text, for typographic-attack checks.
#[derive(Debug, Clone)]
pub struct AttackWorld {
    /// One row per image.
    pub images: Array2<f64>,
    /// One row per label: the visual meaning of the class plus its spelling.
    pub label_texts: Array2<f64>,
    pub true_labels: Vec<usize>,
    pub attack_labels: Vec<usize>,
}

/// Each image shows class `c` (visual subspace) with the spelling of another
/// class `a` written on it (text subspace), weighted by `attack_strength`.
pub fn generate_attack_world(
    truth: &GroundTruth,
    images_per_pair: usize,
    attack_strength: f64,
    noise_sigma: f64,
    seed: u64,
) -> AttackWorld {
    let c = truth.class_centers.nrows();
    let d = truth.b_vis.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label_texts = Array2::zeros((c, d));
    for i in 0..c {
        let v = truth.lift_visual(truth.class_centers.row(i)) + truth.lift_text(truth.word_centers.row(i % truth.word_centers.nrows()));
        label_texts.row_mut(i).assign(&normalized(v));
    }
    let mut rows = Vec::new();
    let mut true_labels = Vec::new();
    let mut attack_labels = Vec::new();
    for t in 0..c {
        for a in (0..c).filter(|&a| a != t) {
            for _ in 0..images_per_pair {
                let v = truth.lift_visual(truth.class_centers.row(t))
                    + truth.lift_text(truth.word_centers.row(a % truth.word_centers.nrows())) * attack_strength
                    + gaussian_matrix(&mut rng, 1, d, noise_sigma).row(0);
                rows.push(normalized(v));
                true_labels.push(t);
                attack_labels.push(a);
            }
        }
    }
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    AttackWorld {
        images: concatenate(Axis(0), &views).unwrap(),
        label_texts,
        true_labels,
        attack_labels,
    }
}
