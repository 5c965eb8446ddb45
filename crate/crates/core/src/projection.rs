//! The learned projection `W` (k x d) and its orthogonality penalty.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, gram_schmidt_rows};
use crate::registry::Registry;
use crate::store::{put_f32s, write_file, ByteReader, FORMAT_VERSION};

pub const PROJECTION_MAGIC: &[u8; 8] = b"CLIPWPR1";

/// Below this residual the penalty gradient is defined as zero.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Rows of `w` are projection directions; target is `W Wᵀ = I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    w: Array2<f64>,
}

impl ProjectionMatrix {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let (k, d) = w.dim();
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "projection must satisfy 1 <= k <= d, got k={k}, d={d}"
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("projection has non-finite entries".into()));
        }
        Ok(Self { w })
    }

    pub fn identity(d: usize) -> Self {
        Self { w: Array2::eye(d) }
    }

    /// First `k` rows of the `d x d` identity.
    pub fn truncated_identity(k: usize, d: usize) -> Result<Self> {
        let mut w = Array2::zeros((k, d));
        for i in 0..k.min(d) {
            w[[i, i]] = 1.0;
        }
        Self::new(w)
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.w
    }

    /// Applies `W` to every row of `x`.
    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} columns, projection expects {}",
                x.ncols(),
                self.d()
            )));
        }
        Ok(x.dot(&self.w.t()))
    }

    pub fn orthogonality_residual(&self) -> f64 {
        orthogonality_residual(self.w.view())
    }

    pub fn residual_gradient(&self) -> Array2<f64> {
        residual_gradient(self.w.view())
    }
}

/// `I_k - W Wᵀ`.
fn gram_defect(w: ArrayView2<f64>) -> Array2<f64> {
    let mut e = -w.dot(&w.t());
    for i in 0..e.nrows() {
        e[[i, i]] += 1.0;
    }
    e
}

/// `‖I_k - W Wᵀ‖_F`.
pub fn orthogonality_residual(w: ArrayView2<f64>) -> f64 {
    frobenius(gram_defect(w).view())
}

/// Gradient of [`orthogonality_residual`]: `-2 (I - W Wᵀ) W / R`, zero at `R = 0`.
pub fn residual_gradient(w: ArrayView2<f64>) -> Array2<f64> {
    let e = gram_defect(w);
    let r = frobenius(e.view());
    if r < RESIDUAL_FLOOR {
        return Array2::zeros(w.raw_dim());
    }
    e.dot(&w) * (-2.0 / r)
}

/// How a fresh projection is drawn.
pub trait InitStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn init(&self, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;
}

/// I.i.d. `N(0, 1/d)` entries.
pub struct GaussianInit;

impl InitStrategy for GaussianInit {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn init(&self, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Array2::from_shape_simple_fn((k, d), || normal.sample(rng)))
    }
}

/// Gaussian draw with rows orthonormalized by Gram-Schmidt.
pub struct OrthonormalInit;

impl InitStrategy for OrthonormalInit {
    fn name(&self) -> &'static str {
        "orthonormal"
    }

    fn init(&self, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let g = GaussianInit.init(d, k, rng)?;
        gram_schmidt_rows(g.view())
    }
}

pub fn init_registry() -> Registry<dyn InitStrategy> {
    let mut r: Registry<dyn InitStrategy> = Registry::new("init mode");
    r.register("gaussian", Arc::new(GaussianInit));
    r.register("orthonormal", Arc::new(OrthonormalInit));
    r
}

/// Draws a `k x d` projection with the named strategy; deterministic per seed.
pub fn init_projection(d: usize, k: usize, seed: u64, mode: &str) -> Result<ProjectionMatrix> {
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "bottleneck k={k} must lie in 1..={d}"
        )));
    }
    let strategy = init_registry().get(mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProjectionMatrix::new(strategy.init(d, k, &mut rng)?)
}

/// Serializes to the `CLIPWPR1` layout. Weights are stored as f32.
pub fn encode_projection(p: &ProjectionMatrix, metadata: &str) -> Vec<u8> {
    let (k, d) = p.w.dim();
    let mut out = Vec::with_capacity(24 + 4 * k * d + metadata.len());
    out.extend_from_slice(PROJECTION_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    put_f32s(&mut out, p.w.iter().map(|&x| x as f32));
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out
}

pub fn decode_projection(bytes: &[u8]) -> Result<(ProjectionMatrix, String)> {
    let mut r = ByteReader::new(bytes, "CLIPWPR1");
    r.magic(PROJECTION_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let mut data = Vec::new();
    r.f32s(k * d, &mut data)?;
    let len = r.u32()? as usize;
    let metadata = r.utf8(len)?;
    r.finish()?;
    let w = Array2::from_shape_vec((k, d), data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((ProjectionMatrix::new(w)?, metadata))
}

pub fn save_projection(path: impl AsRef<Path>, p: &ProjectionMatrix, metadata: &str) -> Result<()> {
    write_file(path.as_ref(), &encode_projection(p, metadata))
}

pub fn load_projection(path: impl AsRef<Path>) -> Result<(ProjectionMatrix, String)> {
    decode_projection(&fs::read(path)?)
}
