//! Orthogonality-regularized linear projections of a frozen joint
//! image-text embedding space.
//!
//! A `k x d` matrix `W` is trained with signed symmetric cross-entropy terms
//! over five paired embedding kinds, plus a penalty `‖I - W Wᵀ‖_F`. The
//! `learn_to_spell` task keeps written-text information and discards visual
//! semantics; `forget_to_spell` does the reverse. The [`eval`] module scores
//! projections by retrieval, classification, typographic attacks and OCR
//! detection rates, and [`synth`] generates worlds with known subspaces.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod objectives;
pub mod projection;
pub mod registry;
pub mod store;
pub mod synth;
pub mod task;
pub mod train;

pub use error::{Error, Result};
pub use projection::ProjectionMatrix;
pub use store::{EmbeddingKind, EmbeddingMatrix, EmbeddingTuple};
pub use train::{train, TrainConfig};
