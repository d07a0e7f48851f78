//! Image-guided sonification in a shared multimodal embedding space.
//!
//! The crate operates on precomputed embeddings: it assigns library audio to
//! frames by cosine ranking, orchestrates caption-mediated audio generation
//! through external adapters, computes the cross-modal consistency metrics,
//! and runs the subjective/objective evaluation battery.

pub mod embedding;
pub mod eval;
pub mod metrics;
pub mod rating;
pub mod report;
pub mod retrieval;
pub mod store;
pub mod synth;

pub use embedding::{Embedding, EmbeddingError, Modality};
