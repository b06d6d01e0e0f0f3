//! Weakly-supervised temporal event localization with differentiable masks.
//!
//! Events are represented by learnable temporal masks over precomputed frame
//! embeddings. Masks are trained so that masked, pooled frame features align
//! with caption embeddings ([`loss`]), optionally helped by inter-masks aligned
//! with synthetic transition captions. Gradients are analytic ([`objective`]),
//! training uses AdamW ([`optim`]), and a simulator ([`simulator`]) plus a
//! localization evaluator ([`eval`]) provide a controllable test bed.

pub mod dataio;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod objective;
pub mod optim;
pub mod simulator;

pub use dataset::{Dataset, VideoSample};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use eval::{LocReport, Segment};
pub use loss::{LossBreakdown, LossConfig, PoolingMode};
pub use mask::{EngineConfig, Mask, MaskKind, MaskParams, RawMaskParams};
