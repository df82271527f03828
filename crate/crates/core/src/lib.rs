//! Diffusion-map evaluation of source separation: perceptual separation (PS)
//! and perceptual match (PM) scores with truncation radii and finite-sample
//! half-widths.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod aggregate;
pub mod bounds;
pub mod correlation;
pub mod embeddings;
pub mod linalg;
pub mod manifold;
pub mod measures;
pub mod rng;
pub mod scalar;
pub mod special;

pub use aggregate::{aggregate, aggregate_average, aggregate_pesq, AggregationConfig, Method};
pub use bounds::{
    pm_frame_bound, ps_frame_bound, schur_residual, truncation_stats, BoundConfig, FrameBound,
    IntervalBound, SchurSplit,
};
pub use correlation::{nmi, nmi_thresholded, pcc, srcc};
pub use embeddings::{ClusterRows, EmbeddingError, EmbeddingMatrix, FrameLayout, ItemKind};
pub use manifold::{build_graph, decompose, DiffusionGraph, ManifoldError, SpectralEmbedding};
pub use measures::{
    compute_pm, compute_ps, fit_gamma, score_pm_frame, score_ps_frame, GammaFit, MeasureError,
    PmScore, PsScore,
};
pub use scalar::Scalar;

pub type DiffusionGraphF64 = DiffusionGraph<f64>;
pub type DiffusionGraphF32 = DiffusionGraph<f32>;
pub type SpectralEmbeddingF64 = SpectralEmbedding<f64>;
pub type SpectralEmbeddingF32 = SpectralEmbedding<f32>;
pub type EmbeddingMatrixF64 = EmbeddingMatrix<f64>;
pub type EmbeddingMatrixF32 = EmbeddingMatrix<f32>;
pub type PsScoreF64 = PsScore<f64>;
pub type PmScoreF64 = PmScore<f64>;
pub type GammaFitF64 = GammaFit<f64>;
