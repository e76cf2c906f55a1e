//! Distribution-normalized similarity scoring for cross-modal embeddings.
//!
//! The dot product between an image and a text embedding is the
//! zeroth-order approximation of the InfoNCE objective the encoders were
//! trained with. Subtracting half of each modality's mean before the dot
//! product ("distribution normalization", DN) is the first-order
//! approximation. This crate implements the whole chain:
//!
//! - [`similarity`]: `S0`, DN, DN*, the first-order exponential and
//!   geometric forms, the full-expectation oracle, and the reference-based
//!   caption scores.
//! - [`meanest`]: exact and seeded subsample mean estimation plus the
//!   sample-count ablation.
//! - [`eval`]: Recall@k, zero-shot Acc@k, Kendall τ_b/τ_c, caption
//!   preference accuracy and cross-measure rank agreement.
//! - [`synth`]: deterministic synthetic corpora with a planted modality gap.
//! - [`storeio`]: the `EMB1` binary format and JSONL manifests.

pub mod embed;
pub mod error;
pub mod eval;
pub mod meanest;
pub mod report;
pub mod similarity;
pub mod storeio;
pub mod synth;

pub use embed::{
    dot, l2_normalize, Category, Choice, Embedding, EmbeddingSet, MeanVector, Measure, Modality,
    PairedCorpus, PreferencePair, Rating, ScoreMatrix, SimilarityConfig,
};
pub use error::{Error, Result};
pub use meanest::{ablate_sample_counts, exact_mean, sampled_mean, AblationReport, AblationTask};
pub use similarity::{
    dn_star, first_order_exp_sim, full_sim, geometric_sim, ref_based_clip, ref_based_dn, s0, s1_dn,
    score_matrix, PairScorer, RefScoreInputs, ScoringContext,
};
pub use synth::{generate, SynthConfig};
