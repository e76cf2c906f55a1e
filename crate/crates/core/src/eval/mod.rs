//! Downstream evaluators.

pub mod caption;
pub mod kendall;
pub mod retrieval;

pub use caption::{
    caption_correlation, caption_scores, preference_accuracy, preference_accuracy_from_scores,
    preference_credit, CategoryAccuracy, PreferenceReport, RefMode,
};
pub use kendall::{
    kendall_tau_b, kendall_tau_c, pair_counts, pair_counts_direct, pair_counts_fast,
    rank_agreement, PairCounts, TauReport, TauVariant,
};
pub use retrieval::{
    accuracy_from_scores, classify_topk, rank_of, recall_at_k, AccuracyReport, Direction,
    RecallReport,
};
