//! Recall@k for cross-modal retrieval and Acc@k for zero-shot classification.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::embed::{expect_modality, EmbeddingSet, Modality, ScoreMatrix, SimilarityConfig};
use crate::error::{Error, Result};
use crate::similarity::{score_matrix, ScoringContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub direction: Direction,
    pub k_values: Vec<usize>,
    pub recalls: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub k_values: Vec<usize>,
    pub accuracy: BTreeMap<usize, f64>,
    pub n_images: usize,
    pub n_classes: usize,
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("k values must be non-empty and ≥ 1".into()));
    }
    Ok(())
}

/// Zero-based rank of candidate `target` within `row`, ties broken by
/// ascending candidate index.
pub fn rank_of(row: &[f64], target: usize) -> usize {
    let s = row[target];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < target))
        .count()
}

/// Best (smallest) rank over the correct candidates of each query.
fn best_ranks(scores: &ScoreMatrix, targets: &[Vec<usize>]) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .map(|(q, ts)| {
            let row = scores.row(q);
            ts.iter().map(|&t| rank_of(row, t)).min().expect("non-empty")
        })
        .collect()
}

fn fractions(ranks: &[usize], ks: &[usize]) -> BTreeMap<usize, f64> {
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / ranks.len().max(1) as f64)
        })
        .collect()
}

/// Fraction of queries with a correct candidate among the top `k`, for each `k`.
///
/// `links` maps each query id to its correct candidate ids.
pub fn recall_at_k(
    scores: &ScoreMatrix,
    links: &BTreeMap<String, BTreeSet<String>>,
    ks: &[usize],
) -> Result<RecallReport> {
    check_ks(ks)?;
    let cand_index: BTreeMap<&str, usize> = scores
        .candidate_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut targets = Vec::with_capacity(scores.n_queries());
    for q in scores.query_ids() {
        let set = links
            .get(q)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::MissingLink(q.clone()))?;
        let ts = set
            .iter()
            .map(|c| {
                cand_index
                    .get(c.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        targets.push(ts);
    }
    let ranks = best_ranks(scores, &targets);
    let direction = match scores.query_modality() {
        Modality::Image => Direction::ImageToText,
        Modality::Text => Direction::TextToImage,
    };
    Ok(RecallReport {
        direction,
        k_values: ks.to_vec(),
        recalls: fractions(&ranks, ks),
        n_queries: scores.n_queries(),
    })
}

/// Acc@k from a precomputed images × prompts score matrix.
pub fn accuracy_from_scores(
    scores: &ScoreMatrix,
    labels: &BTreeMap<String, String>,
    ks: &[usize],
) -> Result<AccuracyReport> {
    check_ks(ks)?;
    let prompt_index: BTreeMap<&str, usize> = scores
        .candidate_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let targets = scores
        .query_ids()
        .iter()
        .map(|img| {
            let class = labels
                .get(img)
                .ok_or_else(|| Error::UnknownLabel(format!("{img} (unlabeled)")))?;
            prompt_index
                .get(class.as_str())
                .map(|&p| vec![p])
                .ok_or_else(|| Error::UnknownLabel(class.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks = best_ranks(scores, &targets);
    Ok(AccuracyReport {
        k_values: ks.to_vec(),
        accuracy: fractions(&ranks, ks),
        n_images: scores.n_queries(),
        n_classes: scores.n_candidates(),
    })
}

/// Zero-shot classification: ranks class prompts for each image under `cfg`.
pub fn classify_topk(
    images: &EmbeddingSet,
    class_prompts: &EmbeddingSet,
    labels: &BTreeMap<String, String>,
    ks: &[usize],
    cfg: &SimilarityConfig,
    ctx: ScoringContext<'_>,
) -> Result<AccuracyReport> {
    expect_modality(images, Modality::Image)?;
    expect_modality(class_prompts, Modality::Text)?;
    let scores = score_matrix(images, class_prompts, cfg, ctx)?;
    accuracy_from_scores(&scores, labels, ks)
}
