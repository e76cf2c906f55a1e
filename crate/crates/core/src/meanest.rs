//! Modality mean estimation and the sample-count ablation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::{EmbeddingSet, MeanVector, Modality, PairedCorpus, SimilarityConfig};
use crate::error::{Error, Result};
use crate::eval::{classify_topk, recall_at_k, Direction};
use crate::similarity::{score_matrix, ScoringContext};

/// Identity of the seeded generator used for every subsample.
pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng/seed_from_u64";

/// Generator for `seed`, with a separate stream per modality so image and
/// text subsamples drawn with the same seed are independent.
pub fn seeded_rng(seed: u64, modality: Modality) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match modality {
        Modality::Image => 0,
        Modality::Text => 1,
    });
    rng
}

/// `n` distinct row indices drawn uniformly without replacement, ascending.
pub fn sample_indices(set: &EmbeddingSet, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > set.len() {
        return Err(Error::SampleSizeOutOfRange { n, len: set.len() });
    }
    let mut rng = seeded_rng(seed, set.modality());
    let mut idx = rand::seq::index::sample(&mut rng, set.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Component-wise mean of every row.
pub fn exact_mean(set: &EmbeddingSet) -> Result<MeanVector> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let all: Vec<usize> = (0..set.len()).collect();
    MeanVector::from_rows(set, &all, None)
}

/// Mean over `n` rows sampled without replacement with `seed`.
///
/// Rows are summed in ascending index order, so `n == set.len()` reproduces
/// [`exact_mean`] bit for bit.
pub fn sampled_mean(set: &EmbeddingSet, n: usize, seed: u64) -> Result<MeanVector> {
    let idx = sample_indices(set, n, seed)?;
    MeanVector::from_rows(set, &idx, Some(seed))
}

/// Exact mean, or a seeded subsample mean when `sample` is `Some((n, seed))`.
pub fn estimate_mean(set: &EmbeddingSet, sample: Option<(usize, u64)>) -> Result<MeanVector> {
    match sample {
        Some((n, seed)) => sampled_mean(set, n, seed),
        None => exact_mean(set),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AblationTask {
    Retrieval { direction: Direction, ks: Vec<usize> },
    Classification { ks: Vec<usize> },
}

impl AblationTask {
    pub fn ks(&self) -> &[usize] {
        match self {
            AblationTask::Retrieval { ks, .. } | AblationTask::Classification { ks } => ks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub seed: u64,
    pub metrics: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub count: usize,
    pub runs: Vec<AblationRun>,
    pub mean: BTreeMap<usize, f64>,
    /// Population standard deviation across seeds.
    pub std: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub task: AblationTask,
    pub config: SimilarityConfig,
    pub generator: &'static str,
    /// Metrics with means taken over the full sets.
    pub exact: BTreeMap<usize, f64>,
    pub rows: Vec<AblationRow>,
}

/// Runs `task` once per (count, seed) with means re-estimated from `count`
/// samples, plus once with exact means.
///
/// For retrieval both modality means are subsampled. For classification the
/// image mean is subsampled and the text mean is the mean of all class
/// prompts.
pub fn ablate_sample_counts(
    corpus: &PairedCorpus,
    counts: &[usize],
    seeds: &[u64],
    task: &AblationTask,
    cfg: &SimilarityConfig,
) -> Result<AblationReport> {
    if counts.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("counts and seeds must be non-empty".into()));
    }
    // Classification takes the exact prompt mean, so only the image side is subsampled.
    let sampled: Vec<&EmbeddingSet> = match task {
        AblationTask::Retrieval { .. } => vec![&corpus.image_set, &corpus.text_set],
        AblationTask::Classification { .. } => {
            if corpus.class_prompts.is_none() {
                return Err(Error::InvalidConfig("classification needs class prompts".into()));
            }
            vec![&corpus.image_set]
        }
    };
    for &n in counts {
        for set in &sampled {
            if n == 0 || n > set.len() {
                return Err(Error::SampleSizeOutOfRange { n, len: set.len() });
            }
        }
    }

    let run = |sample: Option<(usize, u64)>| -> Result<BTreeMap<usize, f64>> {
        let mu_x = estimate_mean(&corpus.image_set, sample)?;
        match task {
            AblationTask::Retrieval { direction, ks } => {
                let mu_y = estimate_mean(&corpus.text_set, sample)?;
                let ctx = ScoringContext::with_means(&mu_x, &mu_y);
                let (scores, links) = match direction {
                    Direction::ImageToText => (
                        score_matrix(&corpus.image_set, &corpus.text_set, cfg, ctx)?,
                        corpus.links.clone(),
                    ),
                    Direction::TextToImage => (
                        score_matrix(&corpus.text_set, &corpus.image_set, cfg, ctx)?,
                        corpus.text_links(),
                    ),
                };
                Ok(recall_at_k(&scores, &links, ks)?.recalls)
            }
            AblationTask::Classification { ks } => {
                let prompts = corpus.class_prompts.as_ref().expect("checked above");
                let labels = corpus
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("classification needs labels".into()))?;
                let mu_y = exact_mean(prompts)?;
                let ctx = ScoringContext::with_means(&mu_x, &mu_y);
                Ok(classify_topk(&corpus.image_set, prompts, labels, ks, cfg, ctx)?.accuracy)
            }
        }
    };

    let exact = run(None)?;
    let cells: Vec<(usize, u64)> = counts
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&cell| run(Some(cell)))
        .collect::<Result<Vec<_>>>()?;

    let rows = counts
        .iter()
        .enumerate()
        .map(|(ci, &count)| {
            let runs: Vec<AblationRun> = seeds
                .iter()
                .enumerate()
                .map(|(si, &seed)| AblationRun {
                    seed,
                    metrics: results[ci * seeds.len() + si].clone(),
                })
                .collect();
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            for &k in task.ks() {
                let vals: Vec<f64> = runs.iter().map(|r| r.metrics[&k]).collect();
                let (m, s) = mean_std(&vals);
                mean.insert(k, m);
                std.insert(k, s);
            }
            AblationRow {
                count,
                runs,
                mean,
                std,
            }
        })
        .collect();

    Ok(AblationReport {
        task: task.clone(),
        config: *cfg,
        generator: GENERATOR,
        exact,
        rows,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}
