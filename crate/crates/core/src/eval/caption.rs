//! Caption metrics: correlation with human ratings and pairwise preference accuracy.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::embed::{Category, Choice, PairedCorpus, PreferencePair, SimilarityConfig};
use crate::error::{Error, Result};
use crate::eval::kendall::{kendall_tau_b, kendall_tau_c, TauReport, TauVariant};
use crate::similarity::{
    ref_based_clip, ref_based_dn, ref_based_dn_star, PairScorer, RefScoreInputs, ScoringContext,
};

/// How references enter the caption score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefMode {
    /// Reference-free: the configured pair measure alone.
    None,
    Clip,
    Dn,
    DnStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryAccuracy {
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceReport {
    pub per_category: BTreeMap<Category, CategoryAccuracy>,
    /// Unweighted mean over the categories present.
    pub mean: f64,
    /// Credit over all pairs pooled.
    pub pooled: f64,
    pub n_pairs: usize,
}

/// Credit for one pair: 1 if the higher score matches the human choice,
/// 0.5 on an exact tie, 0 otherwise.
pub fn preference_credit(score_a: f64, score_b: f64, choice: Choice) -> f64 {
    if score_a == score_b {
        0.5
    } else if (score_a > score_b) == (choice == Choice::A) {
        1.0
    } else {
        0.0
    }
}

/// Aggregates per-pair `(score_a, score_b)` into category accuracies.
pub fn preference_accuracy_from_scores(
    pairs: &[PreferencePair],
    scores: &[(f64, f64)],
) -> Result<PreferenceReport> {
    if pairs.is_empty() {
        return Err(Error::MissingPreferencePairs);
    }
    if pairs.len() != scores.len() {
        return Err(Error::LengthMismatch(pairs.len(), scores.len()));
    }
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    let mut pooled = 0.0;
    for (p, &(a, b)) in pairs.iter().zip(scores) {
        let credit = preference_credit(a, b, p.choice);
        let e = sums.entry(p.category).or_default();
        e.0 += credit;
        e.1 += 1;
        pooled += credit;
    }
    let per_category: BTreeMap<_, _> = sums
        .into_iter()
        .map(|(cat, (s, n))| {
            (
                cat,
                CategoryAccuracy {
                    accuracy: s / n as f64,
                    n,
                },
            )
        })
        .collect();
    let mean = per_category.values().map(|c| c.accuracy).sum::<f64>() / per_category.len() as f64;
    Ok(PreferenceReport {
        per_category,
        mean,
        pooled: pooled / pairs.len() as f64,
        n_pairs: pairs.len(),
    })
}

fn lookup<'a>(set: &'a crate::embed::EmbeddingSet, id: &str) -> Result<&'a [f64]> {
    set.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// Fraction of caption pairs where the higher-scored caption is the human's pick.
pub fn preference_accuracy(
    corpus: &PairedCorpus,
    cfg: &SimilarityConfig,
    ctx: ScoringContext<'_>,
) -> Result<PreferenceReport> {
    if corpus.preference_pairs.is_empty() {
        return Err(Error::MissingPreferencePairs);
    }
    let scorer = PairScorer::new(cfg, ctx)?;
    let scores = corpus
        .preference_pairs
        .iter()
        .map(|p| {
            let img = lookup(&corpus.image_set, &p.image_id)?;
            let a = scorer.score(img, lookup(&corpus.text_set, &p.a_id)?)?;
            let b = scorer.score(img, lookup(&corpus.text_set, &p.b_id)?)?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    preference_accuracy_from_scores(&corpus.preference_pairs, &scores)
}

/// Metric score of every rated candidate, in rating order.
pub fn caption_scores(
    corpus: &PairedCorpus,
    cfg: &SimilarityConfig,
    ctx: ScoringContext<'_>,
    ref_mode: RefMode,
) -> Result<Vec<f64>> {
    if corpus.ratings.is_empty() {
        return Err(Error::DegenerateInput("corpus has no ratings"));
    }
    let img = |id: &str| {
        corpus
            .image_set
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let txt = |id: &str| {
        corpus
            .text_set
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let scorer = match ref_mode {
        RefMode::None => Some(PairScorer::new(cfg, ctx)?),
        _ => None,
    };
    cfg.validate()?;
    let zeros = vec![0.0; corpus.text_set.dim()];
    let means = || -> Result<(&[f64], &[f64])> {
        let mx = ctx.mu_x.ok_or(Error::MissingRequirement("DN-ref", "an image mean"))?;
        let my = ctx.mu_y.ok_or(Error::MissingRequirement("DN-ref", "a text mean"))?;
        Ok((mx.values(), my.values()))
    };
    corpus
        .ratings
        .iter()
        .map(|r| {
            let image = img(&r.image_id)?;
            let candidate = txt(&r.candidate_id)?;
            if let Some(s) = &scorer {
                return s.score(image, candidate);
            }
            let references = r.references.iter().map(|c| txt(c)).collect::<Result<Vec<_>>>()?;
            match ref_mode {
                RefMode::Clip => ref_based_clip(&RefScoreInputs {
                    image,
                    candidate,
                    references,
                    mu_y: &zeros,
                }),
                RefMode::Dn | RefMode::DnStar => {
                    let (mx, my) = means()?;
                    let inputs = RefScoreInputs {
                        image,
                        candidate,
                        references,
                        mu_y: my,
                    };
                    if ref_mode == RefMode::Dn {
                        ref_based_dn(&inputs, mx, cfg.mean_factor)
                    } else {
                        ref_based_dn_star(&inputs, mx, cfg.mean_factor)
                    }
                }
                RefMode::None => unreachable!(),
            }
        })
        .collect()
}

/// Kendall correlation between human ratings and metric scores.
pub fn caption_correlation(
    corpus: &PairedCorpus,
    cfg: &SimilarityConfig,
    ctx: ScoringContext<'_>,
    ref_mode: RefMode,
    variant: TauVariant,
) -> Result<TauReport> {
    let metric = caption_scores(corpus, cfg, ctx, ref_mode)?;
    let human: Vec<f64> = corpus.ratings.iter().map(|r| r.human_score).collect();
    match variant {
        TauVariant::TauB => kendall_tau_b(&human, &metric),
        TauVariant::TauC => kendall_tau_c(&human, &metric),
    }
}
