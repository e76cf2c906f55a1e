//! Similarity measures along the dot-product → DN → full-expectation chain.
//!
//! All measures follow "higher = more similar". The exponential measures
//! (`first_order_exp_sim`, `full_sim`) return the negated log of the
//! InfoNCE-style distance and are evaluated in the log domain.

use rayon::prelude::*;

use crate::embed::{
    dot, expect_modality, EmbeddingSet, MeanVector, Measure, Modality, ScoreMatrix,
    SimilarityConfig,
};
use crate::error::{Error, Result};

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTau(tau))
    }
}

/// `ln(e^u + e^v)` without overflow.
#[inline]
pub fn log_add_exp(u: f64, v: f64) -> f64 {
    let (hi, lo) = if u >= v { (u, v) } else { (v, u) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(xᵢ)` with max subtraction. Returns `-inf` for an empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Zeroth-order similarity: the plain dot product.
pub fn s0(img: &[f64], txt: &[f64]) -> Result<f64> {
    check_dims(img, txt)?;
    Ok(dot(img, txt))
}

/// Distribution-normalized similarity `(φ − f·μx)ᵀ(ψ − f·μy)`.
pub fn s1_dn(img: &[f64], txt: &[f64], mu_x: &[f64], mu_y: &[f64], factor: f64) -> Result<f64> {
    check_dims(img, txt)?;
    check_dims(img, mu_x)?;
    check_dims(txt, mu_y)?;
    Ok(img
        .iter()
        .zip(txt)
        .zip(mu_x.iter().zip(mu_y))
        .map(|((i, t), (mx, my))| (i - factor * mx) * (t - factor * my))
        .sum())
}

/// Arithmetic mean of [`s0`] and [`s1_dn`].
pub fn dn_star(img: &[f64], txt: &[f64], mu_x: &[f64], mu_y: &[f64], factor: f64) -> Result<f64> {
    let dn = s1_dn(img, txt, mu_x, mu_y, factor)?;
    let zero = s0(img, txt)?;
    Ok((zero + dn) / 2.0)
}

/// The two margins `a = φᵀ(μy − ψ)` and `b = (μx − φ)ᵀψ`.
fn margins(img: &[f64], txt: &[f64], mu_x: &[f64], mu_y: &[f64]) -> Result<(f64, f64)> {
    check_dims(img, txt)?;
    check_dims(img, mu_x)?;
    check_dims(txt, mu_y)?;
    let a = img.iter().zip(mu_y.iter().zip(txt)).map(|(p, (m, t))| p * (m - t)).sum();
    let b = mu_x.iter().zip(img.iter().zip(txt)).map(|(m, (p, t))| (m - p) * t).sum();
    Ok((a, b))
}

/// `−ln(e^{a/τ} + e^{b/τ})`, the first-order InfoNCE distance negated.
pub fn first_order_exp_sim(
    img: &[f64],
    txt: &[f64],
    mu_x: &[f64],
    mu_y: &[f64],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let (a, b) = margins(img, txt, mu_x, mu_y)?;
    Ok(-log_add_exp(a / tau, b / tau))
}

/// `−(a + b)/(2τ)`: the first-order distance with its arithmetic mean
/// replaced by a geometric mean, negated in the log domain.
pub fn geometric_sim(img: &[f64], txt: &[f64], mu_x: &[f64], mu_y: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let (a, b) = margins(img, txt, mu_x, mu_y)?;
    Ok(-(a + b) / (2.0 * tau))
}

/// Full-expectation similarity over explicit negative reference sets.
///
/// Computes `−ln(mean_i e^{φᵀ(ψ₁ᵢ − ψ)/τ} + mean_j e^{(φ₁ⱼ − φ)ᵀψ/τ})` as one
/// weighted log-sum-exp over both negative sets.
pub fn full_sim(
    img: &[f64],
    txt: &[f64],
    neg_images: &EmbeddingSet,
    neg_texts: &EmbeddingSet,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    check_dims(img, txt)?;
    if neg_images.is_empty() || neg_texts.is_empty() {
        return Err(Error::EmptyNegativeSet);
    }
    expect_modality(neg_images, Modality::Image)?;
    expect_modality(neg_texts, Modality::Text)?;
    if neg_images.dim() != img.len() || neg_texts.dim() != img.len() {
        return Err(Error::DimensionMismatch {
            expected: img.len(),
            got: if neg_images.dim() != img.len() {
                neg_images.dim()
            } else {
                neg_texts.dim()
            },
        });
    }
    let log_wt = -(neg_texts.len() as f64).ln();
    let log_wi = -(neg_images.len() as f64).ln();
    let text_terms = neg_texts.rows().map(move |y1| {
        let m: f64 = img.iter().zip(y1.iter().zip(txt)).map(|(p, (n, t))| p * (n - t)).sum();
        log_wt + m / tau
    });
    let image_terms = neg_images.rows().map(move |x1| {
        let m: f64 = x1.iter().zip(img.iter().zip(txt)).map(|(n, (p, t))| (n - p) * t).sum();
        log_wi + m / tau
    });
    let terms: Vec<f64> = text_terms.chain(image_terms).collect();
    Ok(-log_sum_exp(&terms))
}

/// Inputs to the reference-based caption scores.
#[derive(Debug, Clone)]
pub struct RefScoreInputs<'a> {
    pub image: &'a [f64],
    pub candidate: &'a [f64],
    pub references: Vec<&'a [f64]>,
    pub mu_y: &'a [f64],
}

impl RefScoreInputs<'_> {
    fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::EmptyReferences);
        }
        check_dims(self.image, self.candidate)?;
        check_dims(self.candidate, self.mu_y)?;
        for r in &self.references {
            check_dims(self.candidate, r)?;
        }
        Ok(())
    }
}

/// Harmonic mean, zero when either argument is non-positive.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// H-mean of the image-candidate dot product and the best candidate-reference dot product.
pub fn ref_based_clip(inputs: &RefScoreInputs<'_>) -> Result<f64> {
    inputs.validate()?;
    let image_term = dot(inputs.image, inputs.candidate);
    let ref_term = inputs
        .references
        .iter()
        .map(|r| dot(r, inputs.candidate))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(harmonic_mean(image_term, ref_term))
}

/// A-mean of `S₁(x₀, y₀)` and the best mean-centered candidate-reference product.
///
/// The text-text term subtracts the full `μy` from both sides, while `S₁`
/// uses `factor·μ`.
pub fn ref_based_dn(inputs: &RefScoreInputs<'_>, mu_x: &[f64], factor: f64) -> Result<f64> {
    inputs.validate()?;
    let image_term = s1_dn(inputs.image, inputs.candidate, mu_x, inputs.mu_y, factor)?;
    let ref_term = inputs
        .references
        .iter()
        .map(|r| {
            r.iter()
                .zip(inputs.candidate.iter().zip(inputs.mu_y))
                .map(|(c, (y, m))| (c - m) * (y - m))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((image_term + ref_term) / 2.0)
}

/// Mean of [`ref_based_clip`] and [`ref_based_dn`].
pub fn ref_based_dn_star(inputs: &RefScoreInputs<'_>, mu_x: &[f64], factor: f64) -> Result<f64> {
    Ok((ref_based_clip(inputs)? + ref_based_dn(inputs, mu_x, factor)?) / 2.0)
}

/// Means and negative sets a measure may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringContext<'a> {
    pub mu_x: Option<&'a MeanVector>,
    pub mu_y: Option<&'a MeanVector>,
    pub neg_images: Option<&'a EmbeddingSet>,
    pub neg_texts: Option<&'a EmbeddingSet>,
}

impl<'a> ScoringContext<'a> {
    pub fn with_means(mu_x: &'a MeanVector, mu_y: &'a MeanVector) -> Self {
        Self {
            mu_x: Some(mu_x),
            mu_y: Some(mu_y),
            ..Self::default()
        }
    }

    pub fn with_negatives(mut self, neg_images: &'a EmbeddingSet, neg_texts: &'a EmbeddingSet) -> Self {
        self.neg_images = Some(neg_images);
        self.neg_texts = Some(neg_texts);
        self
    }
}

/// A validated (config, context) pair that scores one image against one text.
#[derive(Debug, Clone)]
pub struct PairScorer<'a> {
    cfg: SimilarityConfig,
    mu_x: &'a [f64],
    mu_y: &'a [f64],
    negatives: Option<(&'a EmbeddingSet, &'a EmbeddingSet)>,
}

impl<'a> PairScorer<'a> {
    pub fn new(cfg: &SimilarityConfig, ctx: ScoringContext<'a>) -> Result<Self> {
        cfg.validate()?;
        let name = cfg.measure.as_str();
        let (mu_x, mu_y): (&[f64], &[f64]) = if cfg.measure.needs_means() {
            let mx = ctx.mu_x.ok_or(Error::MissingRequirement(name, "an image mean"))?;
            let my = ctx.mu_y.ok_or(Error::MissingRequirement(name, "a text mean"))?;
            if mx.modality() != Modality::Image || my.modality() != Modality::Text {
                return Err(Error::InvalidConfig(
                    "image mean must come from images and text mean from texts".into(),
                ));
            }
            check_dims(mx.values(), my.values())?;
            (mx.values(), my.values())
        } else {
            (&[], &[])
        };
        let negatives = if cfg.measure.needs_negatives() {
            let ni = ctx
                .neg_images
                .ok_or(Error::MissingRequirement(name, "negative images"))?;
            let nt = ctx
                .neg_texts
                .ok_or(Error::MissingRequirement(name, "negative texts"))?;
            if ni.is_empty() || nt.is_empty() {
                return Err(Error::EmptyNegativeSet);
            }
            Some((ni, nt))
        } else {
            None
        };
        Ok(Self {
            cfg: *cfg,
            mu_x,
            mu_y,
            negatives,
        })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.cfg
    }

    pub fn mu_x(&self) -> &[f64] {
        self.mu_x
    }

    pub fn mu_y(&self) -> &[f64] {
        self.mu_y
    }

    pub fn score(&self, img: &[f64], txt: &[f64]) -> Result<f64> {
        let SimilarityConfig {
            measure,
            tau,
            mean_factor,
            ..
        } = self.cfg;
        match measure {
            Measure::S0 => s0(img, txt),
            Measure::Dn => s1_dn(img, txt, self.mu_x, self.mu_y, mean_factor),
            Measure::DnStar => dn_star(img, txt, self.mu_x, self.mu_y, mean_factor),
            Measure::FirstOrderExp => first_order_exp_sim(img, txt, self.mu_x, self.mu_y, tau),
            Measure::Geometric => geometric_sim(img, txt, self.mu_x, self.mu_y, tau),
            Measure::Full => {
                let (ni, nt) = self.negatives.expect("validated in new");
                full_sim(img, txt, ni, nt, tau)
            }
        }
    }
}

/// Scores every (query, candidate) pair under `cfg`.
///
/// One of `queries`/`candidates` must be the image set and the other the text
/// set; each pair is scored with the image in the image role regardless of
/// direction. Rows are computed in parallel but each entry depends only on
/// its own pair, so the result does not depend on the thread count.
pub fn score_matrix(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &SimilarityConfig,
    ctx: ScoringContext<'_>,
) -> Result<ScoreMatrix> {
    let scorer = PairScorer::new(cfg, ctx)?;
    let image_queries = match (queries.modality(), candidates.modality()) {
        (Modality::Image, Modality::Text) => true,
        (Modality::Text, Modality::Image) => false,
        (q, _) => {
            return Err(Error::ModalityMismatch {
                expected: if q == Modality::Image { "text" } else { "image" },
                found: q.as_str(),
            })
        }
    };
    if queries.dim() != candidates.dim() {
        return Err(Error::DimensionMismatch {
            expected: queries.dim(),
            got: candidates.dim(),
        });
    }
    if cfg.normalize_on_load {
        queries.require_unit_norm()?;
        candidates.require_unit_norm()?;
    }

    let rows: Vec<Vec<f64>> = if cfg.measure == Measure::Full {
        let (ni, nt) = scorer.negatives.expect("validated");
        let (images, texts) = if image_queries {
            (queries, candidates)
        } else {
            (candidates, queries)
        };
        let full = FullExpectation::new(images, texts, ni, nt, cfg.tau)?;
        (0..queries.len())
            .into_par_iter()
            .map(|q| {
                (0..candidates.len())
                    .map(|c| {
                        if image_queries {
                            full.score(q, c)
                        } else {
                            full.score(c, q)
                        }
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let qrow = queries.row(q);
                (0..candidates.len())
                    .map(|c| {
                        let crow = candidates.row(c);
                        let r = if image_queries {
                            scorer.score(qrow, crow)
                        } else {
                            scorer.score(crow, qrow)
                        };
                        r.map_err(|e| Error::AtPair {
                            query: q,
                            candidate: c,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };
    ScoreMatrix::new(
        queries.ids().to_vec(),
        candidates.ids().to_vec(),
        queries.modality(),
        rows.concat(),
        *cfg,
    )
}

/// Batched evaluation of [`full_sim`] over all pairs of two sets.
///
/// The per-pair factor `e^{−φᵀψ/τ}` is common to both expectations, so
/// `full_sim = φᵀψ/τ − ln(e^{Lᵢ} + e^{Lₜ})` where `Lᵢ` is the log-mean-exp of
/// the image against the negative texts and `Lₜ` that of the negative images
/// against the text. Both are precomputed once per row.
struct FullExpectation<'a> {
    images: &'a EmbeddingSet,
    texts: &'a EmbeddingSet,
    image_side: Vec<f64>,
    text_side: Vec<f64>,
    tau: f64,
}

impl<'a> FullExpectation<'a> {
    fn new(
        images: &'a EmbeddingSet,
        texts: &'a EmbeddingSet,
        neg_images: &EmbeddingSet,
        neg_texts: &EmbeddingSet,
        tau: f64,
    ) -> Result<Self> {
        check_tau(tau)?;
        expect_modality(neg_images, Modality::Image)?;
        expect_modality(neg_texts, Modality::Text)?;
        for s in [neg_images, neg_texts] {
            if s.dim() != images.dim() {
                return Err(Error::DimensionMismatch {
                    expected: images.dim(),
                    got: s.dim(),
                });
            }
        }
        let log_mean_exp = |v: &[f64], negs: &EmbeddingSet| {
            let logits: Vec<f64> = negs.rows().map(|n| dot(v, n) / tau).collect();
            log_sum_exp(&logits) - (negs.len() as f64).ln()
        };
        let image_side = (0..images.len())
            .into_par_iter()
            .map(|i| log_mean_exp(images.row(i), neg_texts))
            .collect();
        let text_side = (0..texts.len())
            .into_par_iter()
            .map(|t| log_mean_exp(texts.row(t), neg_images))
            .collect();
        Ok(Self {
            images,
            texts,
            image_side,
            text_side,
            tau,
        })
    }

    fn score(&self, img: usize, txt: usize) -> f64 {
        dot(self.images.row(img), self.texts.row(txt)) / self.tau
            - log_add_exp(self.image_side[img], self.text_side[txt])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn s0_examples() {
        assert_eq!(s0(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(s0(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((s0(&[0.6, 0.8], &[0.8, 0.6]).unwrap() - 0.96).abs() < 1e-15);
        assert!(matches!(s0(&[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn s1_dn_examples() {
        let z = [0.0, 0.0];
        let h = [0.5, 0.5];
        assert_eq!(s1_dn(&[1.0, 0.0], &[1.0, 0.0], &z, &z, 0.5).unwrap(), 1.0);
        assert!((s1_dn(&[1.0, 0.0], &[1.0, 0.0], &h, &h, 0.5).unwrap() - 0.625).abs() < 1e-15);
        assert!((s1_dn(&[1.0, 0.0], &[0.0, 1.0], &h, &h, 0.5).unwrap() + 0.375).abs() < 1e-15);
    }

    #[test]
    fn dn_star_examples() {
        let z = [0.0, 0.0];
        let h = [0.5, 0.5];
        assert!((dn_star(&[1.0, 0.0], &[1.0, 0.0], &h, &h, 0.5).unwrap() - 0.8125).abs() < 1e-15);
        assert!((dn_star(&[1.0, 0.0], &[0.0, 1.0], &h, &h, 0.5).unwrap() + 0.1875).abs() < 1e-15);
        assert_eq!(dn_star(&[0.3, 0.7], &[0.2, 0.1], &z, &z, 0.5).unwrap(), s0(&[0.3, 0.7], &[0.2, 0.1]).unwrap());
    }

    #[test]
    fn first_order_examples() {
        let z = [0.0, 0.0];
        assert!((first_order_exp_sim(&z, &z, &z, &z, 1.0).unwrap() + LN2).abs() < 1e-15);
        let v = first_order_exp_sim(&[1.0, 0.0], &[1.0, 0.0], &z, &z, 1.0).unwrap();
        assert!((v - (1.0 - LN2)).abs() < 1e-15);
        assert!((v - 0.3069).abs() < 1e-4);
        let v = first_order_exp_sim(&[1.0, 0.0], &[1.0, 0.0], &z, &z, 0.01).unwrap();
        assert!((v - (100.0 - LN2)).abs() < 1e-12);
        assert_eq!(
            first_order_exp_sim(&z, &z, &z, &z, -1.0),
            Err(Error::NonPositiveTau(-1.0))
        );
    }

    #[test]
    fn geometric_examples() {
        let z = [0.0, 0.0];
        let h = [0.5, 0.5];
        let v = geometric_sim(&[0.6, 0.8], &[0.8, 0.6], &z, &z, 0.5).unwrap();
        assert!((v - 0.96 / 0.5).abs() < 1e-14);
        let g = geometric_sim(&[1.0, 0.0], &[1.0, 0.0], &h, &h, 1.0).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        let s1 = s1_dn(&[1.0, 0.0], &[1.0, 0.0], &h, &h, 0.5).unwrap();
        assert!((s1 - 0.25 * dot(&h, &h) - g).abs() < 1e-15);
        let g3 = geometric_sim(&[1.0, 0.0], &[1.0, 0.0], &h, &h, 3.0).unwrap();
        assert!((g3 - g / 3.0).abs() < 1e-15);
    }

    fn single(modality: Modality, v: &[f64]) -> EmbeddingSet {
        EmbeddingSet::new(modality, v.len(), vec!["n".into()], v.to_vec()).unwrap()
    }

    #[test]
    fn full_sim_self_negatives_is_minus_ln2() {
        let img = [0.6, 0.8];
        let txt = [0.8, 0.6];
        let v = full_sim(&img, &txt, &single(Modality::Image, &img), &single(Modality::Text, &txt), 0.05).unwrap();
        assert!((v + LN2).abs() < 1e-15);
    }

    #[test]
    fn full_sim_singletons_match_first_order() {
        let img = [0.6, 0.8];
        let txt = [0.0, 1.0];
        let nx = [0.1, -0.3];
        let ny = [0.7, 0.2];
        let full = full_sim(&img, &txt, &single(Modality::Image, &nx), &single(Modality::Text, &ny), 0.01).unwrap();
        let fo = first_order_exp_sim(&img, &txt, &nx, &ny, 0.01).unwrap();
        assert!((full - fo).abs() < 1e-12);
    }

    #[test]
    fn full_sim_rejects_empty_negatives() {
        let empty_i = EmbeddingSet::new(Modality::Image, 2, vec![], vec![]).unwrap();
        let t = single(Modality::Text, &[1.0, 0.0]);
        assert_eq!(
            full_sim(&[1.0, 0.0], &[1.0, 0.0], &empty_i, &t, 1.0),
            Err(Error::EmptyNegativeSet)
        );
    }

    #[test]
    fn log_add_exp_is_stable() {
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + LN2)).abs() < 1e-12);
        assert!((log_add_exp(-1000.0, 0.0)).abs() < 1e-300);
        assert!((log_sum_exp(&[0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ref_clip_examples() {
        assert_eq!(harmonic_mean(0.5, 0.5), 0.5);
        assert!((harmonic_mean(0.4, 0.6) - 0.48).abs() < 1e-15);
        assert_eq!(harmonic_mean(-0.1, 0.5), 0.0);
        let mu = [0.0, 0.0];
        let r1 = [1.0, 0.0];
        let r2 = [0.0, 1.0];
        let inputs = RefScoreInputs {
            image: &[0.6, 0.8],
            candidate: &[0.0, 1.0],
            references: vec![&r1, &r2],
            mu_y: &mu,
        };
        // image term 0.8, best reference 1.0
        let v = ref_based_clip(&inputs).unwrap();
        assert!((v - 2.0 * 0.8 / 1.8).abs() < 1e-15);
        let empty = RefScoreInputs {
            references: vec![],
            ..inputs
        };
        assert_eq!(ref_based_clip(&empty), Err(Error::EmptyReferences));
    }

    #[test]
    fn ref_dn_self_reference() {
        let mu = [0.0, 0.0];
        let cand = [0.6, 0.8];
        let inputs = RefScoreInputs {
            image: &[1.0, 0.0],
            candidate: &cand,
            references: vec![&cand],
            mu_y: &mu,
        };
        let s1 = s1_dn(&[1.0, 0.0], &cand, &mu, &mu, 0.5).unwrap();
        let v = ref_based_dn(&inputs, &mu, 0.5).unwrap();
        assert!((v - (s1 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ref_dn_uses_full_text_mean() {
        let mu_y = [0.2, 0.2];
        let mu_x = [0.0, 0.0];
        let r = [1.0, 0.0];
        let inputs = RefScoreInputs {
            image: &[0.0, 1.0],
            candidate: &[1.0, 0.0],
            references: vec![&r],
            mu_y: &mu_y,
        };
        // S1 = (0,1)·(0.9,-0.1) = -0.1; text term = (0.8,-0.2)·(0.8,-0.2) = 0.68
        let v = ref_based_dn(&inputs, &mu_x, 0.5).unwrap();
        assert!((v - (-0.1 + 0.68) / 2.0).abs() < 1e-15);
    }
}
