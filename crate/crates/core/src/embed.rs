//! Value types shared by every scoring and evaluation routine.
//!
//! Embedding sets are immutable once built. Values are held as `f64` in
//! memory even though they arrive as `f32` on disk, so every reduction
//! (dot products, means, log-sum-exp) accumulates in 64-bit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|‖row‖ - 1|` for a row to count as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-5;
/// Rows with a norm below this cannot be normalized.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dot product accumulated left to right in `f64`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A single encoded image or text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub modality: Modality,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, modality: Modality, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        Ok(Self {
            id,
            modality,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Row-major matrix of embeddings from one modality, with unique row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    modality: Modality,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Builds a set from row-major `data` (`ids.len() * dim` values).
    ///
    /// The `normalized` flag is derived from the data: it is set when every
    /// row has unit norm within [`UNIT_NORM_TOL`].
    pub fn new(modality: Modality, dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (i, row) in data.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(ids[i].clone()));
            }
        }
        let normalized = !ids.is_empty()
            && data
                .chunks_exact(dim)
                .all(|row| (norm(row) - 1.0).abs() <= UNIT_NORM_TOL);
        Ok(Self {
            modality,
            dim,
            ids,
            data,
            index,
            normalized,
        })
    }

    pub fn from_embeddings(modality: Modality, rows: Vec<Embedding>) -> Result<Self> {
        let dim = rows.first().map(Embedding::dim).ok_or(Error::EmptySet)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.modality != modality {
                return Err(Error::ModalityMismatch {
                    expected: modality.as_str(),
                    found: row.modality.as_str(),
                });
            }
            if row.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.dim(),
                });
            }
            ids.push(row.id);
            data.extend(row.values);
        }
        Self::new(modality, dim, ids, data)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding {
            id: self.ids[i].clone(),
            modality: self.modality,
            values: self.row(i).to_vec(),
        }
    }

    /// New set holding the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.modality, self.dim, ids, data)
    }

    /// Re-checks unit norm on every row, ignoring the cached flag.
    pub fn require_unit_norm(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            if (norm(row) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm(self.ids[i].clone()));
            }
        }
        Ok(())
    }
}

/// Scales every row to unit L2 norm. Ids and order are preserved.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(set.data.len());
    for (i, row) in set.rows().enumerate() {
        let n = norm(row);
        if n < ZERO_NORM_EPS {
            return Err(Error::ZeroNormRow(set.ids[i].clone()));
        }
        data.extend(row.iter().map(|v| v / n));
    }
    let mut out = EmbeddingSet::new(set.modality, set.dim, set.ids.clone(), data)?;
    out.normalized = true;
    Ok(out)
}

/// Estimated modality mean together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanVector {
    values: Vec<f64>,
    modality: Modality,
    source_ids: Vec<String>,
    seed: Option<u64>,
}

impl MeanVector {
    /// Arithmetic mean of `indices` rows of `set`.
    pub(crate) fn from_rows(set: &EmbeddingSet, indices: &[usize], seed: Option<u64>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut acc = vec![0.0f64; set.dim()];
        for &i in indices {
            for (a, v) in acc.iter_mut().zip(set.row(i)) {
                *a += v;
            }
        }
        let n = indices.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(Self {
            values: acc,
            modality: set.modality(),
            source_ids: indices.iter().map(|&i| set.id(i).to_string()).collect(),
            seed,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.source_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Similarity measure selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Measure {
    S0,
    Dn,
    DnStar,
    FirstOrderExp,
    Geometric,
    Full,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::S0,
        Measure::Dn,
        Measure::DnStar,
        Measure::FirstOrderExp,
        Measure::Geometric,
        Measure::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::S0 => "S0",
            Measure::Dn => "DN",
            Measure::DnStar => "DN_STAR",
            Measure::FirstOrderExp => "FIRST_ORDER_EXP",
            Measure::Geometric => "GEOMETRIC",
            Measure::Full => "FULL",
        }
    }

    pub fn needs_means(self) -> bool {
        matches!(
            self,
            Measure::Dn | Measure::DnStar | Measure::FirstOrderExp | Measure::Geometric
        )
    }

    pub fn needs_negatives(self) -> bool {
        matches!(self, Measure::Full)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace(['-', '*'], "_");
        let key = if s.trim().ends_with('*') {
            "DN_STAR".to_string()
        } else {
            key
        };
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown measure `{s}`")))
    }
}

/// Scoring knobs. Construct with [`SimilarityConfig::new`] for the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub measure: Measure,
    pub tau: f64,
    pub mean_factor: f64,
    pub normalize_on_load: bool,
}

impl SimilarityConfig {
    pub const DEFAULT_TAU: f64 = 0.01;
    pub const DEFAULT_MEAN_FACTOR: f64 = 0.5;

    pub fn new(measure: Measure) -> Self {
        Self {
            measure,
            tau: Self::DEFAULT_TAU,
            mean_factor: Self::DEFAULT_MEAN_FACTOR,
            normalize_on_load: true,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_mean_factor(mut self, factor: f64) -> Self {
        self.mean_factor = factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if !(self.mean_factor > 0.0 && self.mean_factor <= 1.0) {
            return Err(Error::InvalidMeanFactor(self.mean_factor));
        }
        Ok(())
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self::new(Measure::Dn)
    }
}

/// A human rating of one candidate caption, with its references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub image_id: String,
    pub candidate_id: String,
    pub human_score: f64,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

/// Caption-pair origin classes of the four-way preference benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    HC,
    HI,
    HM,
    MM,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::HC, Category::HI, Category::HM, Category::MM];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub image_id: String,
    pub a_id: String,
    pub b_id: String,
    pub choice: Choice,
    pub category: Category,
}

/// Cross-modal ground truth over an image set and a text set.
///
/// `links` maps image ids to their correct text ids; `labels` maps image ids
/// to the id of their class prompt in `class_prompts`.
#[derive(Debug, Clone)]
pub struct PairedCorpus {
    pub image_set: EmbeddingSet,
    pub text_set: EmbeddingSet,
    pub links: BTreeMap<String, BTreeSet<String>>,
    pub class_prompts: Option<EmbeddingSet>,
    pub labels: Option<BTreeMap<String, String>>,
    pub ratings: Vec<Rating>,
    pub preference_pairs: Vec<PreferencePair>,
}

impl PairedCorpus {
    pub fn new(
        image_set: EmbeddingSet,
        text_set: EmbeddingSet,
        links: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        let corpus = Self {
            image_set,
            text_set,
            links,
            class_prompts: None,
            labels: None,
            ratings: Vec::new(),
            preference_pairs: Vec::new(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn with_classes(
        mut self,
        class_prompts: EmbeddingSet,
        labels: BTreeMap<String, String>,
    ) -> Result<Self> {
        self.class_prompts = Some(class_prompts);
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_ratings(mut self, ratings: Vec<Rating>) -> Result<Self> {
        self.ratings = ratings;
        self.validate()?;
        Ok(self)
    }

    pub fn with_preferences(mut self, pairs: Vec<PreferencePair>) -> Result<Self> {
        self.preference_pairs = pairs;
        self.validate()?;
        Ok(self)
    }

    /// Checks that every referenced id resolves and that link sets are non-empty.
    pub fn validate(&self) -> Result<()> {
        expect_modality(&self.image_set, Modality::Image)?;
        expect_modality(&self.text_set, Modality::Text)?;
        if self.image_set.dim() != self.text_set.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.image_set.dim(),
                got: self.text_set.dim(),
            });
        }
        let img = |id: &str| {
            self.image_set
                .index_of(id)
                .map(|_| ())
                .ok_or_else(|| Error::UnknownId(id.to_string()))
        };
        let txt = |id: &str| {
            self.text_set
                .index_of(id)
                .map(|_| ())
                .ok_or_else(|| Error::UnknownId(id.to_string()))
        };
        for (q, cands) in &self.links {
            img(q)?;
            if cands.is_empty() {
                return Err(Error::MissingLink(q.clone()));
            }
            for c in cands {
                txt(c)?;
            }
        }
        match (&self.labels, &self.class_prompts) {
            (Some(labels), Some(prompts)) => {
                expect_modality(prompts, Modality::Text)?;
                for (image, class) in labels {
                    img(image)?;
                    if prompts.index_of(class).is_none() {
                        return Err(Error::UnknownLabel(class.clone()));
                    }
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "labels and class prompts must be given together".into(),
                ))
            }
        }
        for r in &self.ratings {
            img(&r.image_id)?;
            txt(&r.candidate_id)?;
            for c in &r.references {
                txt(c)?;
            }
        }
        for p in &self.preference_pairs {
            img(&p.image_id)?;
            txt(&p.a_id)?;
            txt(&p.b_id)?;
        }
        Ok(())
    }

    /// Links inverted to text id → image ids.
    pub fn text_links(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (img, txts) in &self.links {
            for t in txts {
                out.entry(t.clone()).or_default().insert(img.clone());
            }
        }
        out
    }
}

pub(crate) fn expect_modality(set: &EmbeddingSet, modality: Modality) -> Result<()> {
    if set.modality() != modality {
        return Err(Error::ModalityMismatch {
            expected: modality.as_str(),
            found: set.modality().as_str(),
        });
    }
    Ok(())
}

/// Queries × candidates score table, higher meaning more similar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    query_ids: Vec<String>,
    candidate_ids: Vec<String>,
    query_modality: Modality,
    scores: Vec<f64>,
    config: SimilarityConfig,
}

impl ScoreMatrix {
    pub fn new(
        query_ids: Vec<String>,
        candidate_ids: Vec<String>,
        query_modality: Modality,
        scores: Vec<f64>,
        config: SimilarityConfig,
    ) -> Result<Self> {
        if scores.len() != query_ids.len() * candidate_ids.len() {
            return Err(Error::ShapeMismatch);
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            let c = candidate_ids.len().max(1);
            return Err(Error::NonFinite(format!("score ({}, {})", pos / c, pos % c)));
        }
        Ok(Self {
            query_ids,
            candidate_ids,
            query_modality,
            scores,
            config,
        })
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn query_modality(&self) -> Modality {
        self.query_modality
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_candidates(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn get(&self, q: usize, c: usize) -> f64 {
        self.scores[q * self.candidate_ids.len() + c]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let c = self.candidate_ids.len();
        &self.scores[q * c..(q + 1) * c]
    }

    /// Row-major flattened scores.
    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}
