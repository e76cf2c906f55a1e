//! Seeded synthetic paired embeddings with a planted modality gap.
//!
//! Each pair shares a latent direction `z` on the unit sphere. The image row
//! is `normalize(z + σε + ρ·u_img)` and the text row `normalize(z + σε' + ρ·u_txt)`,
//! where `ε, ε' ~ N(0, (NOISE_GAIN²/dim)·I)` and `u_img`, `u_txt` are fixed
//! random unit vectors. `σ·NOISE_GAIN` is therefore the expected noise norm,
//! independent of `dim`. The offsets are added before normalization, so they
//! survive as a nonzero mean on the sphere.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{norm, EmbeddingSet, Modality, PairedCorpus};
use crate::error::{Error, Result};

pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng/seed_from_u64";

/// Expected norm of the unscaled noise vector.
pub const NOISE_GAIN: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_pairs: usize,
    pub noise_sigma: f64,
    pub offset_rho: f64,
    /// When set, latents cluster around this many class centroids and class
    /// prompts are emitted.
    pub n_classes: Option<usize>,
    /// Expected norm of the latent's deviation from its class centroid.
    pub class_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_pairs: 1000,
            noise_sigma: 0.3,
            offset_rho: 0.4,
            n_classes: None,
            class_spread: 2.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// The default configuration with ten classes.
    pub fn classification() -> Self {
        Self {
            n_classes: Some(10),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.n_pairs < 1 {
            return bad("n_pairs must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !(self.offset_rho >= 0.0 && self.offset_rho.is_finite()) {
            return bad("offset_rho must be finite and non-negative");
        }
        if !(self.class_spread >= 0.0 && self.class_spread.is_finite()) {
            return bad("class_spread must be finite and non-negative");
        }
        if self.n_classes == Some(0) {
            return bad("n_classes must be at least 1");
        }
        Ok(())
    }
}

/// A generated corpus together with the planted offset directions.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: PairedCorpus,
    pub image_offset: Vec<f64>,
    pub text_offset: Vec<f64>,
}

struct Gen {
    rng: ChaCha8Rng,
    dim: usize,
}

impl Gen {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|_| scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn unit(&mut self) -> Result<Vec<f64>> {
        let v = self.gaussian(1.0);
        normalized(v, "random direction")
    }
}

fn normalized(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n < crate::embed::ZERO_NORM_EPS {
        return Err(Error::ZeroNormRow(what.to_string()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// `normalize(z + σε + ρu)`.
fn observe(g: &mut Gen, z: &[f64], sigma: f64, rho: f64, offset: &[f64], id: &str) -> Result<Vec<f64>> {
    let eps = g.gaussian(sigma * NOISE_GAIN / (g.dim as f64).sqrt());
    let v = z
        .iter()
        .zip(&eps)
        .zip(offset)
        .map(|((z, e), u)| z + e + rho * u)
        .collect();
    normalized(v, id)
}

pub fn image_id(i: usize) -> String {
    format!("img-{i:06}")
}

pub fn text_id(i: usize) -> String {
    format!("txt-{i:06}")
}

pub fn class_id(k: usize) -> String {
    format!("cls-{k:03}")
}

/// Generates a corpus fully determined by `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let dim = cfg.dim;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        dim,
    };
    let image_offset = g.unit()?;
    let text_offset = g.unit()?;
    let centroids = match cfg.n_classes {
        Some(k) => (0..k).map(|_| g.unit()).collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let mut img_data = Vec::with_capacity(cfg.n_pairs * dim);
    let mut txt_data = Vec::with_capacity(cfg.n_pairs * dim);
    let mut labels = BTreeMap::new();
    let mut links = BTreeMap::new();
    let spread = cfg.class_spread / (dim as f64).sqrt();
    for i in 0..cfg.n_pairs {
        let z = if centroids.is_empty() {
            g.unit()?
        } else {
            let k = g.rng.random_range(0..centroids.len());
            labels.insert(image_id(i), class_id(k));
            let eta = g.gaussian(spread);
            let v = centroids[k].iter().zip(&eta).map(|(c, e)| c + e).collect();
            normalized(v, "latent")?
        };
        img_data.extend(observe(&mut g, &z, cfg.noise_sigma, cfg.offset_rho, &image_offset, &image_id(i))?);
        txt_data.extend(observe(&mut g, &z, cfg.noise_sigma, cfg.offset_rho, &text_offset, &text_id(i))?);
        links.insert(image_id(i), BTreeSet::from([text_id(i)]));
    }

    let images = EmbeddingSet::new(Modality::Image, dim, (0..cfg.n_pairs).map(image_id).collect(), img_data)?;
    let texts = EmbeddingSet::new(Modality::Text, dim, (0..cfg.n_pairs).map(text_id).collect(), txt_data)?;
    let mut corpus = PairedCorpus::new(images, texts, links)?;

    if !centroids.is_empty() {
        let mut prompt_data = Vec::with_capacity(centroids.len() * dim);
        for (k, c) in centroids.iter().enumerate() {
            prompt_data.extend(observe(&mut g, c, cfg.noise_sigma, cfg.offset_rho, &text_offset, &class_id(k))?);
        }
        let prompts = EmbeddingSet::new(
            Modality::Text,
            dim,
            (0..centroids.len()).map(class_id).collect(),
            prompt_data,
        )?;
        corpus = corpus.with_classes(prompts, labels)?;
    }

    Ok(SynthCorpus {
        corpus,
        image_offset,
        text_offset,
    })
}
