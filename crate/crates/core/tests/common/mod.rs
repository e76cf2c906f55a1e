#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dnorm_core::{EmbeddingSet, Modality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `n` random unit rows of `modality`, ids `{prefix}{i}`.
pub fn unit_set(rng: &mut ChaCha8Rng, modality: Modality, n: usize, dim: usize, prefix: &str) -> EmbeddingSet {
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    let data = (0..n).flat_map(|_| unit(rng, dim)).collect();
    EmbeddingSet::new(modality, dim, ids, data).unwrap()
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Concordant, discordant, x-only ties, y-only ties, joint ties, by scanning every pair.
pub fn brute_pair_counts(x: &[f64], y: &[f64]) -> (u64, u64, u64, u64, u64) {
    let (mut c, mut d, mut tx, mut ty, mut tb) = (0, 0, 0, 0, 0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => tb += 1,
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                _ if (dx > 0.0) == (dy > 0.0) => c += 1,
                _ => d += 1,
            }
        }
    }
    (c, d, tx, ty, tb)
}

pub fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (c, d, tx, ty, _) = brute_pair_counts(x, y);
    let (c, d, tx, ty) = (c as f64, d as f64, tx as f64, ty as f64);
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

pub fn brute_tau_c(x: &[f64], y: &[f64]) -> f64 {
    let (c, d, ..) = brute_pair_counts(x, y);
    let distinct = |v: &[f64]| {
        let mut s: Vec<f64> = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s.len()
    };
    let m = distinct(x).min(distinct(y)) as f64;
    let n = x.len() as f64;
    2.0 * m * (c as f64 - d as f64) / (n * n * (m - 1.0))
}

/// Candidates of one score row, best first, ties by ascending index.
pub fn sorted_order(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

/// Recall@k via a full sort of each row.
pub fn brute_recall(rows: &[Vec<f64>], targets: &[BTreeSet<usize>], k: usize) -> f64 {
    let hits = rows
        .iter()
        .zip(targets)
        .filter(|(row, t)| sorted_order(row)[..k.min(row.len())].iter().any(|c| t.contains(c)))
        .count();
    hits as f64 / rows.len() as f64
}

pub fn diag_links(n: usize, q: &str, c: &str) -> BTreeMap<String, BTreeSet<String>> {
    (0..n)
        .map(|i| (format!("{q}{i}"), BTreeSet::from([format!("{c}{i}")])))
        .collect()
}
