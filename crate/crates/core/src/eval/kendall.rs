//! Kendall rank correlation with tie corrections.
//!
//! Pair counts come from a direct O(n²) scan for small inputs and from
//! Knight's merge-sort algorithm above [`DIRECT_LIMIT`]; both produce the
//! same integer counts.

use std::cmp::Ordering;

use serde::Serialize;

use crate::embed::ScoreMatrix;
use crate::error::{Error, Result};

/// Largest input length handled by the quadratic pair scan.
pub const DIRECT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    TauB,
    TauC,
}

/// Classification of all `n(n−1)/2` pairs.
///
/// `ties_x` and `ties_y` count pairs tied in exactly one list; pairs tied in
/// both are kept apart in `ties_both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_both: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.concordant + self.discordant + self.ties_x + self.ties_y + self.ties_both
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauReport {
    pub variant: TauVariant,
    pub value: f64,
    pub n: usize,
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_both: u64,
}

impl TauReport {
    fn new(variant: TauVariant, value: f64, n: usize, c: PairCounts) -> Self {
        Self {
            variant,
            value,
            n,
            concordant: c.concordant,
            discordant: c.discordant,
            ties_x: c.ties_x,
            ties_y: c.ties_y,
            ties_both: c.ties_both,
        }
    }
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite inputs")
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("need at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank correlation input".into()));
    }
    Ok(())
}

/// O(n²) pair classification.
pub fn pair_counts_direct(x: &[f64], y: &[f64]) -> PairCounts {
    let mut c = PairCounts::default();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = cmp(x[i], x[j]);
            let dy = cmp(y[i], y[j]);
            match (dx, dy) {
                (Ordering::Equal, Ordering::Equal) => c.ties_both += 1,
                (Ordering::Equal, _) => c.ties_x += 1,
                (_, Ordering::Equal) => c.ties_y += 1,
                (a, b) if a == b => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    c
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_sort_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_sort_inversions(l, bl) + merge_sort_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// O(n log n) pair classification (Knight 1966).
pub fn pair_counts_fast(x: &[f64], y: &[f64]) -> PairCounts {
    let n = x.len() as u64;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));

    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let tied_x = tied_pairs(&xs);
    let mut tied_xy = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]] {
            run += 1;
        } else {
            tied_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied_xy += run * (run - 1) / 2;

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; ys.len()];
    // After the (x, y) sort, every strict inversion in y is a discordant pair.
    let discordant = merge_sort_inversions(&mut ys, &mut buf);
    let tied_y = tied_pairs(&ys);

    let untied = n * n.saturating_sub(1) / 2 + tied_xy - tied_x - tied_y;
    PairCounts {
        concordant: untied - discordant,
        discordant,
        ties_x: tied_x - tied_xy,
        ties_y: tied_y - tied_xy,
        ties_both: tied_xy,
    }
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    if x.len() <= DIRECT_LIMIT {
        pair_counts_direct(x, y)
    } else {
        pair_counts_fast(x, y)
    }
}

/// τ_b = (C − D) / √((C + D + Tx)(C + D + Ty)).
pub fn kendall_tau_b(human: &[f64], metric: &[f64]) -> Result<TauReport> {
    validate(human, metric)?;
    let c = pair_counts(human, metric);
    let cd = (c.concordant + c.discordant) as f64;
    let denom = ((cd + c.ties_x as f64) * (cd + c.ties_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateInput("all values tied in one list"));
    }
    let value = (c.concordant as f64 - c.discordant as f64) / denom;
    Ok(TauReport::new(TauVariant::TauB, value, human.len(), c))
}

fn distinct(v: &[f64]) -> usize {
    let mut s = v.to_vec();
    s.sort_by(|a, b| cmp(*a, *b));
    s.dedup();
    s.len()
}

/// Stuart's τ_c = 2m(C − D) / (n²(m − 1)), m the smaller number of distinct values.
pub fn kendall_tau_c(human: &[f64], metric: &[f64]) -> Result<TauReport> {
    validate(human, metric)?;
    let m = distinct(human).min(distinct(metric));
    if m < 2 {
        return Err(Error::DegenerateInput("all values tied in one list"));
    }
    let c = pair_counts(human, metric);
    let n = human.len() as f64;
    let m = m as f64;
    let value = 2.0 * m * (c.concordant as f64 - c.discordant as f64) / (n * n * (m - 1.0));
    Ok(TauReport::new(TauVariant::TauC, value, human.len(), c))
}

/// τ_b between two score matrices over the same query/candidate ids, flattened row-major.
pub fn rank_agreement(a: &ScoreMatrix, b: &ScoreMatrix) -> Result<TauReport> {
    if a.query_ids() != b.query_ids() || a.candidate_ids() != b.candidate_ids() {
        return Err(Error::ShapeMismatch);
    }
    kendall_tau_b(a.as_slice(), b.as_slice())
}
