// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation quantities: AUROC, Spearman rank correlation, Jaccard overlap
//! of the score tails, and cosine similarity between directions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::direction::ProbeDirection;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::probes::ScoreVector;

/// Average ranks (1 = smallest score, ties share the mean of their ranks).
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn from_scores(scores: &[f64]) -> Self {
        Self {
            ranks: average_ranks(scores),
        }
    }
}

pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    ranks
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// `P(s+ > s-) + P(s+ = s-) / 2` from the rank-sum statistic.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn auroc_scores(scores: &ScoreVector, labels: &[bool]) -> Result<f64> {
    auroc(&scores.scores, labels)
}

/// Pearson correlation of average ranks. Constant inputs are an error.
pub fn spearman_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("spearman needs at least two examples"));
    }
    check_finite(a)?;
    check_finite(b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantScores);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman correlation between two score vectors over the same ids.
pub fn spearman(a: &ScoreVector, b: &ScoreVector) -> Result<f64> {
    let b_aligned = align_to(a, b)?;
    spearman_slices(&a.scores, &b_aligned)
}

/// `b`'s scores reordered to follow `a`'s ids.
fn align_to(a: &ScoreVector, b: &ScoreVector) -> Result<Vec<f64>> {
    if a.ids.len() != b.ids.len() {
        return Err(Error::IdMismatch(format!(
            "{} vs {} examples",
            a.ids.len(),
            b.ids.len()
        )));
    }
    if a.ids == b.ids {
        return Ok(b.scores.clone());
    }
    let index: BTreeMap<&str, f64> = b
        .ids
        .iter()
        .map(String::as_str)
        .zip(b.scores.iter().copied())
        .collect();
    a.ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::IdMismatch(format!("{id:?} missing")))
        })
        .collect()
}

/// Percentile bootstrap interval for Spearman's rho over resampled examples.
///
/// Resamples on which either side is constant are skipped. Returns `None`
/// when no resample is usable.
pub fn spearman_bootstrap(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    let n = a.len();
    if n < 2 || n != b.len() || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; n];
    let mut rb = vec![0.0; n];
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            ra[i] = a[j];
            rb[i] = b[j];
        }
        if let Ok(r) = spearman_slices(&ra, &rb) {
            stats.push(r);
        }
    }
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Some((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// `ceil(p * n)`, tolerant of `p * n` landing a hair above an integer.
pub fn tail_size(p: f64, n: usize) -> Result<usize> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "tail fraction {p} outside (0, 1)"
        )));
    }
    let x = p * n as f64;
    let r = libm::round(x);
    let size = if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        libm::ceil(x) as usize
    };
    if size == 0 {
        return Err(Error::EmptyTail { p, n });
    }
    Ok(size)
}

/// Highest- and lowest-scoring `ceil(p * n)` ids; ties go to the smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSets {
    pub top: BTreeSet<String>,
    pub bottom: BTreeSet<String>,
    pub p: f64,
}

impl TailSets {
    pub fn new(scores: &ScoreVector, p: f64) -> Result<Self> {
        let n = scores.len();
        let size = tail_size(p, n)?;
        check_finite(&scores.scores)?;
        let s = &scores.scores;
        let ids = &scores.ids;
        let mut desc: Vec<usize> = (0..n).collect();
        desc.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then_with(|| ids[a].cmp(&ids[b])));
        let mut asc: Vec<usize> = (0..n).collect();
        asc.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then_with(|| ids[a].cmp(&ids[b])));
        Ok(Self {
            top: desc[..size].iter().map(|&i| ids[i].clone()).collect(),
            bottom: asc[..size].iter().map(|&i| ids[i].clone()).collect(),
            p,
        })
    }
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `(J_top, J_bottom)` between the tails two scorers induce on the same ids.
pub fn jaccard_tails(a: &ScoreVector, b: &ScoreVector, p: f64) -> Result<(f64, f64)> {
    let ids_a: BTreeSet<&String> = a.ids.iter().collect();
    let ids_b: BTreeSet<&String> = b.ids.iter().collect();
    if ids_a != ids_b || ids_a.len() != a.ids.len() || ids_b.len() != b.ids.len() {
        return Err(Error::IdMismatch(
            "tail sets need identical, unique ids".into(),
        ));
    }
    let ta = TailSets::new(a, p)?;
    let tb = TailSets::new(b, p)?;
    Ok((jaccard(&ta.top, &tb.top), jaccard(&ta.bottom, &tb.bottom)))
}

pub fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / libm::sqrt(nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine between two directions' weights; the bias is ignored.
pub fn cosine(u: &ProbeDirection, v: &ProbeDirection) -> Result<f64> {
    if u.space != v.space {
        return Err(Error::SpaceMismatch(format!("{} vs {}", u.space, v.space)));
    }
    cosine_slices(&u.w, &v.w)
}
