//! Rank statistics for evaluating predicted returns.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation. Zero when either input is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dim("correlation inputs differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::arg("correlation needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("correlation inputs must be finite".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dim("correlation inputs differ in length"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Fraction of pairs `a < b` with a strict ground-truth order on which
/// `predicted` orders the pair the same way.
pub fn pairwise_agreement(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dim("agreement inputs differ in length"));
    }
    let (mut hit, mut count) = (0usize, 0usize);
    for a in 0..truth.len() {
        for b in a + 1..truth.len() {
            if truth[a] == truth[b] {
                continue;
            }
            count += 1;
            if (truth[a] > truth[b]) == (predicted[a] > predicted[b]) && predicted[a] != predicted[b] {
                hit += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no strictly ordered pairs".into()));
    }
    Ok(hit as f64 / count as f64)
}
