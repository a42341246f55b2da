use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

fn class_counts(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Usage(format!("auc labels must be 0 or 1, found {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Usage("auc scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("auc needs both classes, got {pos} positives and {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Rank-sum formulation, O(n log n).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps every quantity integral.
    let mut twice_rank_sum = 0u128;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let twice_avg_rank = (start + 1 + end + 1) as u128;
        let positives = order[start..=end].iter().filter(|&&i| labels[i] == 1.0).count() as u128;
        twice_rank_sum += twice_avg_rank * positives;
        start = end + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Direct O(P·N) pair count; reference for [`auc`].
pub fn auc_brute_force(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut twice = 0u128;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0.0 {
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}
