use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Candidates sorted by score, highest first; equal scores keep ascending
/// item order.
pub fn rank_candidates(items: &[u32], scores: &[f64]) -> Vec<u32> {
    assert_eq!(items.len(), scores.len(), "one score per candidate");
    let mut order: Vec<(u32, f64)> = items.iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    order.into_iter().map(|(i, _)| i).collect()
}

fn check(targets: &[u32], n: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Data("ranking metrics need at least one target item".into()));
    }
    if n == 0 {
        return Err(Error::Config("cutoff N must be at least 1".into()));
    }
    Ok(())
}

/// 1-based positions of the targets inside the top `n`.
fn hit_positions<'a>(ranked: &'a [u32], targets: &'a [u32], n: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| targets.contains(i))
        .map(|(p, _)| p + 1)
}

/// Fraction of `targets` found in the top `n` of `ranked`.
pub fn hr_at_n(ranked: &[u32], targets: &[u32], n: usize) -> Result<f64> {
    check(targets, n)?;
    Ok(hit_positions(ranked, targets, n).count() as f64 / targets.len() as f64)
}

/// Discounted gain of the hits in the top `n`, normalized by the gain of an
/// ideal ranking of `min(n, |targets|)` hits.
pub fn ndcg_at_n(ranked: &[u32], targets: &[u32], n: usize) -> Result<f64> {
    check(targets, n)?;
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = hit_positions(ranked, targets, n).map(gain).sum();
    let idcg: f64 = (1..=n.min(targets.len())).map(gain).sum();
    Ok(dcg / idcg)
}
