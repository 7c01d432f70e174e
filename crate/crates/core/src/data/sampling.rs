use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InteractionSplit;
use crate::error::{Error, Result};

/// One pairwise training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSamples {
    pub triples: Vec<Triple>,
    /// Users whose positives cover every item; they produce no triples.
    pub skipped_users: usize,
}

const MAX_REJECTIONS: usize = 64;

/// Maps position `j` of the complement of `sorted_excluded` in `0..n` back to an item.
fn nth_unexcluded(sorted_excluded: &[u32], j: usize) -> u32 {
    let mut item = j as u32;
    for &p in sorted_excluded {
        if p <= item {
            item += 1;
        } else {
            break;
        }
    }
    item
}

/// Draws `ratio` unobserved items for every training positive, then shuffles
/// the triples. Everything is a function of `epoch_seed`.
pub fn sample_train_negatives(
    split: &InteractionSplit,
    ratio: usize,
    epoch_seed: u64,
) -> Result<TrainSamples> {
    if ratio == 0 {
        return Err(Error::Config("negative ratio must be at least 1".into()));
    }
    let num_items = split.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut triples = Vec::with_capacity(split.train.len() * ratio);
    let mut skipped = vec![false; split.num_users()];

    for &(user, pos) in &split.train {
        let positives = split.positives(user);
        let free = num_items - positives.len();
        if free == 0 {
            skipped[user as usize] = true;
            continue;
        }
        for _ in 0..ratio {
            let mut neg = None;
            for _ in 0..MAX_REJECTIONS {
                let candidate = rng.random_range(0..num_items as u32);
                if positives.binary_search(&candidate).is_err() {
                    neg = Some(candidate);
                    break;
                }
            }
            let neg =
                neg.unwrap_or_else(|| nth_unexcluded(positives, rng.random_range(0..free)));
            triples.push(Triple { user, pos, neg });
        }
    }
    let skipped_users = skipped.iter().filter(|s| **s).count();
    if skipped_users > 0 {
        warn!("{skipped_users} users rated every item and were skipped for negative sampling");
    }
    triples.shuffle(&mut rng);
    Ok(TrainSamples {
        triples,
        skipped_users,
    })
}

/// Which held-out partition supplies the ranking targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    Validation,
    Test,
}

/// Ranking candidates of one user: held-out positives plus sampled negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct UserCandidates {
    pub user: u32,
    pub targets: Vec<u32>,
    pub negatives: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCandidates {
    pub users: Vec<UserCandidates>,
    /// Users with held-out positives but no training positive (not ranked).
    pub excluded_users: usize,
    /// Users that had fewer unobserved items than requested.
    pub short_users: usize,
}

/// Samples `count` unobserved items per held-out user without replacement,
/// or every unobserved item when fewer exist.
///
/// Each user draws from its own stream of a generator seeded by
/// `repeat_seed`, so results do not depend on user order.
pub fn sample_eval_negatives(
    split: &InteractionSplit,
    holdout: Holdout,
    count: usize,
    repeat_seed: u64,
) -> EvalCandidates {
    let pairs = match holdout {
        Holdout::Validation => &split.validation,
        Holdout::Test => &split.test,
    };
    let mut targets: Vec<Vec<u32>> = vec![Vec::new(); split.num_users()];
    for &(u, i) in pairs {
        targets[u as usize].push(i);
    }
    let train_counts = split.train_counts();
    let num_items = split.num_items();
    let mut users = Vec::new();
    let (mut excluded_users, mut short_users) = (0, 0);

    for (u, targets) in targets.into_iter().enumerate() {
        if targets.is_empty() {
            continue;
        }
        if train_counts[u] == 0 {
            excluded_users += 1;
            continue;
        }
        let positives = split.positives(u as u32);
        let free = num_items - positives.len();
        let negatives: Vec<u32> = if free <= count {
            if free < count {
                short_users += 1;
            }
            (0..free).map(|j| nth_unexcluded(positives, j)).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed);
            rng.set_stream(u as u64);
            let mut picks: Vec<u32> = sample(&mut rng, free, count)
                .into_iter()
                .map(|j| nth_unexcluded(positives, j))
                .collect();
            picks.sort_unstable();
            picks
        };
        users.push(UserCandidates {
            user: u as u32,
            targets,
            negatives,
        });
    }
    EvalCandidates {
        users,
        excluded_users,
        short_users,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, HeteroGraph, SplitConfig};
    use std::collections::HashSet;

    fn fixture(users: u32, items: u32, per_user: u32, seed: u64) -> InteractionSplit {
        let pairs: Vec<_> = (0..users)
            .flat_map(|u| (0..per_user).map(move |k| (u, (u * 7 + k * 13) % items)))
            .collect();
        let g = HeteroGraph::from_edges(users as usize, items as usize, pairs, []).unwrap();
        split(&g, &SplitConfig::default(), seed).unwrap()
    }

    #[test]
    fn nth_unexcluded_skips_positives() {
        let excluded = [0, 2, 3, 7];
        let got: Vec<u32> = (0..6).map(|j| nth_unexcluded(&excluded, j)).collect();
        assert_eq!(got, vec![1, 4, 5, 6, 8, 9]);
    }

    #[test]
    fn ratio_eight_gives_eight_triples_per_positive() {
        let s = fixture(10, 50, 9, 1);
        let samples = sample_train_negatives(&s, 8, 42).unwrap();
        assert_eq!(samples.triples.len(), s.train.len() * 8);
        for t in &samples.triples {
            assert!(!s.is_positive(t.user, t.neg));
            assert!(s.is_positive(t.user, t.pos));
        }
        assert!(sample_train_negatives(&s, 0, 1).is_err());
    }

    #[test]
    fn epochs_resample() {
        let s = fixture(10, 50, 9, 1);
        let a = sample_train_negatives(&s, 8, 1).unwrap();
        let b = sample_train_negatives(&s, 8, 2).unwrap();
        let multiset = |t: &TrainSamples| {
            let mut v: Vec<_> = t.triples.iter().map(|t| (t.user, t.pos, t.neg)).collect();
            v.sort_unstable();
            v
        };
        assert_ne!(multiset(&a), multiset(&b));
        assert_eq!(a, sample_train_negatives(&s, 8, 1).unwrap());
    }

    #[test]
    fn saturated_user_is_skipped() {
        let pairs: Vec<_> = (0..4).map(|i| (0, i)).chain([(1, 0), (1, 1)]).collect();
        let g = HeteroGraph::from_edges(2, 4, pairs, []).unwrap();
        let s = split(
            &g,
            &SplitConfig {
                test_frac: 0.0,
                val_frac: 0.0,
                per_user: false,
            },
            0,
        )
        .unwrap();
        let samples = sample_train_negatives(&s, 3, 0).unwrap();
        assert_eq!(samples.skipped_users, 1);
        assert_eq!(samples.triples.len(), 2 * 3);
        assert!(samples.triples.iter().all(|t| t.user == 1 && t.neg >= 2));
    }

    #[test]
    fn eval_negatives_avoid_positives() {
        let s = fixture(40, 5000, 20, 3);
        let c = sample_eval_negatives(&s, Holdout::Test, 1000, 1);
        assert!(!c.users.is_empty());
        for uc in &c.users {
            assert_eq!(uc.negatives.len(), 1000);
            let distinct: HashSet<_> = uc.negatives.iter().collect();
            assert_eq!(distinct.len(), 1000);
            assert!(uc.negatives.iter().all(|&i| !s.is_positive(uc.user, i)));
        }
    }

    #[test]
    fn small_catalog_uses_every_unobserved_item() {
        let s = fixture(10, 800, 20, 3);
        let c = sample_eval_negatives(&s, Holdout::Test, 1000, 1);
        for uc in &c.users {
            assert_eq!(uc.negatives.len(), 800 - s.positives(uc.user).len());
        }
        assert_eq!(c.short_users, c.users.len());
    }

    #[test]
    fn repeat_seeds_give_distinct_sets() {
        let s = fixture(20, 3000, 20, 3);
        let runs: Vec<_> = (1..=5)
            .map(|seed| sample_eval_negatives(&s, Holdout::Test, 1000, seed))
            .collect();
        for u in 0..runs[0].users.len() {
            let sets: HashSet<_> = runs.iter().map(|r| r.users[u].negatives.clone()).collect();
            assert_eq!(sets.len(), 5);
        }
        assert_eq!(runs[0], sample_eval_negatives(&s, Holdout::Test, 1000, 1));
    }
}
