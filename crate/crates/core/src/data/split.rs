use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::HeteroGraph;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
    /// Split every user's positives separately instead of the global pool.
    pub per_user: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_frac: 0.1,
            val_frac: 0.1,
            per_user: false,
        }
    }
}

/// Train / validation / test partition of the positive pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSplit {
    num_users: usize,
    num_items: usize,
    pub train: Vec<(u32, u32)>,
    pub validation: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    /// Sorted union of every partition, per user.
    per_user_positives: Vec<Vec<u32>>,
    /// Held-out pairs moved back to train so their user keeps one training positive.
    pub forced_to_train: usize,
}

impl InteractionSplit {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn positives(&self, user: u32) -> &[u32] {
        &self.per_user_positives[user as usize]
    }

    pub fn is_positive(&self, user: u32, item: u32) -> bool {
        self.positives(user).binary_search(&item).is_ok()
    }

    /// Training positives per user.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_users];
        for &(u, _) in &self.train {
            counts[u as usize] += 1;
        }
        counts
    }

    /// Rebuilds a split from stored partitions, which together must hold
    /// every interaction of `graph` exactly once.
    pub fn from_parts(
        graph: &HeteroGraph,
        mut train: Vec<(u32, u32)>,
        mut validation: Vec<(u32, u32)>,
        mut test: Vec<(u32, u32)>,
    ) -> Result<Self> {
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        let mut all: Vec<(u32, u32)> = train.iter().chain(&validation).chain(&test).copied().collect();
        all.sort_unstable();
        if all != graph.interactions() {
            return Err(Error::Data("split partitions do not cover the interactions exactly once".into()));
        }
        Ok(InteractionSplit {
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            train,
            validation,
            test,
            per_user_positives: (0..graph.num_users()).map(|u| graph.user_items(u).to_vec()).collect(),
            forced_to_train: 0,
        })
    }

    /// The graph the model diffuses over: every link, training interactions only.
    pub fn train_graph(&self, graph: &HeteroGraph) -> Result<HeteroGraph> {
        graph.with_interactions(&self.train)
    }
}

/// Randomly partitions the graph's positives.
///
/// Global mode shuffles every positive under `seed`, takes
/// `floor(n * test_frac)` for test and `floor((n - test) * val_frac)` of the
/// remainder for validation. A user whose positives all landed outside train
/// gets its first held-out pair (in shuffled order) moved back into train.
pub fn split(graph: &HeteroGraph, config: &SplitConfig, seed: u64) -> Result<InteractionSplit> {
    if !(0.0..1.0).contains(&config.test_frac) || !(0.0..1.0).contains(&config.val_frac) {
        return Err(Error::Config(format!(
            "split fractions must lie in [0, 1): test {} validation {}",
            config.test_frac, config.val_frac
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let sizes = |n: usize| {
        let n_test = (n as f64 * config.test_frac).floor() as usize;
        let n_val = ((n - n_test) as f64 * config.val_frac).floor() as usize;
        (n_test, n_val)
    };

    // Shuffled held-out pairs, remembered in order for the train fallback.
    let mut held_out_order: Vec<(u32, u32)> = Vec::new();
    if config.per_user {
        for u in 0..graph.num_users() {
            let mut items: Vec<u32> = graph.user_items(u).to_vec();
            items.shuffle(&mut rng);
            let (n_test, n_val) = sizes(items.len());
            for (k, &i) in items.iter().enumerate() {
                let pair = (u as u32, i);
                if k < n_test {
                    test.push(pair);
                    held_out_order.push(pair);
                } else if k < n_test + n_val {
                    validation.push(pair);
                    held_out_order.push(pair);
                } else {
                    train.push(pair);
                }
            }
        }
    } else {
        let mut pairs = graph.interactions().to_vec();
        pairs.shuffle(&mut rng);
        let (n_test, n_val) = sizes(pairs.len());
        test.extend_from_slice(&pairs[..n_test]);
        validation.extend_from_slice(&pairs[n_test..n_test + n_val]);
        train.extend_from_slice(&pairs[n_test + n_val..]);
        held_out_order.extend_from_slice(&pairs[..n_test + n_val]);
    }

    let mut has_train = vec![false; graph.num_users()];
    for &(u, _) in &train {
        has_train[u as usize] = true;
    }
    let mut forced = Vec::new();
    for &(u, i) in &held_out_order {
        if !has_train[u as usize] {
            has_train[u as usize] = true;
            forced.push((u, i));
        }
    }
    if !forced.is_empty() {
        forced.sort_unstable();
        test.retain(|p| forced.binary_search(p).is_err());
        validation.retain(|p| forced.binary_search(p).is_err());
        train.extend_from_slice(&forced);
    }

    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    let per_user_positives = (0..graph.num_users())
        .map(|u| graph.user_items(u).to_vec())
        .collect();
    Ok(InteractionSplit {
        num_users: graph.num_users(),
        num_items: graph.num_items(),
        train,
        validation,
        test,
        per_user_positives,
        forced_to_train: forced.len(),
    })
}

/// Users bucketed by training-rating count into half-open intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityGroups {
    pub labels: Vec<String>,
    /// Group index of each user.
    pub assignment: Vec<usize>,
}

impl SparsityGroups {
    pub fn group_of(&self, user: u32) -> usize {
        self.assignment[user as usize]
    }

    pub fn label_of(&self, user: u32) -> &str {
        &self.labels[self.group_of(user)]
    }
}

/// Buckets `[0,b0), [b0,b1), ..., [b_last,∞)` over training counts.
pub fn sparsity_groups(split: &InteractionSplit, boundaries: &[usize]) -> Result<SparsityGroups> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "sparsity boundaries must be strictly increasing: {boundaries:?}"
        )));
    }
    let mut labels = Vec::with_capacity(boundaries.len() + 1);
    let mut lower = 0;
    for &b in boundaries {
        labels.push(format!("[{lower},{b})"));
        lower = b;
    }
    labels.push(format!("[{lower},∞)"));
    let assignment = split
        .train_counts()
        .into_iter()
        .map(|c| boundaries.partition_point(|&b| b <= c))
        .collect();
    Ok(SparsityGroups { labels, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn dense_graph(users: usize, items: usize) -> HeteroGraph {
        let pairs = (0..users as u32).flat_map(|u| (0..items as u32).map(move |i| (u, i)));
        HeteroGraph::from_edges(users, items, pairs, []).unwrap()
    }

    #[test]
    fn parts_round_trip() {
        let g = dense_graph(5, 6);
        let s = split(&g, &SplitConfig::default(), 1).unwrap();
        let back = InteractionSplit::from_parts(&g, s.train.clone(), s.validation.clone(), s.test.clone()).unwrap();
        assert_eq!((&back.train, &back.validation, &back.test), (&s.train, &s.validation, &s.test));
        assert_eq!(back.positives(2), s.positives(2));
        let mut short = s.train.clone();
        short.pop();
        assert!(InteractionSplit::from_parts(&g, short, s.validation.clone(), s.test.clone()).is_err());
    }

    #[test]
    fn hundred_positives_split_10_9_81() {
        let g = dense_graph(4, 25);
        let s = split(&g, &SplitConfig::default(), 3).unwrap();
        assert_eq!(s.forced_to_train, 0);
        assert_eq!((s.test.len(), s.validation.len(), s.train.len()), (10, 9, 81));
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let g = dense_graph(10, 30);
        let s = split(&g, &SplitConfig::default(), 11).unwrap();
        let all: BTreeSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all.len(), s.train.len() + s.validation.len() + s.test.len());
        assert_eq!(all, g.interactions().iter().copied().collect());
    }

    #[test]
    fn same_seed_same_split_different_seed_differs() {
        let g = dense_graph(20, 50);
        let a = split(&g, &SplitConfig::default(), 5).unwrap();
        let b = split(&g, &SplitConfig::default(), 5).unwrap();
        let c = split(&g, &SplitConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn users_keep_a_training_positive() {
        // 30 users with a single positive each: most would land in train
        // anyway, the held-out ones are forced back.
        let pairs: Vec<(u32, u32)> = (0..30).map(|u| (u, u % 7)).collect();
        let g = HeteroGraph::from_edges(30, 7, pairs, []).unwrap();
        let s = split(&g, &SplitConfig::default(), 1).unwrap();
        assert!(s.train_counts().iter().all(|&c| c == 1));
        assert_eq!(s.forced_to_train, 3 + 2);
        assert!(s.test.is_empty() && s.validation.is_empty());
    }

    #[test]
    fn per_user_mode_holds_out_from_every_user() {
        let g = dense_graph(5, 20);
        let cfg = SplitConfig {
            per_user: true,
            ..SplitConfig::default()
        };
        let s = split(&g, &cfg, 9).unwrap();
        for u in 0..5u32 {
            assert_eq!(s.test.iter().filter(|p| p.0 == u).count(), 2);
            assert_eq!(s.validation.iter().filter(|p| p.0 == u).count(), 1);
        }
    }

    #[test]
    fn sparsity_buckets_are_left_closed() {
        let mut pairs = Vec::new();
        for (u, n) in [(0u32, 10u32), (1, 8), (2, 100), (3, 3)] {
            pairs.extend((0..n).map(|i| (u, i)));
        }
        let g = HeteroGraph::from_edges(4, 100, pairs, []).unwrap();
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
        let groups = sparsity_groups(&s, &[8, 16, 32, 64]).unwrap();
        assert_eq!(groups.label_of(0), "[8,16)");
        assert_eq!(groups.label_of(1), "[8,16)");
        assert_eq!(groups.label_of(2), "[64,∞)");
        assert_eq!(groups.label_of(3), "[0,8)");
        assert!(sparsity_groups(&s, &[8, 8]).is_err());
    }
}
