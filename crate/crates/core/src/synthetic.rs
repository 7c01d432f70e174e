//! Planted-preference graphs: users and items fall into interest blocks,
//! users mostly rate items of their own block and mostly follow users of their
//! own block.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HeteroGraph, IdMap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Distinct positives drawn per user.
    pub positives_per_user: usize,
    /// Probability that a positive is drawn from the user's own block.
    pub interest_homophily: f64,
    pub followees_per_user: usize,
    /// Probability that a followee is drawn from the user's own block.
    pub social_homophily: f64,
    /// Item `r` of a block (by index) has popularity weight `(r + 1)^-exponent`.
    pub popularity_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 200,
            items: 300,
            blocks: 4,
            positives_per_user: 24,
            interest_homophily: 0.4,
            followees_per_user: 8,
            social_homophily: 0.8,
            popularity_exponent: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub graph: HeteroGraph,
    pub user_block: Vec<usize>,
    pub item_block: Vec<usize>,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let probability = |p: f64| (0.0..=1.0).contains(&p);
        if self.blocks == 0 || self.users < 2 * self.blocks || self.items < self.blocks {
            return Err(Error::Config("every block needs at least two users and one item".into()));
        }
        if self.positives_per_user > self.items / self.blocks {
            return Err(Error::Config("positives per user exceed the size of a block".into()));
        }
        if self.followees_per_user >= self.users / self.blocks {
            return Err(Error::Config("followees per user must be smaller than a block".into()));
        }
        if ![self.interest_homophily, self.social_homophily].into_iter().all(probability) {
            return Err(Error::Config("homophily values are probabilities".into()));
        }
        Ok(())
    }
}

/// Draws a graph under `seed`; block membership is contiguous by index.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, b) = (config.users, config.items, config.blocks);
    let user_block: Vec<usize> = (0..m).map(|u| u * b / m).collect();
    let item_block: Vec<usize> = (0..n).map(|i| i * b / n).collect();
    let members = |blocks: &[usize], k: usize| -> Vec<usize> { (0..blocks.len()).filter(|&x| blocks[x] == k).collect() };
    let item_members: Vec<Vec<usize>> = (0..b).map(|k| members(&item_block, k)).collect();
    let user_members: Vec<Vec<usize>> = (0..b).map(|k| members(&user_block, k)).collect();

    let popularity: Vec<f64> = (0..n)
        .map(|i| {
            let rank = item_members[item_block[i]].iter().position(|&x| x == i).expect("item is in its block");
            ((rank + 1) as f64).powf(-config.popularity_exponent)
        })
        .collect();
    let sampler = |pool: &[usize]| WeightedIndex::new(pool.iter().map(|&i| popularity[i])).expect("positive weights");
    let block_samplers: Vec<_> = item_members.iter().map(|pool| sampler(pool)).collect();
    let all_items: Vec<usize> = (0..n).collect();
    let global = sampler(&all_items);

    let mut followees: Vec<Vec<usize>> = Vec::with_capacity(m);
    for (u, &k) in user_block.iter().enumerate() {
        let mut chosen = Vec::with_capacity(config.followees_per_user);
        while chosen.len() < config.followees_per_user {
            let v = if b == 1 || rng.random_bool(config.social_homophily) {
                user_members[k][rng.random_range(0..user_members[k].len())]
            } else {
                rng.random_range(0..m)
            };
            if v != u && !chosen.contains(&v) {
                chosen.push(v);
            }
        }
        followees.push(chosen);
    }

    let mut rates = Vec::with_capacity(m * config.positives_per_user);
    for (u, &k) in user_block.iter().enumerate() {
        let mut chosen = Vec::with_capacity(config.positives_per_user);
        while chosen.len() < config.positives_per_user {
            let item = if rng.random_bool(config.interest_homophily) {
                item_members[k][block_samplers[k].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        rates.extend(chosen.into_iter().map(|i| (u as u32, i as u32)));
    }
    let links: Vec<(u32, u32)> = followees
        .iter()
        .enumerate()
        .flat_map(|(u, f)| f.iter().map(move |&v| (u as u32, v as u32)))
        .collect();

    let graph = HeteroGraph::with_ids(IdMap::synthetic("u", m), IdMap::synthetic("i", n), rates, links)?;
    Ok(SyntheticData {
        graph,
        user_block,
        item_block,
    })
}

/// Unstructured graph: every rating and every directed link is present
/// independently with the given probability.
pub fn random_graph(users: usize, items: usize, p_rate: f64, p_link: f64, seed: u64) -> Result<HeteroGraph> {
    if !(0.0..=1.0).contains(&p_rate) || !(0.0..=1.0).contains(&p_link) {
        return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::new();
    let mut links = Vec::new();
    for a in 0..users as u32 {
        for i in 0..items as u32 {
            if rng.random_bool(p_rate) {
                rates.push((a, i));
            }
        }
        for b in 0..users as u32 {
            if a != b && rng.random_bool(p_link) {
                links.push((a, b));
            }
        }
    }
    HeteroGraph::from_edges(users, items, rates, links)
}
