use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::Tensor;
use crate::data::{InteractionSet, RatingRecord, SocialLinkSet};
use crate::error::{Error, Result};

/// Raw id <-> dense index vocabulary. Dense indices follow the sorted raw ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn from_sorted(raw: Vec<String>) -> Self {
        let index = raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i as u32))
            .collect();
        IdMap { raw, index }
    }

    /// `prefix00, prefix01, ...`, zero-padded so that sorted order is index
    /// order.
    pub fn synthetic(prefix: &str, n: usize) -> Self {
        let width = n.saturating_sub(1).to_string().len();
        IdMap::from_sorted((0..n).map(|i| format!("{prefix}{i:0width$}")).collect())
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw_of(&self, index: u32) -> &str {
        &self.raw[index as usize]
    }

    /// Two-column `raw_id<TAB>dense_index` table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.raw.iter().enumerate() {
            let _ = writeln!(out, "{r}\t{i}");
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`IdMap::to_tsv`]; indices must run 0, 1, ...
    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw = Vec::new();
        for (line, row) in text.lines().enumerate() {
            let parsed = row
                .split_once('\t')
                .and_then(|(id, idx)| Some((id, idx.trim().parse::<usize>().ok()?)));
            match parsed {
                Some((id, idx)) if idx == raw.len() => raw.push(id.to_string()),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line + 1,
                        reason: format!("expected raw_id<TAB>{}", raw.len()),
                    })
                }
            }
        }
        Ok(IdMap::from_sorted(raw))
    }
}

/// Compressed adjacency lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    /// Builds from `(source, target)` pairs; neighbor lists come out sorted.
    pub fn from_pairs(num_sources: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); num_sources];
        for (s, t) in pairs {
            lists[s as usize].push(t);
        }
        let mut offsets = Vec::with_capacity(num_sources + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            targets.extend(l);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }
}

/// Social network plus interest network over dense user and item indices.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    num_users: usize,
    num_items: usize,
    interactions: Vec<(u32, u32)>,
    links: Vec<(u32, u32)>,
    user_items: Csr,
    item_users: Csr,
    followees: Csr,
    user_features: Option<Tensor>,
    item_features: Option<Tensor>,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl HeteroGraph {
    /// Builds a graph from dense-index edge lists. `links` holds
    /// `(follower, followee)` pairs; self links and duplicates are dropped.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        interactions: impl IntoIterator<Item = (u32, u32)>,
        links: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        Self::with_ids(
            IdMap::synthetic("u", num_users),
            IdMap::synthetic("i", num_items),
            interactions,
            links,
        )
    }

    pub fn with_ids(
        user_ids: IdMap,
        item_ids: IdMap,
        interactions: impl IntoIterator<Item = (u32, u32)>,
        links: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let (num_users, num_items) = (user_ids.len(), item_ids.len());
        let interactions: BTreeSet<(u32, u32)> = interactions.into_iter().collect();
        let links: BTreeSet<(u32, u32)> = links.into_iter().filter(|(a, b)| a != b).collect();
        if let Some(&(u, i)) = interactions
            .iter()
            .find(|(u, i)| *u as usize >= num_users || *i as usize >= num_items)
        {
            return Err(Error::Data(format!(
                "interaction ({u}, {i}) outside {num_users} users x {num_items} items"
            )));
        }
        if let Some(&(a, b)) = links
            .iter()
            .find(|(a, b)| *a as usize >= num_users || *b as usize >= num_users)
        {
            return Err(Error::Data(format!("link ({a}, {b}) outside {num_users} users")));
        }
        let interactions: Vec<_> = interactions.into_iter().collect();
        let links: Vec<_> = links.into_iter().collect();
        Ok(HeteroGraph {
            num_users,
            num_items,
            user_items: Csr::from_pairs(num_users, interactions.iter().copied()),
            item_users: Csr::from_pairs(num_items, interactions.iter().map(|&(u, i)| (i, u))),
            followees: Csr::from_pairs(num_users, links.iter().copied()),
            interactions,
            links,
            user_features: None,
            item_features: None,
            user_ids,
            item_ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Positive `(user, item)` pairs, sorted.
    pub fn interactions(&self) -> &[(u32, u32)] {
        &self.interactions
    }

    /// `(follower, followee)` pairs, sorted.
    pub fn links(&self) -> &[(u32, u32)] {
        &self.links
    }

    /// Items the user interacted with.
    pub fn user_items(&self, user: usize) -> &[u32] {
        self.user_items.neighbors(user)
    }

    /// Users that interacted with the item.
    pub fn item_users(&self, item: usize) -> &[u32] {
        self.item_users.neighbors(item)
    }

    /// Users that `user` follows.
    pub fn followees(&self, user: usize) -> &[u32] {
        self.followees.neighbors(user)
    }

    pub fn user_features(&self) -> Option<&Tensor> {
        self.user_features.as_ref()
    }

    pub fn item_features(&self) -> Option<&Tensor> {
        self.item_features.as_ref()
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    pub fn set_user_features(&mut self, features: Tensor) -> Result<()> {
        if features.rows() != self.num_users {
            return Err(Error::Data(format!(
                "user feature matrix has {} rows for {} users",
                features.rows(),
                self.num_users
            )));
        }
        self.user_features = Some(features);
        Ok(())
    }

    pub fn set_item_features(&mut self, features: Tensor) -> Result<()> {
        if features.rows() != self.num_items {
            return Err(Error::Data(format!(
                "item feature matrix has {} rows for {} items",
                features.rows(),
                self.num_items
            )));
        }
        self.item_features = Some(features);
        Ok(())
    }

    /// Same users, items, links and features with a different interest network.
    pub fn with_interactions(&self, interactions: &[(u32, u32)]) -> Result<HeteroGraph> {
        let mut g = HeteroGraph::with_ids(
            self.user_ids.clone(),
            self.item_ids.clone(),
            interactions.iter().copied(),
            self.links.iter().copied(),
        )?;
        g.user_features = self.user_features.clone();
        g.item_features = self.item_features.clone();
        Ok(g)
    }

    /// Back to raw records; every interaction gets `rating`.
    pub fn to_raw(&self, rating: i64) -> (InteractionSet, SocialLinkSet) {
        let records = self
            .interactions
            .iter()
            .map(|&(u, i)| RatingRecord {
                user: self.user_ids.raw_of(u).to_string(),
                item: self.item_ids.raw_of(i).to_string(),
                rating,
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|&(a, b)| {
                (
                    self.user_ids.raw_of(a).to_string(),
                    self.user_ids.raw_of(b).to_string(),
                )
            })
            .collect();
        (InteractionSet { records }, SocialLinkSet { records: links })
    }

    pub fn stats(&self) -> GraphStats {
        let cells = |a: usize, b: usize| (a as f64) * (b as f64);
        GraphStats {
            users: self.num_users,
            items: self.num_items,
            ratings: self.interactions.len(),
            links: self.links.len(),
            rating_density: self.interactions.len() as f64
                / cells(self.num_users, self.num_items).max(1.0),
            link_density: self.links.len() as f64 / cells(self.num_users, self.num_users).max(1.0),
            user_feature_dim: self.user_features.as_ref().map(Tensor::cols),
            item_feature_dim: self.item_features.as_ref().map(Tensor::cols),
        }
    }
}

/// Dataset summary in the usual users/items/ratings/links/densities form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub links: usize,
    pub rating_density: f64,
    pub link_density: f64,
    pub user_feature_dim: Option<usize>,
    pub item_feature_dim: Option<usize>,
}

/// Thresholds applied by [`preprocess`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_ratings: usize,
    pub min_links: usize,
    /// Ratings strictly above this value become positive edges.
    pub positive_threshold: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_ratings: 2,
            min_links: 2,
            positive_threshold: 3,
        }
    }
}

/// Binarizes ratings and filters users and items to a fixed point.
///
/// A user survives only with at least `min_ratings` positive ratings and at
/// least `min_links` links (followers plus followees) to other surviving
/// users. An item survives only with at least `min_ratings` positive ratings
/// from surviving users. Passes repeat until nothing changes.
pub fn preprocess(
    interactions: &InteractionSet,
    links: &SocialLinkSet,
    config: &PreprocessConfig,
) -> Result<HeteroGraph> {
    if interactions.records.is_empty() {
        return Err(Error::Data("no ratings to preprocess".into()));
    }

    // Intern raw ids first so the passes work on integers.
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut user_names: Vec<&str> = Vec::new();
    let mut item_names: Vec<&str> = Vec::new();

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for r in &interactions.records {
        if r.rating > config.positive_threshold {
            let u = *users.entry(r.user.as_str()).or_insert_with(|| {
                user_names.push(r.user.as_str());
                user_names.len() - 1
            });
            let i = *items.entry(r.item.as_str()).or_insert_with(|| {
                item_names.push(r.item.as_str());
                item_names.len() - 1
            });
            positives.push((u, i));
        }
    }
    // Links only matter between users that have positive ratings.
    let edges: Vec<(usize, usize)> = links
        .records
        .iter()
        .filter(|(a, b)| a != b)
        .filter_map(|(a, b)| Some((*users.get(a.as_str())?, *users.get(b.as_str())?)))
        .collect();

    let mut user_alive = vec![true; user_names.len()];
    let mut item_alive = vec![true; item_names.len()];
    loop {
        let mut user_ratings = vec![0usize; user_names.len()];
        let mut item_ratings = vec![0usize; item_names.len()];
        for &(u, i) in &positives {
            if user_alive[u] && item_alive[i] {
                user_ratings[u] += 1;
                item_ratings[i] += 1;
            }
        }
        let mut user_links = vec![0usize; user_names.len()];
        for &(a, b) in &edges {
            if user_alive[a] && user_alive[b] {
                user_links[a] += 1;
                user_links[b] += 1;
            }
        }
        let mut changed = false;
        for u in 0..user_alive.len() {
            if user_alive[u] && (user_ratings[u] < config.min_ratings || user_links[u] < config.min_links) {
                user_alive[u] = false;
                changed = true;
            }
        }
        for i in 0..item_alive.len() {
            if item_alive[i] && item_ratings[i] < config.min_ratings {
                item_alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let dense = |names: &[&str], alive: &[bool]| -> (IdMap, Vec<Option<u32>>) {
        let mut kept: Vec<(&str, usize)> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| alive[*i])
            .map(|(i, n)| (*n, i))
            .collect();
        kept.sort_unstable();
        let mut remap = vec![None; names.len()];
        for (d, (_, orig)) in kept.iter().enumerate() {
            remap[*orig] = Some(d as u32);
        }
        (
            IdMap::from_sorted(kept.into_iter().map(|(n, _)| n.to_string()).collect()),
            remap,
        )
    };
    let (user_ids, user_remap) = dense(&user_names, &user_alive);
    let (item_ids, item_remap) = dense(&item_names, &item_alive);
    if user_ids.is_empty() || item_ids.is_empty() {
        return Err(Error::Data("graph is empty after filtering".into()));
    }

    let dense_interactions = positives
        .iter()
        .filter_map(|&(u, i)| Some((user_remap[u]?, item_remap[i]?)));
    let dense_links = edges
        .iter()
        .filter_map(|&(a, b)| Some((user_remap[a]?, user_remap[b]?)));
    HeteroGraph::with_ids(user_ids, item_ids, dense_interactions, dense_links)
}
