//! Preprocessed datasets on disk: dense edge lists, id maps, features and the
//! train/validation/test split, stored under a content hash of their inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use diffnet_core::compute::Tensor;
use diffnet_core::data::{
    load_features, load_interactions, load_social_links, preprocess, split, standardize_columns, GraphStats,
    HeteroGraph, IdMap, InteractionSplit, LoadReport,
};
use diffnet_core::synthetic::generate;
use diffnet_core::{Error, Result};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, RunConfig};
use crate::workdir::{content_hash, short, Workdir};

/// Summary written next to the artifacts; its presence marks a complete
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub hash: String,
    pub source: String,
    pub stats: GraphStats,
    pub ratings_load: Option<LoadReport>,
    pub links_load: Option<LoadReport>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub forced_to_train: usize,
}

/// A loaded dataset: the full graph, its split, and the graph restricted to
/// training interactions.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub hash: String,
    pub graph: HeteroGraph,
    pub split: InteractionSplit,
    pub train_graph: HeteroGraph,
    pub manifest: PreprocessManifest,
}

/// Hash of everything the preprocessed artifacts depend on: input file
/// contents (not their paths), data settings and the data seed.
pub fn data_hash(cfg: &RunConfig) -> Result<String> {
    let settings = DataConfig {
        ratings: None,
        links: None,
        user_features: None,
        item_features: None,
        ..cfg.data.clone()
    };
    let mut parts: Vec<Vec<u8>> = vec![
        b"diffnet-preprocessed-v1".to_vec(),
        serde_json::to_vec(&settings).expect("data settings serialize"),
        cfg.seeds.data.to_le_bytes().to_vec(),
    ];
    if cfg.data.synthetic.is_none() {
        let d = &cfg.data;
        for path in [&d.ratings, &d.links, &d.user_features, &d.item_features] {
            parts.push(match path {
                Some(p) => fs::read(p).map_err(|e| Error::io(p, e))?,
                None => b"-".to_vec(),
            });
        }
    }
    Ok(content_hash(parts.iter().map(Vec::as_slice)))
}

fn features(path: &Path, ids: &IdMap, standardize: bool) -> Result<Tensor> {
    let mut m = load_features(path, ids)?.values;
    if standardize {
        standardize_columns(&mut m);
    }
    Ok(m)
}

fn build(cfg: &RunConfig) -> Result<(HeteroGraph, &'static str, Option<LoadReport>, Option<LoadReport>)> {
    let d = &cfg.data;
    if let Some(syn) = &d.synthetic {
        return Ok((generate(syn, cfg.seeds.data)?.graph, "synthetic", None, None));
    }
    let missing = |what: &str| Error::Config(format!("data.{what} is not set"));
    let ratings = d.ratings.as_ref().ok_or_else(|| missing("ratings"))?;
    let links = d.links.as_ref().ok_or_else(|| missing("links"))?;
    let (interactions, ratings_load) = load_interactions(ratings, &d.rating_columns)?;
    let (social, links_load) = load_social_links(links, &d.link_columns)?;
    let mut graph = preprocess(&interactions, &social, &d.preprocess)?;
    if let Some(path) = &d.user_features {
        let f = features(path, graph.user_ids(), d.standardize_features)?;
        graph.set_user_features(f)?;
    }
    if let Some(path) = &d.item_features {
        let f = features(path, graph.item_ids(), d.standardize_features)?;
        graph.set_item_features(f)?;
    }
    Ok((graph, "files", Some(ratings_load), Some(links_load)))
}

fn pairs_tsv(pairs: &[(u32, u32)]) -> String {
    let mut out = String::with_capacity(pairs.len() * 10);
    for (a, b) in pairs {
        let _ = writeln!(out, "{a}\t{b}");
    }
    out
}

fn features_tsv(m: &Tensor, ids: &IdMap) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let values: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}\t{}", ids.raw_of(r as u32), values.join(","));
    }
    out
}

fn read_pairs(path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            l.split_once('\t')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    reason: "expected two dense indices".into(),
                })
        })
        .collect()
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

/// Builds (or reuses) the preprocessed artifacts for `cfg` and loads them.
pub fn prepare(cfg: &RunConfig, wd: &Workdir) -> Result<Dataset> {
    let hash = data_hash(cfg)?;
    let dir = wd.preprocessed()?.join(short(&hash));
    if dir.join("manifest.json").is_file() && !wd.force {
        info!("reusing preprocessed data in {}", dir.display());
        return load(&dir);
    }
    let (graph, source, ratings_load, links_load) = build(cfg)?;
    let split = split(&graph, &cfg.data.split, cfg.seeds.data)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let put = |name: &str, bytes: &[u8]| wd.write(&dir.join(name), bytes);
    put("users.tsv", graph.user_ids().to_tsv().as_bytes())?;
    put("items.tsv", graph.item_ids().to_tsv().as_bytes())?;
    put("interactions.tsv", pairs_tsv(graph.interactions()).as_bytes())?;
    put("links.tsv", pairs_tsv(graph.links()).as_bytes())?;
    put("train.tsv", pairs_tsv(&split.train).as_bytes())?;
    put("validation.tsv", pairs_tsv(&split.validation).as_bytes())?;
    put("test.tsv", pairs_tsv(&split.test).as_bytes())?;
    if let Some(f) = graph.user_features() {
        put("user_features.tsv", features_tsv(f, graph.user_ids()).as_bytes())?;
    }
    if let Some(f) = graph.item_features() {
        put("item_features.tsv", features_tsv(f, graph.item_ids()).as_bytes())?;
    }
    let stats = graph.stats();
    put("stats.json", &json(&stats))?;
    let manifest = PreprocessManifest {
        hash,
        source: source.to_string(),
        stats,
        ratings_load,
        links_load,
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        forced_to_train: split.forced_to_train,
    };
    put("manifest.json", &json(&manifest))?;
    info!(
        "preprocessed {} users, {} items, {} ratings, {} links into {}",
        manifest.stats.users,
        manifest.stats.items,
        manifest.stats.ratings,
        manifest.stats.links,
        dir.display()
    );
    load(&dir)
}

/// Reads a directory written by [`prepare`].
pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: PreprocessManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let users = IdMap::read_tsv(&dir.join("users.tsv"))?;
    let items = IdMap::read_tsv(&dir.join("items.tsv"))?;
    let mut graph = HeteroGraph::with_ids(
        users,
        items,
        read_pairs(&dir.join("interactions.tsv"))?,
        read_pairs(&dir.join("links.tsv"))?,
    )?;
    let user_features = dir.join("user_features.tsv");
    if user_features.is_file() {
        let f = load_features(&user_features, graph.user_ids())?.values;
        graph.set_user_features(f)?;
    }
    let item_features = dir.join("item_features.tsv");
    if item_features.is_file() {
        let f = load_features(&item_features, graph.item_ids())?.values;
        graph.set_item_features(f)?;
    }
    let split = InteractionSplit::from_parts(
        &graph,
        read_pairs(&dir.join("train.tsv"))?,
        read_pairs(&dir.join("validation.tsv"))?,
        read_pairs(&dir.join("test.tsv"))?,
    )?;
    let train_graph = split.train_graph(&graph)?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        hash: manifest.hash.clone(),
        graph,
        split,
        train_graph,
        manifest,
    })
}
