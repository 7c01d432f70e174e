use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute::ParameterSet;
use crate::data::{sample_eval_negatives, Holdout, InteractionSplit, SparsityGroups, UserCandidates};
use crate::error::{Error, Result};
use crate::eval::{hr_at_n, ndcg_at_n, rank_candidates};
use crate::model::{DiffusionPlan, DiffusionState, Model};

/// Anything that assigns a preference score to a (user, item) pair.
pub trait Scorer: Sync {
    fn score(&self, user: u32, item: u32) -> f64;
}

impl Scorer for DiffusionState {
    fn score(&self, user: u32, item: u32) -> f64 {
        DiffusionState::score(self, user, item)
    }
}

impl<F: Fn(u32, u32) -> f64 + Sync> Scorer for F {
    fn score(&self, user: u32, item: u32) -> f64 {
        self(user, item)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    /// Sampled negatives per user.
    pub negatives: usize,
    /// Rank against every unobserved item instead of a sample.
    pub all_items: bool,
    pub repeats: usize,
    /// Repeat `r` samples negatives with seed `seed + r`.
    pub seed: u64,
    pub holdout: Holdout,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: vec![5, 10, 15],
            negatives: 1000,
            all_items: false,
            repeats: 5,
            seed: 0,
            holdout: Holdout::Test,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config(format!("cutoffs must be non-empty and positive: {:?}", self.cutoffs)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("at least one evaluation repeat is required".into()));
        }
        if self.negatives == 0 && !self.all_items {
            return Err(Error::Config("negative sample size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hr,
    Ndcg,
}

/// One metric at one cutoff: the per-repeat values and their mean and
/// sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub n: usize,
    pub repeats: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn new(metric: Metric, n: usize, repeats: Vec<f64>) -> Self {
        let k = repeats.len() as f64;
        let mean = repeats.iter().sum::<f64>() / k;
        let std = if repeats.len() > 1 {
            (repeats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricSummary {
            metric,
            n,
            repeats,
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub users: usize,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub holdout: Holdout,
    /// Negatives requested per user (`None` when ranking every unobserved item).
    pub negatives: Option<usize>,
    pub repeat_seeds: Vec<u64>,
    pub evaluated_users: usize,
    /// Users with held-out items but no training positive.
    pub excluded_users: usize,
    /// Users with fewer unobserved items than the requested sample size.
    pub short_users: usize,
    pub metrics: Vec<MetricSummary>,
    pub groups: Vec<GroupReport>,
    /// Labels of groups that had no evaluated user.
    pub empty_groups: Vec<String>,
}

impl RankingReport {
    pub fn get(&self, metric: Metric, n: usize) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric && m.n == n)
    }

    pub fn mean(&self, metric: Metric, n: usize) -> Option<f64> {
        self.get(metric, n).map(|m| m.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Tab-separated group table: label, users, then `metric@N` means.
    pub fn groups_tsv(&self) -> String {
        let mut out = String::from("group\tusers");
        if let Some(g) = self.groups.first() {
            for m in &g.metrics {
                let name = match m.metric {
                    Metric::Hr => "hr",
                    Metric::Ndcg => "ndcg",
                };
                out.push_str(&format!("\t{name}@{}", m.n));
            }
        }
        out.push('\n');
        for g in &self.groups {
            out.push_str(&format!("{}\t{}", g.label, g.users));
            for m in &g.metrics {
                out.push_str(&format!("\t{:.6}", m.mean));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-user metric values of one repeat: `[hr@n..., ndcg@n...]`.
fn user_values(scorer: &impl Scorer, uc: &UserCandidates, cutoffs: &[usize]) -> Result<Vec<f64>> {
    let items: Vec<u32> = uc.targets.iter().chain(&uc.negatives).copied().collect();
    let scores: Vec<f64> = items.iter().map(|&i| scorer.score(uc.user, i)).collect();
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of user {} item {}", uc.user, items[bad])));
    }
    let ranked = rank_candidates(&items, &scores);
    let mut out = Vec::with_capacity(2 * cutoffs.len());
    for &n in cutoffs {
        out.push(hr_at_n(&ranked, &uc.targets, n)?);
    }
    for &n in cutoffs {
        out.push(ndcg_at_n(&ranked, &uc.targets, n)?);
    }
    Ok(out)
}

fn summaries(per_repeat: &[Vec<f64>], cutoffs: &[usize]) -> Vec<MetricSummary> {
    let c = cutoffs.len();
    let mut out = Vec::with_capacity(2 * c);
    for (offset, metric) in [(0, Metric::Hr), (c, Metric::Ndcg)] {
        for (j, &n) in cutoffs.iter().enumerate() {
            out.push(MetricSummary::new(metric, n, per_repeat.iter().map(|r| r[offset + j]).collect()));
        }
    }
    out
}

/// Mean of the per-user rows selected by `keep`.
fn mean_rows(rows: &[Vec<f64>], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let mut total = vec![0.0; width];
    let mut count = 0usize;
    for (k, row) in rows.iter().enumerate() {
        if keep(k) {
            count += 1;
            total.iter_mut().zip(row).for_each(|(t, v)| *t += v);
        }
    }
    total.iter().map(|t| if count == 0 { 0.0 } else { t / count as f64 }).collect()
}

/// Ranks every held-out user's targets against sampled negatives, once per
/// repeat, and averages uniformly over users.
pub fn evaluate_scores(
    scorer: &impl Scorer,
    split: &InteractionSplit,
    config: &EvalConfig,
    groups: Option<&SparsityGroups>,
) -> Result<RankingReport> {
    config.validate()?;
    let count = if config.all_items { usize::MAX } else { config.negatives };
    let cutoffs = &config.cutoffs;
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|r| config.seed.wrapping_add(r)).collect();

    let mut global = Vec::with_capacity(seeds.len());
    let mut per_group: Vec<Vec<Vec<f64>>> = vec![Vec::new(); groups.map_or(0, |g| g.labels.len())];
    let mut header = None;
    for &seed in &seeds {
        let candidates = sample_eval_negatives(split, config.holdout, count, seed);
        let rows: Vec<Vec<f64>> = candidates
            .users
            .par_iter()
            .map(|uc| user_values(scorer, uc, cutoffs))
            .collect::<Result<_>>()?;
        global.push(mean_rows(&rows, |_| true));
        if let Some(groups) = groups {
            for (g, acc) in per_group.iter_mut().enumerate() {
                acc.push(mean_rows(&rows, |k| groups.group_of(candidates.users[k].user) == g));
            }
        }
        header.get_or_insert_with(|| {
            let sizes: Vec<usize> = match groups {
                Some(groups) => (0..groups.labels.len())
                    .map(|g| candidates.users.iter().filter(|uc| groups.group_of(uc.user) == g).count())
                    .collect(),
                None => Vec::new(),
            };
            (candidates.users.len(), candidates.excluded_users, candidates.short_users, sizes)
        });
    }
    let (evaluated_users, excluded_users, short_users, sizes) = header.expect("at least one repeat");
    if evaluated_users == 0 {
        return Err(Error::Data(format!("no user has held-out {:?} items and a training positive", config.holdout)));
    }

    let (mut group_reports, mut empty_groups) = (Vec::new(), Vec::new());
    if let Some(groups) = groups {
        for (g, label) in groups.labels.iter().enumerate() {
            if sizes[g] == 0 {
                empty_groups.push(label.clone());
                continue;
            }
            group_reports.push(GroupReport {
                label: label.clone(),
                users: sizes[g],
                metrics: summaries(&per_group[g], cutoffs),
            });
        }
    }
    Ok(RankingReport {
        holdout: config.holdout,
        negatives: (!config.all_items).then_some(config.negatives),
        repeat_seeds: seeds,
        evaluated_users,
        excluded_users,
        short_users: if config.all_items { 0 } else { short_users },
        metrics: summaries(&global, cutoffs),
        groups: group_reports,
        empty_groups,
    })
}

/// Runs the diffusion once over the training graph and evaluates it.
pub fn evaluate(
    model: &Model,
    plan: &DiffusionPlan,
    params: &ParameterSet,
    split: &InteractionSplit,
    config: &EvalConfig,
    groups: Option<&SparsityGroups>,
) -> Result<RankingReport> {
    let state = model.forward_all(plan, params)?;
    evaluate_scores(&state, split, config, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sparsity_groups, split, HeteroGraph, SplitConfig};

    fn fixture() -> InteractionSplit {
        let pairs: Vec<(u32, u32)> = (0..60u32).flat_map(|u| (0..(4 + u % 25)).map(move |k| (u, (u * 11 + k * 7) % 400))).collect();
        let g = HeteroGraph::from_edges(60, 400, pairs, []).unwrap();
        split(&g, &SplitConfig::default(), 2).unwrap()
    }

    fn noisy(user: u32, item: u32) -> f64 {
        (((user as u64 * 2654435761 + item as u64 * 40503) % 1009) as f64).sin()
    }

    #[test]
    fn perfect_scores_hit_everything() {
        let s = fixture();
        let oracle = |u: u32, i: u32| if s.test.binary_search(&(u, i)).is_ok() { 1.0 } else { 0.0 };
        let cfg = EvalConfig {
            repeats: 2,
            ..EvalConfig::default()
        };
        let report = evaluate_scores(&oracle, &s, &cfg, None).unwrap();
        assert!(s.test.iter().all(|&(u, _)| s.test.iter().filter(|p| p.0 == u).count() <= 10));
        assert_eq!(report.mean(Metric::Hr, 10), Some(1.0));
        assert_eq!(report.mean(Metric::Ndcg, 15), Some(1.0));
    }

    #[test]
    fn mean_is_mean_of_repeats_and_seeds_follow_base() {
        let s = fixture();
        let cfg = EvalConfig {
            negatives: 50,
            seed: 40,
            ..EvalConfig::default()
        };
        let report = evaluate_scores(&noisy, &s, &cfg, None).unwrap();
        assert_eq!(report.repeat_seeds, vec![40, 41, 42, 43, 44]);
        for m in &report.metrics {
            assert_eq!(m.repeats.len(), 5);
            assert!((m.mean - m.repeats.iter().sum::<f64>() / 5.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&m.mean));
        }
        assert_eq!(report, evaluate_scores(&noisy, &s, &cfg, None).unwrap());
    }

    #[test]
    fn order_preserving_transform_leaves_metrics_unchanged() {
        let s = fixture();
        let cfg = EvalConfig {
            negatives: 50,
            ..EvalConfig::default()
        };
        let a = evaluate_scores(&noisy, &s, &cfg, None).unwrap();
        let shifted = |u: u32, i: u32| 3.0 * noisy(u, i) + 7.0;
        assert_eq!(a.metrics, evaluate_scores(&shifted, &s, &cfg, None).unwrap().metrics);
    }

    #[test]
    fn group_means_recombine_to_global() {
        let s = fixture();
        let cfg = EvalConfig {
            negatives: 50,
            ..EvalConfig::default()
        };
        let groups = sparsity_groups(&s, &[8, 16, 32, 64]).unwrap();
        let r = evaluate_scores(&noisy, &s, &cfg, Some(&groups)).unwrap();
        assert!(r.empty_groups.contains(&"[32,64)".to_string()));
        for (k, m) in r.metrics.iter().enumerate() {
            let weighted: f64 = r.groups.iter().map(|g| g.metrics[k].mean * g.users as f64).sum::<f64>() / r.evaluated_users as f64;
            assert!((weighted - m.mean).abs() < 1e-9);
        }
        let single = sparsity_groups(&s, &[1000]).unwrap();
        let r1 = evaluate_scores(&noisy, &s, &cfg, Some(&single)).unwrap();
        assert_eq!(r1.groups[0].metrics, r1.metrics);
        assert!(r1.groups_tsv().starts_with("group\tusers\thr@5"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let s = fixture();
        for cfg in [
            EvalConfig { cutoffs: vec![], ..EvalConfig::default() },
            EvalConfig { cutoffs: vec![0], ..EvalConfig::default() },
            EvalConfig { repeats: 0, ..EvalConfig::default() },
        ] {
            assert!(evaluate_scores(&noisy, &s, &cfg, None).is_err());
        }
    }
}
