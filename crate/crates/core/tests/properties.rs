use diffnet_core::compute::ParameterSet;
use diffnet_core::eval::{hr_at_n, ndcg_at_n, rank_candidates};
use diffnet_core::model::{AttentionMode, DiffusionPlan, Model, ModelConfig};
use diffnet_core::synthetic::random_graph;
use diffnet_core::train::bpr_loss;
use proptest::prelude::*;

/// A random permutation of `0..len` together with a non-empty target subset.
fn ranking() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (2usize..60).prop_flat_map(|len| {
        let perm = Just((0..len as u32).collect::<Vec<_>>()).prop_shuffle();
        let targets = proptest::sample::subsequence((0..len as u32).collect::<Vec<_>>(), 1..=len.min(8));
        (perm, targets)
    })
}

proptest! {
    #[test]
    fn single_target_ndcg_never_exceeds_hr(len in 1usize..50, pos in 0usize..50, n in 1usize..20) {
        let ranked: Vec<u32> = (0..len as u32).collect();
        let target = [pos.min(len - 1) as u32];
        let hr = hr_at_n(&ranked, &target, n).unwrap();
        let ndcg = ndcg_at_n(&ranked, &target, n).unwrap();
        prop_assert!(ndcg <= hr);
        let rank = target[0] as usize + 1;
        prop_assert_eq!(ndcg == hr, rank == 1 || rank > n);
    }

    #[test]
    fn metrics_grow_with_the_cutoff((ranked, targets) in ranking(), n in 1usize..40) {
        prop_assert!(hr_at_n(&ranked, &targets, n).unwrap() <= hr_at_n(&ranked, &targets, n + 1).unwrap());
        let (a, b) = (ndcg_at_n(&ranked, &targets, n).unwrap(), ndcg_at_n(&ranked, &targets, n + 1).unwrap());
        // The ideal gain also grows with N while fewer targets than N exist,
        // so NDCG is only monotone once the cutoff covers every target.
        if n >= targets.len() {
            prop_assert!(a <= b + 1e-15);
        }
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ranking_matches_a_stable_sort(scores in proptest::collection::vec(-3i32..3, 1..80)) {
        let items: Vec<u32> = (0..scores.len() as u32).rev().collect();
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let mut oracle: Vec<(f64, u32)> = scores.iter().copied().zip(items.iter().copied()).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<u32> = oracle.into_iter().map(|(_, i)| i).collect();
        prop_assert_eq!(rank_candidates(&items, &scores), expected);
    }

    #[test]
    fn bpr_loss_falls_as_the_margin_grows(margin in -30.0f64..30.0, step in 1e-3f64..5.0) {
        let p = ParameterSet::new();
        prop_assert!(bpr_loss(&[margin + step], &[0.0], &p, 0.0) < bpr_loss(&[margin], &[0.0], &p, 0.0));
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, node_att in any::<bool>(), graph_att in any::<bool>()) {
        let g = random_graph(9, 11, 0.3, 0.25, seed).unwrap();
        let mode = |att: bool| if att { AttentionMode::Att } else { AttentionMode::Avg };
        let cfg = ModelConfig {
            dim: 4,
            depth: 2,
            node_attention: mode(node_att),
            graph_attention: mode(graph_att),
            ..ModelConfig::default()
        };
        let model = Model::for_graph(&cfg, &g).unwrap();
        let params = model.layout().init(seed, 0.7);
        let state = model.forward_all(&DiffusionPlan::new(&g), &params).unwrap();
        for layer in &state.attention {
            for rows in [&layer.item, &layer.social, &layer.interest].into_iter().flatten() {
                for row in rows.rows.iter().filter(|r| !r.is_empty()) {
                    prop_assert!(row.iter().all(|&(_, w)| w >= 0.0));
                    prop_assert!((row.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
            let gamma = layer.graph.as_ref().unwrap();
            for a in 0..gamma.rows() {
                let row = gamma.row(a);
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn metrics_ignore_order_preserving_transforms((ranked, targets) in ranking(), slope in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let scores: Vec<f64> = (0..ranked.len()).map(|p| -(p as f64)).collect();
        let moved: Vec<f64> = scores.iter().map(|s| slope * s + shift).collect();
        let a = rank_candidates(&ranked, &scores);
        let b = rank_candidates(&ranked, &moved);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(hr_at_n(&a, &targets, 10).unwrap(), hr_at_n(&b, &targets, 10).unwrap());
    }
}
