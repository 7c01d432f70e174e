//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use diffnet_cli::commands::{cmd_check_gradients, cmd_evaluate, cmd_preprocess, cmd_train, cmd_generate_synthetic, GradientCheckConfig};
use diffnet_cli::config::{RunConfig, Seeds};
use diffnet_cli::workdir::Workdir;
use diffnet_core::data::{split, HeteroGraph, SplitConfig};
use diffnet_core::eval::{attention_stats, evaluate_scores, hr_at_n, ndcg_at_n, EvalConfig, Metric};
use diffnet_core::model::{AttentionMode, DiffusionPlan, Model, ModelConfig, Variant};
use diffnet_core::synthetic::{random_graph, SyntheticConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [AttentionMode; 2] = [AttentionMode::Avg, AttentionMode::Att];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn model_config(variant: Variant, node: AttentionMode, graph: AttentionMode, dim: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        dim,
        depth,
        hidden: Some(4),
        node_attention: node,
        graph_attention: graph,
        variant,
        ..ModelConfig::default()
    }
}

fn gradient_audit() -> Verdict {
    let sizes = [(5, 7, 4, 1), (8, 10, 4, 2), (12, 20, 6, 2), (20, 30, 8, 1)];
    let variants = [Variant::Bpr, Variant::DiffNet, Variant::DiffNetPP];
    let (mut worst, mut cells, mut failed) = (0.0f64, 0, Vec::new());
    for (s, &(users, items, dim, depth)) in sizes.iter().enumerate() {
        let check = GradientCheckConfig {
            users,
            items,
            dim,
            depth,
            ..GradientCheckConfig::default()
        };
        let cfg = RunConfig {
            seeds: Seeds::from_base(s as u64),
            ..RunConfig::default()
        };
        let report = cmd_check_gradients(&cfg, &check, &variants).expect("audit runs");
        for c in &report.cells {
            worst = worst.max(c.max_rel_error);
            cells += 1;
            if !c.passed {
                failed.push(format!("{:?}/{:?}/{:?} M={users}: {:.2e}", c.variant, c.node_attention, c.graph_attention, c.max_rel_error));
            }
        }
    }
    verdict(
        failed.is_empty(),
        format!("{cells} cells, max relative error {worst:.2e} (< 1e-3) {failed:?}"),
    )
}

fn matrix_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut graphs) = (0.0f64, 0);
    for g in 0..120u64 {
        let m = rng.random_range(2..=30);
        let n = rng.random_range(2..=40);
        let graph = random_graph(m, n, rng.random_range(0.05..0.4), rng.random_range(0.0..0.3), g).unwrap();
        let node = MODES[(g % 2) as usize];
        let graph_mode = MODES[(g / 2 % 2) as usize];
        let variant = if g % 10 == 9 { Variant::DiffNet } else { Variant::DiffNetPP };
        let cfg = model_config(variant, node, graph_mode, rng.random_range(2..=6), rng.random_range(1..=3));
        let model = Model::for_graph(&cfg, &graph).unwrap();
        let params = model.layout().init(g, 0.5);
        let a = model.forward_all(&DiffusionPlan::new(&graph), &params).unwrap();
        let b = model.forward_matrix(&graph, &params).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
        graphs += 1;
    }
    verdict(worst < 1e-10, format!("{graphs} graphs, max |difference| {worst:.2e} (< 1e-10)"))
}

fn degeneracy() -> Verdict {
    let mut ok = true;
    let mut pairs = 0;
    for seed in 0..10u64 {
        let graph = random_graph(15, 20, 0.2, 0.2, seed).unwrap();
        let plan = DiffusionPlan::new(&graph);
        let pp = Model::for_graph(&model_config(Variant::DiffNetPP, AttentionMode::Att, AttentionMode::Att, 6, 0), &graph).unwrap();
        let bpr = Model::for_graph(&model_config(Variant::Bpr, AttentionMode::Att, AttentionMode::Att, 6, 2), &graph).unwrap();
        let params = pp.layout().init(seed, 0.5);
        let a = pp.forward_all(&plan, &params).unwrap();
        let b = bpr.forward_all(&plan, &params).unwrap();
        for u in 0..15 {
            for i in 0..20 {
                ok &= a.score(u, i).to_bits() == b.score(u, i).to_bits();
                pairs += 1;
            }
        }
        let deep = Model::for_graph(&model_config(Variant::DiffNetPP, AttentionMode::Att, AttentionMode::Att, 6, 2), &graph).unwrap();
        let deep_params = deep.layout().init(seed, 0.5);
        let state = deep.forward_all(&plan, &deep_params).unwrap();
        ok &= state.users[0] == *deep_params.get(deep.layout().user_embedding);
        ok &= state.items[0] == *deep_params.get(deep.layout().item_embedding);
    }
    verdict(ok, format!("{pairs} K=0 scores bit-identical to BPR; layer-0 users equal P on 10 graphs"))
}

fn attention_normalization() -> Verdict {
    let (mut worst, mut negative, mut rows) = (0.0f64, 0, 0);
    let mut avg_exact = true;
    for seed in 0..40u64 {
        let graph = random_graph(12, 15, 0.25, 0.25, seed).unwrap();
        let node = MODES[(seed % 2) as usize];
        let graph_mode = MODES[(seed / 2 % 2) as usize];
        let model = Model::for_graph(&model_config(Variant::DiffNetPP, node, graph_mode, 4, 2), &graph).unwrap();
        let params = model.layout().init(seed, 0.8);
        let state = model.forward_all(&DiffusionPlan::new(&graph), &params).unwrap();
        for layer in &state.attention {
            for r in [&layer.item, &layer.social, &layer.interest].into_iter().flatten() {
                for row in r.rows.iter().filter(|row| !row.is_empty()) {
                    worst = worst.max((row.iter().map(|p| p.1).sum::<f64>() - 1.0).abs());
                    negative += row.iter().filter(|p| p.1 < 0.0).count();
                    rows += 1;
                }
            }
            let gamma = layer.graph.as_ref().expect("graph weights are recorded");
            for a in 0..gamma.rows() {
                worst = worst.max((gamma.get(a, 0) + gamma.get(a, 1) - 1.0).abs());
                negative += gamma.row(a).iter().filter(|&&w| w < 0.0).count();
                rows += 1;
            }
        }
        if graph_mode == AttentionMode::Avg {
            for l in attention_stats(&state, &graph).layers {
                avg_exact &= l.users == 0 || (l.social_mean == 0.5 && l.interest_mean == 0.5);
            }
        }
    }
    verdict(
        worst < 1e-6 && negative == 0 && avg_exact,
        format!("{rows} rows, max |sum - 1| {worst:.2e}, {negative} negative weights, AVG means exactly 0.5: {avg_exact}"),
    )
}

fn brute_force(ranked: &[u32], targets: &[u32], n: usize) -> (f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (p, item) in ranked.iter().take(n).enumerate() {
        if targets.contains(item) {
            hits += 1;
            dcg += 1.0 / (p as f64 + 2.0).log2();
        }
    }
    let idcg: f64 = (0..n.min(targets.len())).map(|p| 1.0 / (p as f64 + 2.0).log2()).sum();
    (hits as f64 / targets.len() as f64, dcg / idcg)
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..300u32);
        let mut ranked: Vec<u32> = (0..len).collect();
        ranked.shuffle(&mut rng);
        let k = rng.random_range(1..=len.min(10)) as usize;
        let targets: Vec<u32> = ranked.choose_multiple(&mut rng, k).copied().collect();
        let n = rng.random_range(1..=20);
        let (hr, ndcg) = brute_force(&ranked, &targets, n);
        if hr_at_n(&ranked, &targets, n).unwrap() != hr || ndcg_at_n(&ranked, &targets, n).unwrap() != ndcg {
            mismatches += 1;
        }
    }

    let users = 10_000usize;
    let items = 1_101u32;
    let mut rates = Vec::new();
    for u in 0..users as u32 {
        let mut pair = [0u32; 2];
        while pair[0] == pair[1] {
            pair = [rng.random_range(0..items), rng.random_range(0..items)];
        }
        rates.extend(pair.map(|i| (u, i)));
    }
    let graph = HeteroGraph::from_edges(users, items as usize, rates, []).unwrap();
    let one_test = SplitConfig {
        test_frac: 0.5,
        val_frac: 0.0,
        per_user: true,
    };
    let split = split(&graph, &one_test, 1).unwrap();
    let salt: u64 = rng.random();
    let scorer = move |u: u32, i: u32| {
        let mut r = ChaCha8Rng::seed_from_u64(salt ^ ((u as u64) << 32 | i as u64));
        r.random::<f64>()
    };
    let eval = EvalConfig {
        cutoffs: vec![10],
        repeats: 1,
        ..EvalConfig::default()
    };
    let report = evaluate_scores(&scorer, &split, &eval, None).unwrap();
    let hr = report.mean(Metric::Hr, 10).unwrap();
    let expected = 10.0 / 1001.0;
    verdict(
        mismatches == 0 && (hr - expected).abs() <= 0.003,
        format!(
            "{mismatches}/1000 brute-force mismatches; random HR@10 {hr:.5} vs {expected:.5} over {} users (±0.003)",
            report.evaluated_users
        ),
    )
}

/// The planted graph: 200 users and 300 items in 4 blocks, 80% of links
/// within a block, 24 positives per user split 20/2/2 per user.
fn planted(seed: u64, variant: Variant, depth: usize, workdir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seeds: Seeds::from_base(seed),
        workdir: workdir.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.data.synthetic = Some(SyntheticConfig {
        users: 200,
        items: 300,
        blocks: 4,
        positives_per_user: 24,
        interest_homophily: 0.4,
        followees_per_user: 8,
        social_homophily: 0.8,
        popularity_exponent: 0.5,
    });
    cfg.data.split = SplitConfig {
        per_user: true,
        ..SplitConfig::default()
    };
    cfg.model = ModelConfig {
        dim: 16,
        depth,
        variant,
        ..ModelConfig::default()
    };
    cfg.train.max_epochs = 20;
    cfg.eval.cutoffs = vec![10];
    cfg.eval.repeats = 1;
    cfg
}

fn synthetic_end_to_end() -> Vec<(String, Verdict)> {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let wd = Workdir::new(dir.path(), false);
    let seeds = [101u64, 102, 103];
    let arms = [("bpr", Variant::Bpr, 0), ("k0", Variant::DiffNetPP, 0), ("k1", Variant::DiffNetPP, 1), ("k2", Variant::DiffNetPP, 2)];
    let mut hr = vec![Vec::new(); arms.len()];
    let mut ratios = Vec::new();
    for &seed in &seeds {
        for (a, &(_, variant, depth)) in arms.iter().enumerate() {
            let cfg = planted(seed, variant, depth, dir.path());
            let trained = cmd_train(&cfg, &wd).unwrap();
            assert_eq!(trained.dataset.split.train.len(), 200 * 20);
            let eval = cmd_evaluate(&cfg, &wd, &trained.checkpoint).unwrap();
            hr[a].push(eval.record.report.mean(Metric::Hr, 10).unwrap());
            if depth == 2 {
                let e = &trained.log.epochs;
                ratios.push(e[9].mean_loss / e[0].mean_loss);
            }
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let (bpr, k0, k1, k2) = (mean(&hr[0]), mean(&hr[1]), mean(&hr[2]), mean(&hr[3]));
    let secs = started.elapsed().as_secs_f64();
    let fmt = |v: &Vec<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    vec![
        (
            "6a synthetic loss epoch 10 < 60% of epoch 1".into(),
            verdict(
                ratios.iter().all(|&r| r < 0.6),
                format!("DiffNet++ K=2 loss ratios {}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join("/")),
            ),
        ),
        (
            "6b synthetic DiffNet++ HR@10 >= 1.15x BPR".into(),
            verdict(
                k2 >= 1.15 * bpr,
                format!("mean over seeds {seeds:?}: DiffNet++ {k2:.4} ({}) vs BPR {bpr:.4} ({}), ratio {:.3}", fmt(&hr[3]), fmt(&hr[0]), k2 / bpr),
            ),
        ),
        (
            "6c synthetic K=1 and K=2 beat K=0".into(),
            verdict(
                k1 > k0 && k2 > k0,
                format!("HR@10 K=0 {k0:.4} ({}), K=1 {k1:.4} ({}), K=2 {k2:.4}", fmt(&hr[1]), fmt(&hr[2])),
            ),
        ),
        ("6 synthetic runtime < 10 min".into(), verdict(secs < 600.0, format!("{secs:.1}s"))),
    ]
}

fn determinism() -> Verdict {
    let raw = tempfile::tempdir().unwrap();
    let gen = RunConfig {
        seeds: Seeds::from_base(21),
        ..RunConfig::default()
    };
    cmd_generate_synthetic(&gen, raw.path()).unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            seeds: Seeds::from_base(21),
            workdir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        cfg.data.ratings = Some(raw.path().join("ratings.tsv"));
        cfg.data.links = Some(raw.path().join("links.tsv"));
        cfg.model.dim = 8;
        cfg.train.max_epochs = 5;
        cfg.eval.repeats = 2;
        let wd = Workdir::new(dir.path(), false);
        let ds = cmd_preprocess(&cfg, &wd).unwrap();
        let trained = cmd_train(&cfg, &wd).unwrap();
        let eval = cmd_evaluate(&cfg, &wd, &trained.checkpoint).unwrap();
        let files: Vec<Vec<u8>> = ["interactions.tsv", "links.tsv", "train.tsv", "test.tsv", "manifest.json"]
            .iter()
            .map(|f| fs::read(ds.dir.join(f)).unwrap())
            .collect();
        (
            files,
            fs::read(&trained.checkpoint).unwrap(),
            trained.log.without_timing(),
            fs::read(&eval.report_path).unwrap(),
            dir,
        )
    };
    let a = run();
    let b = run();
    let same = (a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3);
    verdict(
        same == (true, true, true, true),
        format!(
            "preprocessed artifacts {}, checkpoints {}, logs without timing {}, reports ({} bytes) {}",
            same.0, same.1, same.2, a.3.len(), same.3
        ),
    )
}

type Results = Vec<(String, Verdict, f64)>;

fn report(results: &mut Results, name: &str, v: Verdict, secs: f64) {
    println!("criterion {name}: {} ({}; {secs:.1}s)", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    results.push((name.to_string(), v, secs));
}

fn timed(results: &mut Results, name: &str, f: fn() -> Verdict) {
    let t = Instant::now();
    let v = f();
    report(results, name, v, t.elapsed().as_secs_f64());
}

fn main() {
    let mut results = Results::new();
    timed(&mut results, "1 gradient audit", gradient_audit);
    timed(&mut results, "2 matrix/node equivalence", matrix_equivalence);
    timed(&mut results, "3 degeneracy", degeneracy);
    timed(&mut results, "4 attention normalization", attention_normalization);
    timed(&mut results, "5 metric oracles", metric_oracles);
    let t = Instant::now();
    let synthetic = synthetic_end_to_end();
    let secs = t.elapsed().as_secs_f64();
    for (name, v) in synthetic {
        report(&mut results, &name, v, secs);
    }
    timed(&mut results, "7 determinism", determinism);

    let budget = [("1 gradient audit", 120.0), ("2 matrix/node equivalence", 60.0)];
    for (name, limit) in budget {
        if let Some(r) = results.iter().find(|r| r.0 == name) {
            let ok = r.2 < limit;
            println!("criterion {name} runtime < {limit:.0}s: {} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, r.2);
            if !ok {
                results.push((format!("{name} runtime"), verdict(false, String::new()), 0.0));
            }
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.passed).map(|r| r.0.as_str()).collect();
    println!("acceptance: {} of {} checks passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
