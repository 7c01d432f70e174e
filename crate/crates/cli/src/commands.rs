//! The work behind each subcommand. Every function is a pure function of the
//! run configuration and its input files, apart from timing fields.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffnet_core::compute::{finite_difference_audit, ArrayAudit, Tensor};
use diffnet_core::data::{sample_train_negatives, sparsity_groups, split, SplitConfig};
use diffnet_core::eval::{attention_stats, evaluate_scores, AttentionStats, Metric, RankingReport};
use diffnet_core::model::{
    read_checkpoint, write_checkpoint, AttentionMode, BatchObjective, Checkpoint, DiffusionPlan, Model, Variant,
};
use diffnet_core::synthetic::{generate, random_graph};
use diffnet_core::train::{train, TrainLog};
use diffnet_core::{Error, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{prepare, Dataset};
use crate::workdir::{content_hash, short, Workdir};

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn cmd_preprocess(cfg: &RunConfig, wd: &Workdir) -> Result<Dataset> {
    cfg.validate()?;
    prepare(cfg, wd)
}

#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub dataset: Dataset,
    pub run_hash: String,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
    /// Whether an existing checkpoint was reused instead of training.
    pub reused: bool,
    pub train_seconds: f64,
}

/// Hash of everything a checkpoint depends on.
pub fn run_hash(cfg: &RunConfig, data_hash: &str) -> Result<String> {
    let model = cfg.model.normalized()?;
    Ok(content_hash([
        b"diffnet-run-v1".as_slice(),
        data_hash.as_bytes(),
        &serde_json::to_vec(&model).expect("model config serializes"),
        &serde_json::to_vec(&cfg.train_config()).expect("train config serializes"),
        &cfg.seeds.init.to_le_bytes(),
    ]))
}

pub fn cmd_train(cfg: &RunConfig, wd: &Workdir) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let dataset = prepare(cfg, wd)?;
    let model = Model::for_graph(&cfg.model, &dataset.train_graph)?;
    let hash = run_hash(cfg, &dataset.hash)?;
    let dir = wd.checkpoints()?;
    let checkpoint = dir.join(format!("{}.dnpp", short(&hash)));
    let log_path = dir.join(format!("{}.trainlog.json", short(&hash)));
    if checkpoint.is_file() && log_path.is_file() && !wd.force {
        info!("reusing checkpoint {}", checkpoint.display());
        let log = read_json(&log_path)?;
        return Ok(TrainArtifacts {
            dataset,
            run_hash: hash,
            checkpoint,
            log_path,
            log,
            reused: true,
            train_seconds: 0.0,
        });
    }
    let started = Instant::now();
    let params = model.init_parameters(cfg.seeds.init);
    let outcome = train(&model, &dataset.train_graph, &dataset.split, params, &cfg.train_config())?;
    let train_seconds = started.elapsed().as_secs_f64();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &model, &outcome.best, cfg.seeds.init)?;
    wd.write(&checkpoint, &bytes)?;
    let forced = Workdir::new(wd.root(), true);
    forced.write(&log_path, &json_bytes(&outcome.log))?;
    forced.write(&log_path.with_extension("jsonl"), outcome.log.to_jsonl().as_bytes())?;
    info!(
        "trained {} epochs (best {}) in {:.1}s; checkpoint {}",
        outcome.log.epochs.len(),
        outcome.log.best_epoch,
        train_seconds,
        checkpoint.display()
    );
    Ok(TrainArtifacts {
        dataset,
        run_hash: hash,
        checkpoint,
        log_path,
        log: outcome.log,
        reused: false,
        train_seconds,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: Option<f64>,
    pub eval_seconds: f64,
}

/// Everything needed to audit or repeat one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: RunConfig,
    /// Hash of the preprocessed inputs.
    pub input_hash: String,
    pub checkpoint_hash: String,
    pub train_log: Option<TrainLog>,
    pub report: RankingReport,
    pub attention: AttentionStats,
    pub timings: Timings,
}

#[derive(Clone, Debug)]
pub struct EvalArtifacts {
    pub report_path: PathBuf,
    pub groups_path: Option<PathBuf>,
    pub record_path: PathBuf,
    pub record: ExperimentRecord,
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("checkpoint not found: {}", path.display())))
    }
}

fn load_model(path: &Path, dataset: &Dataset) -> Result<(Vec<u8>, Checkpoint, Model)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = read_checkpoint(&mut bytes.as_slice())?;
    let model = ckpt.model()?;
    let expected = Model::for_graph(&ckpt.config, &dataset.train_graph)?;
    if expected.dims() != model.dims() {
        return Err(Error::Data(format!(
            "{} was trained on {:?}, but the configured data has {:?}",
            path.display(),
            model.dims(),
            expected.dims()
        )));
    }
    Ok((bytes, ckpt, model))
}

/// Ranks held-out test items with a stored checkpoint.
pub fn cmd_evaluate(cfg: &RunConfig, wd: &Workdir, checkpoint: &Path) -> Result<EvalArtifacts> {
    cfg.validate()?;
    require_file(checkpoint)?;
    let dataset = prepare(cfg, wd)?;
    let (bytes, ckpt, model) = load_model(checkpoint, &dataset)?;
    let started = Instant::now();
    let state = model.forward_all(&DiffusionPlan::new(&dataset.train_graph), &ckpt.params)?;
    let groups = if cfg.eval.groups.is_empty() {
        None
    } else {
        Some(sparsity_groups(&dataset.split, &cfg.eval.groups)?)
    };
    let report = evaluate_scores(&state, &dataset.split, &cfg.eval_config(), groups.as_ref())?;
    let attention = attention_stats(&state, &dataset.train_graph);
    let eval_seconds = started.elapsed().as_secs_f64();

    let checkpoint_hash = content_hash([bytes.as_slice()]);
    let hash = content_hash([
        b"diffnet-eval-v1".as_slice(),
        checkpoint_hash.as_bytes(),
        dataset.hash.as_bytes(),
        &serde_json::to_vec(&cfg.eval).expect("eval settings serialize"),
        &cfg.seeds.eval.to_le_bytes(),
    ]);
    let reports = wd.reports()?;
    let name = short(&hash);
    let report_path = reports.join(format!("{name}.report.json"));
    wd.write(&report_path, (report.to_json() + "\n").as_bytes())?;
    let groups_path = if groups.is_some() {
        let path = reports.join(format!("{name}.groups.tsv"));
        wd.write(&path, report.groups_tsv().as_bytes())?;
        Some(path)
    } else {
        None
    };
    let log_path = checkpoint.with_extension("trainlog.json");
    let train_log: Option<TrainLog> = if log_path.is_file() { Some(read_json(&log_path)?) } else { None };
    let record = ExperimentRecord {
        config: cfg.clone(),
        input_hash: dataset.hash.clone(),
        checkpoint_hash,
        timings: Timings {
            train_seconds: train_log.as_ref().map(|l| l.epochs.iter().map(|e| e.wall_seconds).sum()),
            eval_seconds,
        },
        train_log,
        report,
        attention,
    };
    let record_path = reports.join(format!("{name}.record.json"));
    Workdir::new(wd.root(), true).write(&record_path, &json_bytes(&record))?;
    Ok(EvalArtifacts {
        report_path,
        groups_path,
        record_path,
        record,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub depth: usize,
    pub node_attention: AttentionMode,
    pub graph_attention: AttentionMode,
    pub hr10: f64,
    pub ndcg10: f64,
    pub best_epoch: usize,
    /// Scalars in attention perceptron arrays (all of them are regularized).
    pub attention_parameters: usize,
    pub parameters: usize,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tK\tnode\tgraph\tHR@10\tNDCG@10\tbest_epoch\tattention_params\tparams\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?}\t{}\t{:?}\t{:?}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                r.variant,
                r.depth,
                r.node_attention,
                r.graph_attention,
                r.hr10,
                r.ndcg10,
                r.best_epoch,
                r.attention_parameters,
                r.parameters
            );
        }
        out
    }
}

/// Trains and evaluates one cell per `(K, node mode, graph mode)`.
pub fn cmd_ablate(
    cfg: &RunConfig,
    wd: &Workdir,
    depths: &[usize],
    modes: &[(AttentionMode, AttentionMode)],
) -> Result<(AblationTable, PathBuf)> {
    if depths.is_empty() || modes.is_empty() {
        return Err(Error::Config("the ablation grid is empty".into()));
    }
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for &depth in depths {
        for &(node, graph) in modes {
            let mut cell = cfg.clone();
            cell.model.depth = depth;
            cell.model.node_attention = node;
            cell.model.graph_attention = graph;
            let trained = cmd_train(&cell, wd)?;
            let eval = cmd_evaluate(&cell, wd, &trained.checkpoint)?;
            let ckpt = read_checkpoint(&mut fs::read(&trained.checkpoint).map_err(|e| Error::io(&trained.checkpoint, e))?.as_slice())?;
            let attention_parameters = ckpt
                .params
                .iter()
                .filter(|(_, name, _)| name.contains("attention"))
                .map(|(_, _, t)| t.len())
                .sum();
            let report = &eval.record.report;
            rows.push(AblationRow {
                variant: ckpt.config.variant,
                depth: ckpt.config.depth,
                node_attention: node,
                graph_attention: graph,
                hr10: report.mean(Metric::Hr, 10).unwrap_or(f64::NAN),
                ndcg10: report.mean(Metric::Ndcg, 10).unwrap_or(f64::NAN),
                best_epoch: trained.log.best_epoch,
                attention_parameters,
                parameters: ckpt.params.scalar_count(),
                checkpoint: trained.checkpoint.clone(),
            });
            names.push(eval.record.checkpoint_hash.clone());
        }
    }
    let table = AblationTable { rows };
    let hash = content_hash(names.iter().map(|n| n.as_bytes()));
    let path = wd.reports()?.join(format!("{}.ablation.tsv", short(&hash)));
    wd.write(&path, table.to_tsv().as_bytes())?;
    wd.write(&path.with_extension("json"), &json_bytes(&table))?;
    Ok((table, path))
}

/// Sizes and tolerance of the micro-model gradient audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientCheckConfig {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub depth: usize,
    pub hidden: usize,
    pub samples_per_array: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Standard deviation of the random parameters.
    pub init_std: f64,
    pub lambda: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            users: 8,
            items: 10,
            dim: 4,
            depth: 2,
            hidden: 3,
            samples_per_array: 25,
            eps: 1e-6,
            tolerance: 1e-3,
            init_std: 0.5,
            lambda: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCell {
    pub variant: Variant,
    pub node_attention: AttentionMode,
    pub graph_attention: AttentionMode,
    pub max_rel_error: f64,
    pub passed: bool,
    pub arrays: Vec<ArrayAudit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub tolerance: f64,
    pub passed: bool,
    pub cells: Vec<GradientCell>,
}

/// Finite-difference audit of the batch loss on small random graphs, for the
/// given variants under every pair of attention modes.
pub fn cmd_check_gradients(cfg: &RunConfig, check: &GradientCheckConfig, variants: &[Variant]) -> Result<GradientCheck> {
    let seed = cfg.seeds.init;
    let mut graph = random_graph(check.users, check.items, 0.35, 0.3, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_features = |rows: usize| {
        let values = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, 3, values)
    };
    if cfg.model.use_user_features {
        graph.set_user_features(random_features(check.users)?)?;
    }
    if cfg.model.use_item_features {
        graph.set_item_features(random_features(check.items)?)?;
    }
    let all_train = SplitConfig {
        test_frac: 0.0,
        val_frac: 0.0,
        per_user: false,
    };
    let triples = sample_train_negatives(&split(&graph, &all_train, seed)?, 1, seed)?.triples;
    let plan = DiffusionPlan::new(&graph);
    let modes = [AttentionMode::Avg, AttentionMode::Att];
    let mut cells = Vec::new();
    for &variant in variants {
        for node in modes {
            for graph_mode in modes {
                let mut model_cfg = cfg.model.clone();
                model_cfg.variant = variant;
                model_cfg.dim = check.dim;
                model_cfg.depth = check.depth;
                model_cfg.hidden = Some(check.hidden);
                model_cfg.node_attention = node;
                model_cfg.graph_attention = graph_mode;
                let model = Model::for_graph(&model_cfg, &graph)?;
                let params = model.layout().init_dense(seed, check.init_std);
                let objective = BatchObjective {
                    model: &model,
                    plan: &plan,
                    triples: &triples,
                    lambda: check.lambda,
                };
                let audit = finite_difference_audit(&objective, &params, check.eps, check.samples_per_array, seed)?;
                cells.push(GradientCell {
                    variant,
                    node_attention: node,
                    graph_attention: graph_mode,
                    max_rel_error: audit.max_rel_error,
                    passed: audit.max_rel_error < check.tolerance,
                    arrays: audit.arrays,
                });
            }
        }
    }
    Ok(GradientCheck {
        tolerance: check.tolerance,
        passed: cells.iter().all(|c| c.passed),
        cells,
    })
}

/// Graph-level weight statistics plus every user's per-layer weights.
pub fn cmd_export_attention(cfg: &RunConfig, wd: &Workdir, checkpoint: &Path) -> Result<(AttentionStats, PathBuf)> {
    cfg.validate()?;
    require_file(checkpoint)?;
    let dataset = prepare(cfg, wd)?;
    let (bytes, ckpt, model) = load_model(checkpoint, &dataset)?;
    let state = model.forward_all(&DiffusionPlan::new(&dataset.train_graph), &ckpt.params)?;
    let stats = attention_stats(&state, &dataset.train_graph);
    let mut table = String::from("layer\tuser\tsocial\tinterest\n");
    for (k, layer) in state.attention.iter().enumerate() {
        if let Some(gamma) = &layer.graph {
            for u in 0..gamma.rows() {
                let ids = dataset.train_graph.user_ids();
                let _ = writeln!(table, "{}\t{}\t{:?}\t{:?}", k + 1, ids.raw_of(u as u32), gamma.get(u, 0), gamma.get(u, 1));
            }
        }
    }
    let name = content_hash([b"diffnet-attention-v1".as_slice(), &bytes, dataset.hash.as_bytes()]);
    let path = wd.reports()?.join(format!("{}.attention.json", short(&name)));
    wd.write(&path, &json_bytes(&stats))?;
    wd.write(&path.with_extension("tsv"), table.as_bytes())?;
    Ok((stats, path))
}

/// Writes a planted-preference graph as raw rating and link files that
/// `preprocess` can read.
pub fn cmd_generate_synthetic(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let syn = cfg.data.synthetic.clone().unwrap_or_default();
    let data = generate(&syn, cfg.seeds.data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (ratings, links) = data.graph.to_raw(5);
    let mut r = String::new();
    for rec in &ratings.records {
        let _ = writeln!(r, "{}\t{}\t{}", rec.user, rec.item, rec.rating);
    }
    let mut l = String::new();
    for (a, b) in &links.records {
        let _ = writeln!(l, "{a}\t{b}");
    }
    let mut blocks = String::from("id\tblock\n");
    let g = &data.graph;
    for (u, b) in data.user_block.iter().enumerate() {
        let _ = writeln!(blocks, "{}\t{b}", g.user_ids().raw_of(u as u32));
    }
    for (i, b) in data.item_block.iter().enumerate() {
        let _ = writeln!(blocks, "{}\t{b}", g.item_ids().raw_of(i as u32));
    }
    let files = [("ratings.tsv", r), ("links.tsv", l), ("blocks.tsv", blocks)];
    let mut paths = Vec::new();
    for (name, text) in files {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
