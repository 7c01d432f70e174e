use std::time::Instant;

use log::{error, info};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::ParameterSet;
use crate::data::{sample_train_negatives, HeteroGraph, Holdout, InteractionSplit, Triple};
use crate::error::{Error, ErrorKind, Result};
use crate::eval::{evaluate, EvalConfig, Metric};
use crate::model::{BatchLoss, DiffusionPlan, Model};
use crate::train::{optimizer_step, AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Sampled negatives per training positive.
    pub neg_ratio: usize,
    pub lambda_reg: f64,
    pub max_epochs: usize,
    /// Epochs without a strict validation HR@10 improvement before stopping.
    pub patience: usize,
    /// Seeds the per-epoch negative samples and the validation candidates.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 512,
            neg_ratio: 8,
            lambda_reg: 0.01,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_negatives: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be finite and non-negative: {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.neg_ratio == 0 || self.max_epochs == 0 || self.validation_negatives == 0 {
            return fail("batch size, negative ratio, epochs and validation negatives must be positive".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return fail(format!("regularization weight must be non-negative: {}", self.lambda_reg));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return fail("moment decay rates must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epoch_seed: u64,
    pub triples: usize,
    /// Summed batch losses (ranking plus regularization) per triple.
    pub mean_loss: f64,
    pub mean_ranking_loss: f64,
    pub validation_hr10: Option<f64>,
    pub validation_ndcg10: Option<f64>,
    pub improved: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n")
            .collect()
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> TrainLog {
        let mut out = self.clone();
        out.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        out
    }
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer<'a> {
    model: &'a Model,
    plan: &'a DiffusionPlan,
    pub params: ParameterSet,
    adam: AdamState,
    adam_config: AdamConfig,
    lambda: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, plan: &'a DiffusionPlan, params: ParameterSet, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        model.layout().check(&params)?;
        Ok(Trainer {
            model,
            plan,
            adam: AdamState::new(&params),
            params,
            adam_config: config.adam(),
            lambda: config.lambda_reg,
        })
    }

    /// Full diffusion, loss, gradients and one optimizer update.
    pub fn step(&mut self, batch: &[Triple]) -> Result<BatchLoss> {
        let (loss, grads) = self.model.batch_loss(self.plan, &self.params, batch, self.lambda)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {}", loss.total)));
        }
        optimizer_step(&mut self.params, &grads, &mut self.adam, &self.adam_config)?;
        Ok(loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation HR@10 (the last epoch
    /// when there is no validation data).
    pub best: ParameterSet,
    pub last: ParameterSet,
    pub log: TrainLog,
}

/// Epoch loop: resample negatives, shuffle, batch, step; then validate and
/// keep the best parameters until patience runs out.
pub fn train(
    model: &Model,
    train_graph: &HeteroGraph,
    split: &InteractionSplit,
    params: ParameterSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let plan = DiffusionPlan::new(train_graph);
    let mut trainer = Trainer::new(model, &plan, params, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let validation_seed = rng.next_u64();
    let counts = split.train_counts();
    let has_validation = split.validation.iter().any(|&(u, _)| counts[u as usize] > 0);
    let validation = EvalConfig {
        cutoffs: vec![10],
        negatives: config.validation_negatives,
        all_items: false,
        repeats: 1,
        seed: validation_seed,
        holdout: Holdout::Validation,
    };

    let mut epochs = Vec::new();
    let mut best = trainer.params.clone();
    let (mut best_epoch, mut best_hr, mut stale) = (0, f64::NEG_INFINITY, 0);
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let epoch_seed = rng.next_u64();
        let samples = sample_train_negatives(split, config.neg_ratio, epoch_seed)?;
        let (mut total, mut ranking) = (0.0, 0.0);
        for (b, batch) in samples.triples.chunks(config.batch_size).enumerate() {
            let loss = trainer.step(batch).map_err(|e| {
                if e.kind() == ErrorKind::Numeric {
                    error!("training diverged at epoch {epoch}, batch {b}: {e}; batch starts with {:?}", &batch[..batch.len().min(4)]);
                    Error::NonFinite(format!("epoch {epoch} batch {b}: {e}"))
                } else {
                    e
                }
            })?;
            total += loss.total;
            ranking += loss.ranking;
        }
        let n = samples.triples.len().max(1) as f64;

        let (hr, ndcg) = if has_validation {
            let report = evaluate(model, &plan, &trainer.params, split, &validation, None)?;
            (report.mean(Metric::Hr, 10), report.mean(Metric::Ndcg, 10))
        } else {
            (None, None)
        };
        let improved = match hr {
            Some(h) => h > best_hr,
            None => true,
        };
        if improved {
            best = trainer.params.clone();
            best_epoch = epoch;
            best_hr = hr.unwrap_or(best_hr);
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            epoch_seed,
            triples: samples.triples.len(),
            mean_loss: total / n,
            mean_ranking_loss: ranking / n,
            validation_hr10: hr,
            validation_ndcg10: ndcg,
            improved,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.5} validation hr@10 {:?} ({:.2}s)",
            record.mean_loss, record.validation_hr10, record.wall_seconds
        );
        epochs.push(record);
        if stale >= config.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        last: trainer.params,
        log: TrainLog {
            epochs,
            best_epoch,
            stopped_early,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitConfig};
    use crate::model::ModelConfig;
    use crate::synthetic::{generate, SyntheticConfig};

    struct Fixture {
        graph: HeteroGraph,
        split: InteractionSplit,
        model: Model,
    }

    fn fixture(seed: u64) -> Fixture {
        let syn = SyntheticConfig {
            users: 40,
            items: 60,
            blocks: 2,
            positives_per_user: 12,
            followees_per_user: 4,
            ..SyntheticConfig::default()
        };
        let data = generate(&syn, seed).unwrap();
        let split = split(&data.graph, &SplitConfig { per_user: true, ..SplitConfig::default() }, seed).unwrap();
        let graph = split.train_graph(&data.graph).unwrap();
        let cfg = ModelConfig {
            dim: 8,
            depth: 1,
            ..ModelConfig::default()
        };
        let model = Model::for_graph(&cfg, &graph).unwrap();
        Fixture { graph, split, model }
    }

    fn config(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs,
            patience: 100,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_falls_on_planted_graph() {
        let f = fixture(1);
        let out = train(&f.model, &f.graph, &f.split, f.model.init_parameters(2), &config(5)).unwrap();
        let e = &out.log.epochs;
        assert_eq!(e.len(), 5);
        assert!(e[4].mean_loss < e[0].mean_loss, "{} vs {}", e[4].mean_loss, e[0].mean_loss);
        assert!(e.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let f = fixture(2);
        let init = f.model.init_parameters(2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..config(3)
        };
        let out = train(&f.model, &f.graph, &f.split, init.clone(), &cfg).unwrap();
        assert_eq!(out.last, init);
        assert_eq!(out.best, init);
        let hr: Vec<_> = out.log.epochs.iter().map(|e| e.validation_hr10).collect();
        assert!(hr.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn frozen_validation_with_patience_one_stops_after_two_epochs() {
        let f = fixture(3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            patience: 1,
            ..config(50)
        };
        let out = train(&f.model, &f.graph, &f.split, f.model.init_parameters(2), &cfg).unwrap();
        assert_eq!(out.log.epochs.len(), 2);
        assert!(out.log.stopped_early);
        assert_eq!(out.log.best_epoch, 1);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let f = fixture(4);
        let run = || train(&f.model, &f.graph, &f.split, f.model.init_parameters(5), &config(3)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.last, b.last);
        assert_eq!(a.log.without_timing(), b.log.without_timing());
        assert_eq!(a.log.without_timing().to_jsonl(), b.log.without_timing().to_jsonl());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let f = fixture(5);
        for cfg in [
            TrainConfig { patience: 0, ..config(1) },
            TrainConfig { batch_size: 0, ..config(1) },
            TrainConfig { learning_rate: f64::NAN, ..config(1) },
        ] {
            let err = train(&f.model, &f.graph, &f.split, f.model.init_parameters(0), &cfg).unwrap_err();
            assert_eq!(err.kind(), ErrorKind::Config);
        }
    }
}
