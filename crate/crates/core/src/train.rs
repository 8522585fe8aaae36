//! Supervised training of an encoder plus GNN head on one task.
//!
//! Each batch of seed rows is split into fixed-size chunks. Chunks sample
//! subgraphs, encode and back-propagate on their own tapes in parallel; their
//! gradients are summed in chunk order before one optimizer step, so results
//! do not depend on the thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::NodeEncoder;
use crate::error::{Error, Result};
use crate::gnn::{self, BatchGraph, GnnConfig};
use crate::graph::{HeteroTemporalGraph, NodeRef};
use crate::metrics;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParameterStore;
use crate::perceiver::Pass;
use crate::sampler::{check_temporal, sample_subgraph, SamplerConfig, Subgraph};
use crate::schema::RelationalDatabase;
use crate::task::{median, TaskData, TaskKind, TaskSpec};
use crate::tensor::DenseArray;

/// Seeds per parallel work unit.
pub const CHUNK: usize = 16;

const SAMPLE_SALT: u64 = 0x5eed_0001;
const DROPOUT_SALT: u64 = 0x5eed_0002;
const EVAL_SALT: u64 = 0x5eed_0003;
const SHUFFLE_SALT: u64 = 0x5eed_0004;
const GNN_SALT: u64 = 0x5eed_0005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub sampler: SamplerConfig,
    pub gnn: GnnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            sampler: SamplerConfig::default(),
            gnn: GnnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.optimizer.lr < 0.0 || !self.optimizer.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be ≥ 0, got {}", self.optimizer.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,split,metric,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.metric, r.value));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub task: String,
    pub kind: TaskKind,
    pub metric: &'static str,
    pub history: Vec<HistoryRow>,
    /// Epoch (from 1) with the best validation metric.
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_at_best: f64,
    pub steps: usize,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug)]
pub struct TrainedModel {
    /// Parameters from the best validation epoch.
    pub store: ParameterStore,
    pub report: TrainReport,
}

fn rng_for(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classification => "auc",
        TaskKind::Regression => "mae",
    }
}

/// AUC of raw scores for classification, MAE for regression.
pub fn evaluate(kind: TaskKind, predictions: &[f64], labels: &[f64]) -> Result<f64> {
    match kind {
        TaskKind::Classification => metrics::auc(predictions, labels),
        TaskKind::Regression => metrics::mae(predictions, labels),
    }
}

fn better(kind: TaskKind, candidate: f64, best: f64) -> bool {
    match kind {
        TaskKind::Classification => candidate > best,
        TaskKind::Regression => candidate < best,
    }
}

/// Encoder parameters from `seed` plus freshly initialized GNN weights.
pub fn init_model(
    encoder: &dyn NodeEncoder,
    gnn: &GnnConfig,
    graph: &HeteroTemporalGraph,
    seed: u64,
) -> Result<ParameterStore> {
    let mut store = encoder.init_params(seed)?;
    let mut head = ParameterStore::new();
    gnn.register(&mut head, encoder.d(), graph.edge_types.len(), &mut ChaCha8Rng::seed_from_u64(seed ^ GNN_SALT))?;
    store.merge(head)?;
    Ok(store)
}

/// Shared inputs of a training or inference run.
pub struct Setup<'a> {
    pub db: &'a RelationalDatabase,
    pub graph: &'a HeteroTemporalGraph,
    pub encoder: &'a dyn NodeEncoder,
    pub config: &'a TrainConfig,
    pub target: usize,
    pub seed_time: Option<i64>,
}

impl<'a> Setup<'a> {
    pub fn new(
        db: &'a RelationalDatabase,
        graph: &'a HeteroTemporalGraph,
        encoder: &'a dyn NodeEncoder,
        config: &'a TrainConfig,
        task: &TaskSpec,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            db,
            graph,
            encoder,
            config,
            target: task.target_index(db)?,
            seed_time: task.seed_time,
        })
    }

    /// Samples one subgraph per target row and checks its cutoff.
    fn sample(&self, rows: &[usize], mut rng_of: impl FnMut(usize) -> ChaCha8Rng) -> Result<Vec<Subgraph>> {
        rows.iter()
            .enumerate()
            .map(|(i, &r)| {
                let sub = sample_subgraph(
                    self.graph,
                    NodeRef::new(self.target, r),
                    self.seed_time,
                    &self.config.sampler,
                    &mut rng_of(i),
                );
                check_temporal(self.graph, &sub)?;
                Ok(sub)
            })
            .collect()
    }

    /// Encodes every distinct node once, propagates and reads out the
    /// seeds. Returns an `n × 1` matrix.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        subgraphs: &[Subgraph],
        pass: &mut Pass,
    ) -> Result<Var> {
        let batch = BatchGraph::from_subgraphs(subgraphs, self.graph.edge_types.len());
        let mut by_type: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for n in &batch.nodes {
            by_type.entry(n.ntype).or_default().push(n.row);
        }
        let mut position: BTreeMap<NodeRef, usize> = BTreeMap::new();
        let mut blocks = Vec::new();
        for (ntype, rows) in by_type.iter_mut() {
            rows.sort_unstable();
            rows.dedup();
            for &r in rows.iter() {
                let next = position.len();
                position.insert(NodeRef::new(*ntype, r), next);
            }
            blocks.push(self.encoder.encode_rows(tape, store, &self.db.tables[*ntype], rows, pass)?);
        }
        let unique = if blocks.len() == 1 { blocks[0] } else { tape.concat_rows(&blocks)? };
        let index: Vec<usize> = batch.nodes.iter().map(|n| position[n]).collect();
        let h0 = tape.gather_rows(unique, &index)?;
        let h = gnn::propagate(tape, store, &self.config.gnn, h0, &batch)?;
        gnn::readout(tape, store, h, &batch.seeds)
    }

    /// Inference outputs for target `rows`, sampled with a per-row stream so
    /// repeated calls agree.
    pub fn predict(&self, store: &ParameterStore, rows: &[usize], seed: u64) -> Result<Vec<f64>> {
        let chunks: Vec<Vec<f64>> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let subs = self.sample(chunk, |i| rng_for(seed, EVAL_SALT, chunk[i] as u64))?;
                let mut tape = Tape::no_grad();
                let out = self.forward(&mut tape, store, &subs, &mut Pass::eval())?;
                Ok(tape.value(out).data().to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }

    fn score(&self, kind: TaskKind, store: &ParameterStore, split: &[(usize, f64)], seed: u64) -> Result<f64> {
        let rows: Vec<usize> = split.iter().map(|r| r.0).collect();
        let labels: Vec<f64> = split.iter().map(|r| r.1).collect();
        evaluate(kind, &self.predict(store, &rows, seed)?, &labels)
    }
}

/// Trains for `config.epochs` epochs and keeps the best validation epoch.
/// Regression heads start at the median training target, the constant
/// minimizing L1 loss.
pub fn train(setup: &Setup<'_>, task: &TaskSpec, data: &TaskData, seed: u64) -> Result<TrainedModel> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config(format!("task `{}` has an empty train or validation split", task.name)));
    }
    let cfg = setup.config;
    let metric = metric_name(task.kind);
    let mut store = init_model(setup.encoder, &cfg.gnn, setup.graph, seed)?;
    if task.kind == TaskKind::Regression {
        let mut ys: Vec<f64> = data.train.iter().map(|r| r.1).collect();
        let m = median(&mut ys).unwrap_or(0.0);
        store.set_value(gnn::HEAD_B, DenseArray::filled(&[1, 1], m))?;
    }
    let mut opt = AdamW::new(cfg.optimizer);
    let mut history = Vec::new();
    let has_test = !data.test.is_empty();
    let record = |history: &mut Vec<HistoryRow>, epoch: usize, store: &ParameterStore| -> Result<(f64, f64)> {
        let val = setup.score(task.kind, store, &data.val, seed)?;
        history.push(HistoryRow { epoch, split: "val", metric, value: val });
        let test = if has_test { setup.score(task.kind, store, &data.test, seed)? } else { f64::NAN };
        if has_test {
            history.push(HistoryRow { epoch, split: "test", metric, value: test });
        }
        Ok((val, test))
    };
    record(&mut history, 0, &store)?;

    let mut best: Option<(usize, f64, f64, ParameterStore)> = None;
    let mut step = 0usize;
    let mut order = data.train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(seed, SHUFFLE_SALT, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            step += 1;
            let stream_base = ((epoch as u64) << 32) | ((b * cfg.batch_size) as u64);
            let n = batch.len() as f64;
            let parts: Vec<(f64, ParameterStore)> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let rows: Vec<usize> = chunk.iter().map(|r| r.0).collect();
                    let labels: Vec<f64> = chunk.iter().map(|r| r.1).collect();
                    let base = stream_base + (c * CHUNK) as u64;
                    let subs = setup.sample(&rows, |i| rng_for(seed, SAMPLE_SALT, base + i as u64))?;
                    let mut pass = Pass {
                        rng: rng_for(seed, DROPOUT_SALT, base),
                        ..Pass::train(0)
                    };
                    let mut grads = store.clone();
                    grads.zero_grad();
                    let mut tape = Tape::new();
                    let out = setup.forward(&mut tape, &grads, &subs, &mut pass)?;
                    let loss = match task.kind {
                        TaskKind::Classification => tape.bce_with_logits(out, &labels)?,
                        TaskKind::Regression => tape.l1_loss(out, &labels)?,
                    };
                    let weighted = tape.scale(loss, chunk.len() as f64 / n);
                    let value = tape.value(weighted).data()[0];
                    tape.backward(weighted, &mut grads)?;
                    Ok((value, grads))
                })
                .collect::<Result<_>>()?;
            let loss: f64 = parts.iter().map(|p| p.0).sum();
            if !loss.is_finite() {
                return Err(Error::Training { step, loss });
            }
            for (_, grads) in &parts {
                for (name, p) in grads.iter() {
                    if p.trainable() {
                        store.accumulate_grad(name, p.grad())?;
                    }
                }
            }
            opt.step(&mut store, step as u64)?;
            loss_sum += loss;
            batches += 1;
        }
        history.push(HistoryRow {
            epoch,
            split: "train",
            metric: "loss",
            value: loss_sum / batches as f64,
        });
        let (val, test) = record(&mut history, epoch, &store)?;
        log::info!("{} epoch {epoch}: val {metric} {val:.4}", task.name);
        if best.as_ref().is_none_or(|b| better(task.kind, val, b.1)) {
            best = Some((epoch, val, test, store.clone()));
        }
    }
    let (best_epoch, best_val, test_at_best, best_store) = best.expect("at least one epoch");
    Ok(TrainedModel {
        store: best_store,
        report: TrainReport {
            task: task.name.clone(),
            kind: task.kind,
            metric,
            history,
            best_epoch,
            best_val,
            test_at_best,
            steps: step,
            train_rows: data.train.len(),
            val_rows: data.val.len(),
            test_rows: data.test.len(),
        },
    })
}
