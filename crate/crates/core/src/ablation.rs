//! Latent cross-attention against full self-attention over column tokens.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::encoder::{Aggregator, RelateConfig, RelateEncoder};
use crate::error::{Error, Result};
use crate::graph::HeteroTemporalGraph;
use crate::params::ParameterStore;
use crate::perceiver::{self, Pass, PerceiverConfig};
use crate::schema::RelationalDatabase;
use crate::task::{TaskKind, TaskSpec};
use crate::tensor::DenseArray;
use crate::text::TokenTable;
use crate::train::{train, Setup, TrainConfig};

/// Rows encoded when counting attention scores.
pub const COUNT_ROWS: usize = 32;

/// Reference band for the full-SA / cross AUC ratio.
pub const REFERENCE_BAND: [f64; 2] = [0.90, 1.01];

/// Attention-score entries measured on an eval pass and their closed forms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScoreCounts {
    pub rows: usize,
    pub columns: usize,
    /// Cross-attention part `N·h·L·C` per row, summed.
    pub cross_expected: u64,
    /// Latent self-attention part `N·h·L²` per row, summed.
    pub latent_self_expected: u64,
    pub cross_measured: u64,
    /// `N·h·C²` per row, summed.
    pub full_sa_expected: u64,
    pub full_sa_measured: u64,
}

impl ScoreCounts {
    pub fn exact(&self) -> bool {
        self.cross_measured == self.cross_expected + self.latent_self_expected
            && self.full_sa_measured == self.full_sa_expected
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub task: String,
    pub cross_auc: f64,
    pub full_sa_auc: f64,
    /// `full_sa_auc / cross_auc`.
    pub ratio: f64,
    pub in_reference_band: bool,
    pub cross_params: usize,
    pub full_sa_params: usize,
    pub scores: ScoreCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub reference_band: [f64; 2],
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task,cross_auc,full_sa_auc,ratio,cross_params,full_sa_params,cross_scores,full_sa_scores,counts_exact\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.task,
                r.cross_auc,
                r.full_sa_auc,
                r.ratio,
                r.cross_params,
                r.full_sa_params,
                r.scores.cross_measured,
                r.scores.full_sa_measured,
                r.scores.exact()
            ));
        }
        out
    }
}

fn variant(config: &RelateConfig, aggregator: Aggregator, db: &RelationalDatabase, tokens: &Arc<TokenTable>) -> Result<RelateEncoder> {
    let mut enc = RelateEncoder::new(RelateConfig { aggregator, ..config.clone() }, Arc::clone(tokens))?;
    enc.bind_schema(&db.manifest);
    Ok(enc)
}

fn measure(enc: &RelateEncoder, store: &ParameterStore, db: &RelationalDatabase, table: usize) -> Result<u64> {
    let t = &db.tables[table];
    let rows: Vec<usize> = (0..t.len().min(COUNT_ROWS)).collect();
    let mut tape = Tape::no_grad();
    let mut pass = Pass::eval();
    enc.encode_rows_ordered(&mut tape, store, t, &rows, None, &mut pass)?;
    Ok(pass.score_entries)
}

/// Trains both aggregators with the same seed on every classification task.
pub fn ablate(
    db: &RelationalDatabase,
    graph: &HeteroTemporalGraph,
    tasks: &[TaskSpec],
    config: &RelateConfig,
    tokens: &Arc<TokenTable>,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<AblationReport> {
    let cross = variant(config, Aggregator::Perceiver, db, tokens)?;
    let full = variant(config, Aggregator::FullSelfAttention, db, tokens)?;
    let p = &config.perceiver;
    let mut rows = Vec::new();
    for task in tasks.iter().filter(|t| t.kind == TaskKind::Classification) {
        let data = task.prepare(db, seed)?;
        let cross_run = train(&Setup::new(db, graph, &cross, train_config, task)?, task, &data, seed)?;
        let full_run = train(&Setup::new(db, graph, &full, train_config, task)?, task, &data, seed)?;

        let target = task.target_index(db)?;
        let n = db.tables[target].len().min(COUNT_ROWS);
        let c = db.tables[target].spec.feature_columns().count();
        let per = (p.layers * p.heads) as u64;
        let (n64, c64, l64) = (n as u64, c as u64, p.latents as u64);
        let scores = ScoreCounts {
            rows: n,
            columns: c,
            cross_expected: n64 * per * l64 * c64,
            latent_self_expected: n64 * per * l64 * l64,
            cross_measured: measure(&cross, &cross_run.store, db, target)?,
            full_sa_expected: n64 * per * c64 * c64,
            full_sa_measured: measure(&full, &full_run.store, db, target)?,
        };
        let (ca, fa) = (cross_run.report.best_val, full_run.report.best_val);
        let ratio = fa / ca;
        rows.push(AblationRow {
            task: task.name.clone(),
            cross_auc: ca,
            full_sa_auc: fa,
            ratio,
            in_reference_band: (REFERENCE_BAND[0]..=REFERENCE_BAND[1]).contains(&ratio),
            cross_params: cross.parameter_count(),
            full_sa_params: full.parameter_count(),
            scores,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config("ablation needs at least one classification task".into()));
    }
    Ok(AblationReport {
        seed,
        reference_band: REFERENCE_BAND,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingPoint {
    pub columns: usize,
    pub nodes: usize,
    pub cross_seconds: f64,
    pub full_sa_seconds: f64,
}

/// Wall-clock of one eval forward of each aggregator on random column
/// tokens, best of `repeats`.
pub fn attention_timing(cfg: &PerceiverConfig, columns: &[usize], nodes: usize, repeats: usize, seed: u64) -> Result<Vec<TimingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    perceiver::register(&mut store, cfg, &mut rng)?;
    perceiver::register_full_sa(&mut store, cfg, &mut rng)?;
    columns
        .iter()
        .map(|&c| {
            let x = DenseArray::randn(&[nodes, c, cfg.d], 1.0, &mut rng);
            let time = |full: bool| -> Result<f64> {
                let mut best = f64::INFINITY;
                for _ in 0..repeats.max(1) {
                    let mut tape = Tape::no_grad();
                    let xv = tape.constant(x.clone());
                    let start = Instant::now();
                    if full {
                        perceiver::encode_node_full_sa(&mut tape, &store, cfg, xv, &mut Pass::eval())?;
                    } else {
                        perceiver::encode_node(&mut tape, &store, cfg, xv, &mut Pass::eval())?;
                    }
                    best = best.min(start.elapsed().as_secs_f64());
                }
                Ok(best)
            };
            Ok(TimingPoint {
                columns: c,
                nodes,
                cross_seconds: time(false)?,
                full_sa_seconds: time(true)?,
            })
        })
        .collect()
}
