//! Finite-difference checks of every differentiable block at a small width.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::baseline::{StandardConfig, StandardEncoder};
use crate::conditioning::{self, ConditioningDims};
use crate::encoder::{Aggregator, NodeEncoder, RelateConfig, RelateEncoder};
use crate::error::Result;
use crate::gnn::{self, BatchGraph, GnnConfig};
use crate::gradcheck::grad_check;
use crate::graph::NodeRef;
use crate::modality::{self, FoneConfig, ModalityDims};
use crate::params::ParameterStore;
use crate::perceiver::{self, Pass, PerceiverConfig};
use crate::sampler::{LocalEdge, Subgraph};
use crate::synth::{generate_database, SyntheticDbSpec};
use crate::tensor::DenseArray;
use crate::text::TokenTable;

pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Width used by every block.
pub const SHRINK_D: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: String,
    pub parameters: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// `Σ z ⊙ r + ½ Σ z²` for a fixed random `r`, so no gradient is trivially zero.
fn probe(tape: &mut Tape, z: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(z).shape().to_vec();
    let r = tape.constant(DenseArray::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let lin = tape.mul(z, r)?;
    let lin = tape.sum(lin);
    let sq = tape.mul(z, z)?;
    let sq = tape.sum(sq);
    let half = tape.scale(sq, 0.5);
    tape.add(lin, half)
}

fn check<F>(block: &str, mut store: ParameterStore, loss: F) -> Result<BlockCheck>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    let parameters = store.total_count();
    let err = grad_check(loss, &mut store, GRADCHECK_EPSILON)?;
    Ok(BlockCheck {
        block: block.to_string(),
        parameters,
        max_rel_error: err,
        passed: err <= GRADCHECK_TOLERANCE,
    })
}

fn small_perceiver() -> PerceiverConfig {
    PerceiverConfig {
        d: SHRINK_D,
        latents: 3,
        heads: 2,
        layers: 2,
        ..PerceiverConfig::default()
    }
}

/// Runs every block check with dropout off.
pub fn gradcheck_blocks(seed: u64) -> Result<GradcheckReport> {
    let d = SHRINK_D;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();

    let fone = FoneConfig::default();
    let text = Arc::new(TokenTable::demo());
    let mdims = ModalityDims { d, fone, text_dim: 4, hash_vocab: 16 };
    let mut store = ParameterStore::new();
    modality::register(&mut store, &mdims, &mut rng)?;
    let small_tokens = TokenTable::new(4, vec![("alpha".into(), vec![0.3, -0.1, 0.8, 0.2]), ("beta".into(), vec![-0.5, 0.4, 0.1, 0.9])], 0)?;
    blocks.push(check("modality", store, |s, t| {
        let a = modality::encode_numbers(t, s, &[Some(3.5), None, Some(-120.0)], &fone)?;
        let b = modality::encode_timestamps(t, s, &[Some(1_600_000_000), None, Some(0)])?;
        let c = modality::encode_texts(t, s, &[Some("alpha beta"), Some("beta"), None], &small_tokens)?;
        let e = modality::encode_categoricals(t, s, "t", "c", &[Some("x"), None, Some("y")])?;
        let all = t.concat_cols(&[a, b, c, e])?;
        probe(t, all, seed)
    })?);

    let cdims = ConditioningDims { d, meta_dim: 3, d_ff: d };
    let mut cond = || -> Result<ParameterStore> {
        let mut s = ParameterStore::new();
        conditioning::register(&mut s, &cdims, &mut rng)?;
        s.set_value(conditioning::MLP_B1, DenseArray::randn(&[1, d], 0.5, &mut rng))?;
        s.insert("x", DenseArray::randn(&[4, d], 1.0, &mut rng), true)?;
        Ok(s)
    };
    let meta = [0.4, -0.7, 0.2];
    blocks.push(check("conditioning.additive", cond()?, |s, t| {
        let x = t.param(s, "x")?;
        let z = conditioning::condition_additive(t, s, x, &meta)?;
        probe(t, z, seed)
    })?);
    blocks.push(check("conditioning.gated", cond()?, |s, t| {
        let x = t.param(s, "x")?;
        let z = conditioning::condition_gated(t, s, x, &meta)?;
        probe(t, z, seed)
    })?);
    blocks.push(check("conditioning.hashed", cond()?, |s, t| {
        let x = t.param(s, "x")?;
        let z = conditioning::condition_hashed(x);
        probe(t, z, seed)
    })?);

    let pcfg = small_perceiver();
    let mut pstore = ParameterStore::new();
    perceiver::register(&mut pstore, &pcfg, &mut rng)?;
    pstore.insert("x", DenseArray::randn(&[3, 5, d], 1.0, &mut rng), true)?;
    blocks.push(check("perceiver.cross_stack", pstore, |s, t| {
        let x = t.param(s, "x")?;
        let z = perceiver::encode_node(t, s, &pcfg, x, &mut Pass::eval())?;
        probe(t, z, seed)
    })?);
    let mut fstore = ParameterStore::new();
    perceiver::register_full_sa(&mut fstore, &pcfg, &mut rng)?;
    fstore.insert("x", DenseArray::randn(&[3, 5, d], 1.0, &mut rng), true)?;
    blocks.push(check("perceiver.full_sa_stack", fstore, |s, t| {
        let x = t.param(s, "x")?;
        let z = perceiver::encode_node_full_sa(t, s, &pcfg, x, &mut Pass::eval())?;
        probe(t, z, seed)
    })?);

    let db = generate_database(&SyntheticDbSpec {
        users: 6,
        products: 4,
        max_orders_per_user: 2,
        ..SyntheticDbSpec::default()
    })?;
    let rows: Vec<usize> = (0..4).collect();
    let users = &db.tables[db.table_index("users").expect("shop schema")];
    for (block, aggregator) in [("relate.encoder", Aggregator::Perceiver), ("relate.encoder_full_sa", Aggregator::FullSelfAttention)] {
        let cfg = RelateConfig {
            perceiver: pcfg,
            hash_vocab: 16,
            aggregator,
            ..RelateConfig::default()
        };
        let mut enc = RelateEncoder::new(cfg, Arc::clone(&text))?;
        enc.bind_schema(&db.manifest);
        let store = enc.init_params(seed)?;
        blocks.push(check(block, store, |s, t| {
            let z = enc.encode_rows(t, s, users, &rows, &mut Pass::eval())?;
            probe(t, z, seed)
        })?);
    }

    let scfg = StandardConfig {
        d,
        d_col: 4,
        hidden: 6,
        hash_vocab: 16,
        fone,
    };
    let std_enc = StandardEncoder::new(scfg, db.manifest.clone(), Arc::clone(&text))?;
    blocks.push(check("standard.encoder", std_enc.init_params(seed)?, |s, t| {
        let z = std_enc.encode_rows(t, s, users, &rows, &mut Pass::eval())?;
        probe(t, z, seed)
    })?);

    let gcfg = GnnConfig { layers: 2 };
    let mut gstore = ParameterStore::new();
    gcfg.register(&mut gstore, d, 2, &mut rng)?;
    gstore.insert("h", DenseArray::randn(&[4, d], 1.0, &mut rng), true)?;
    let sub = Subgraph {
        nodes: (0..4).map(|r| NodeRef::new(0, r)).collect(),
        edges: vec![
            LocalEdge { src: 1, dst: 0, etype: 0 },
            LocalEdge { src: 2, dst: 0, etype: 0 },
            LocalEdge { src: 3, dst: 1, etype: 1 },
            LocalEdge { src: 0, dst: 3, etype: 1 },
        ],
        seed_time: None,
    };
    let batch = BatchGraph::from_subgraphs(&[sub], 2);
    blocks.push(check("gnn", gstore, |s, t| {
        let h = t.param(s, "h")?;
        let h = gnn::propagate(t, s, &gcfg, h, &batch)?;
        let out = gnn::readout(t, s, h, &batch.seeds)?;
        t.bce_with_logits(out, &[1.0])
    })?);

    Ok(GradcheckReport {
        seed,
        epsilon: GRADCHECK_EPSILON,
        tolerance: GRADCHECK_TOLERANCE,
        blocks,
    })
}
