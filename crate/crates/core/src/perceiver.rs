//! Latent cross-attention aggregator.
//!
//! A node's conditioned column embeddings `X_v` (`C_v × d`) are read by `L`
//! learnable latent tokens through multi-head cross-attention, the latents
//! then attend to each other, and the pair repeats for `N` layers. The node
//! embedding is a pooling of the final latents. All weights are shared by
//! every node type, so the parameter count only depends on `(d, L, N)`.
//!
//! Inputs are batched: `X` is `(n, C, d)` for `n` nodes sharing a column
//! count, and every op returns one row per node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::DenseArray;

pub const LATENTS: &str = "relate.latents";
pub const EMPTY_ROW: &str = "relate.missing.row";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    FirstLatent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyNodePolicy {
    #[default]
    Error,
    MissingToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceiverConfig {
    pub d: usize,
    pub latents: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    pub empty_node: EmptyNodePolicy,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self {
            d: 128,
            latents: 8,
            heads: 4,
            layers: 4,
            dropout: 0.2,
            pooling: Pooling::Mean,
            empty_node: EmptyNodePolicy::Error,
        }
    }
}

impl PerceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.latents == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::Config("d, latents, heads and layers must be positive".into()));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d = {} is not divisible by heads = {}", self.d, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Latents, one missing-row token, and `W_Q, W_K, W_V, W_O` for the
    /// cross and self blocks of every layer.
    pub fn parameter_count(&self) -> usize {
        self.latents * self.d + self.d + self.layers * 8 * self.d * self.d
    }

    pub fn full_sa_parameter_count(&self) -> usize {
        self.layers * 4 * self.d * self.d
    }
}

/// Names of the four projections of one attention block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
}

impl AttentionWeights {
    pub fn new(prefix: &str) -> Self {
        Self {
            wq: format!("{prefix}.wq"),
            wk: format!("{prefix}.wk"),
            wv: format!("{prefix}.wv"),
            wo: format!("{prefix}.wo"),
        }
    }

    pub fn cross(layer: usize) -> Self {
        Self::new(&format!("relate.cross.{layer}"))
    }

    pub fn latent_self(layer: usize) -> Self {
        Self::new(&format!("relate.self.{layer}"))
    }

    pub fn full_sa(layer: usize) -> Self {
        Self::new(&format!("relate.fullsa.{layer}"))
    }

    pub fn names(&self) -> [&str; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, d: usize, rng: &mut R) -> Result<()> {
        for n in self.names() {
            store.insert(n, DenseArray::glorot(d, d, rng), true)?;
        }
        Ok(())
    }
}

pub fn register<R: Rng + ?Sized>(store: &mut ParameterStore, cfg: &PerceiverConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    store.insert(LATENTS, DenseArray::randn(&[cfg.latents, cfg.d], 0.5, rng), true)?;
    store.insert(EMPTY_ROW, DenseArray::randn(&[1, cfg.d], 0.5, rng), true)?;
    for l in 0..cfg.layers {
        AttentionWeights::cross(l).register(store, cfg.d, rng)?;
        AttentionWeights::latent_self(l).register(store, cfg.d, rng)?;
    }
    Ok(())
}

/// Weights of the full self-attention variant, registered separately.
pub fn register_full_sa<R: Rng + ?Sized>(store: &mut ParameterStore, cfg: &PerceiverConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.layers {
        AttentionWeights::full_sa(l).register(store, cfg.d, rng)?;
    }
    Ok(())
}

/// Per-forward state: train/eval mode, the dropout stream, and a count of
/// attention-score entries computed.
#[derive(Debug)]
pub struct Pass {
    pub training: bool,
    pub rng: ChaCha8Rng,
    pub score_entries: u64,
}

impl Pass {
    pub fn eval() -> Self {
        Self {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            score_entries: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            score_entries: 0,
        }
    }
}

/// Multi-head attention from `queries` (`(n, Lq, d)`) to `keys` (`(n, Lk, d)`)
/// recombined through `W_O`, without the residual. Dropout acts on the
/// attention probabilities.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PerceiverConfig,
    w: &AttentionWeights,
    queries: Var,
    keys: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let heads = cfg.heads;
    let wq = tape.param(store, &w.wq)?;
    let wk = tape.param(store, &w.wk)?;
    let wv = tape.param(store, &w.wv)?;
    let wo = tape.param(store, &w.wo)?;
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(keys, wv)?;
    let d = tape.value(q).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("d = {d} is not divisible by heads = {heads}")));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(k, h * dk, dk)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        let scores = tape.matmul_nt(qh, kh)?;
        pass.score_entries += tape.value(scores).len() as u64;
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax_rows(scores);
        let probs = tape.dropout(probs, cfg.dropout, pass.training, &mut pass.rng)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.matmul(joined, wo)
}

fn batched(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    let xv = tape.value(x);
    if xv.rank() != 3 {
        return Err(Error::Argument(format!("expected an (n, C, d) input, got {:?}", xv.shape())));
    }
    Ok(xv.dims3())
}

/// `Z + MHA(Z, X)` for one layer.
pub fn cross_attend(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PerceiverConfig,
    z: Var,
    x: Var,
    layer: usize,
    pass: &mut Pass,
) -> Result<Var> {
    let att = multi_head_attention(tape, store, cfg, &AttentionWeights::cross(layer), z, x, pass)?;
    tape.add(z, att)
}

/// `Z + MHA(Z, Z)` for one layer.
pub fn latent_self_attend(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PerceiverConfig,
    z: Var,
    layer: usize,
    pass: &mut Pass,
) -> Result<Var> {
    let att = multi_head_attention(tape, store, cfg, &AttentionWeights::latent_self(layer), z, z, pass)?;
    tape.add(z, att)
}

/// Encoder input for `n` nodes with no feature columns: one learned row each.
pub fn empty_nodes(tape: &mut Tape, store: &ParameterStore, cfg: &PerceiverConfig, ntype: &str, n: usize) -> Result<Var> {
    match cfg.empty_node {
        EmptyNodePolicy::Error => Err(Error::EmptyNode(ntype.to_string())),
        EmptyNodePolicy::MissingToken => {
            let row = tape.param(store, EMPTY_ROW)?;
            let row = tape.reshape(row, &[1, 1, cfg.d])?;
            let zero = tape.constant(DenseArray::zeros(&[n, 1, cfg.d]));
            tape.add(zero, row)
        }
    }
}

fn pool(tape: &mut Tape, cfg: &PerceiverConfig, z: Var, n: usize) -> Result<Var> {
    let pooled = match cfg.pooling {
        Pooling::Mean => tape.mean_rows(z),
        Pooling::FirstLatent => {
            let flat = tape.reshape(z, &[n, cfg.latents * cfg.d])?;
            tape.slice_cols(flat, 0, cfg.d)?
        }
    };
    tape.reshape(pooled, &[n, cfg.d])
}

/// `(n, C, d)` column embeddings → `n × d` node embeddings.
pub fn encode_node(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PerceiverConfig,
    x: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let (n, _, d) = batched(tape, x)?;
    if d != cfg.d {
        return Err(Error::dim("encode_node", tape.value(x).shape(), &[cfg.latents, cfg.d]));
    }
    let latents = tape.param(store, LATENTS)?;
    let mut z = tape.repeat_batch(latents, n)?;
    for l in 0..cfg.layers {
        z = cross_attend(tape, store, cfg, z, x, l, pass)?;
        z = latent_self_attend(tape, store, cfg, z, l, pass)?;
    }
    pool(tape, cfg, z, n)
}

/// Ablation variant: `N` self-attention layers over the column tokens
/// themselves, then mean pooling over tokens.
pub fn encode_node_full_sa(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PerceiverConfig,
    x: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let (n, _, d) = batched(tape, x)?;
    if d != cfg.d {
        return Err(Error::dim("encode_node_full_sa", tape.value(x).shape(), &[1, cfg.d]));
    }
    let mut h = x;
    for l in 0..cfg.layers {
        let att = multi_head_attention(tape, store, cfg, &AttentionWeights::full_sa(l), h, h, pass)?;
        h = tape.add(h, att)?;
    }
    let pooled = tape.mean_rows(h);
    tape.reshape(pooled, &[n, cfg.d])
}
