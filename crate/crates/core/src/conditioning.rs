//! Column conditioning of cell embeddings.
//!
//! Input `x` is the projected cell embedding `X = CellEmb · W_shared`
//! produced by [`crate::modality`], one row per cell of a single column.
//! `meta` is that column's frozen metadata vector.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::DenseArray;

pub const COLPROJ: &str = "relate.colproj";
pub const MLP_W1: &str = "relate.mlp.w1";
pub const MLP_B1: &str = "relate.mlp.b1";
pub const MLP_W2: &str = "relate.mlp.w2";
pub const MLP_B2: &str = "relate.mlp.b2";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditioningDims {
    pub d: usize,
    pub meta_dim: usize,
    pub d_ff: usize,
}

impl ConditioningDims {
    pub fn parameter_count(&self) -> usize {
        self.meta_dim * self.d + self.d * self.d_ff + self.d_ff + self.d_ff * self.d + self.d
    }
}

pub fn register<R: Rng + ?Sized>(store: &mut ParameterStore, dims: &ConditioningDims, rng: &mut R) -> Result<()> {
    store.insert(COLPROJ, DenseArray::glorot(dims.meta_dim, dims.d, rng), true)?;
    store.insert(MLP_W1, DenseArray::glorot(dims.d, dims.d_ff, rng), true)?;
    store.insert(MLP_B1, DenseArray::zeros(&[1, dims.d_ff]), true)?;
    store.insert(MLP_W2, DenseArray::glorot(dims.d_ff, dims.d, rng), true)?;
    store.insert(MLP_B2, DenseArray::zeros(&[1, dims.d]), true)?;
    Ok(())
}

/// `H = meta · ColProj` as a `1 × d` row.
pub fn metadata_projection(tape: &mut Tape, store: &ParameterStore, meta: &[f64]) -> Result<Var> {
    let proj = tape.param(store, COLPROJ)?;
    let rows = tape.value(proj).rows();
    if meta.len() != rows {
        return Err(Error::dim("column metadata", &[1, meta.len()], tape.value(proj).shape()));
    }
    let m = tape.constant(DenseArray::row(meta.to_vec()));
    tape.matmul(m, proj)
}

/// `Z = X + H`, returns `Z + ReLU(Z W1 + b1) W2 + b2`.
pub fn condition_additive(tape: &mut Tape, store: &ParameterStore, x: Var, meta: &[f64]) -> Result<Var> {
    let h = metadata_projection(tape, store, meta)?;
    let z = tape.add(x, h)?;
    let hidden = tape.linear(store, z, MLP_W1, Some(MLP_B1))?;
    let hidden = tape.relu(hidden);
    let out = tape.linear(store, hidden, MLP_W2, Some(MLP_B2))?;
    tape.add(z, out)
}

/// `X ⊙ σ(H)`.
pub fn condition_gated(tape: &mut Tape, store: &ParameterStore, x: Var, meta: &[f64]) -> Result<Var> {
    let h = metadata_projection(tape, store, meta)?;
    let gate = tape.sigmoid(h);
    tape.mul(x, gate)
}

/// Hashed categorical embeddings carry no column metadata.
pub fn condition_hashed(x: Var) -> Var {
    x
}
