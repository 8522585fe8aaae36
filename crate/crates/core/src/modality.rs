//! Shared per-modality cell encoders.
//!
//! Raw features are fixed functions of the cell value; each modality then
//! shares a single projection to model width `d` across every column of
//! every table. Categorical cells skip the projection: they index a shared
//! trainable hash vocabulary of width `d` directly. A missing cell is
//! replaced by one learnable token per modality.

use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, Timelike};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::params::ParameterStore;
use crate::schema::Modality;
use crate::tensor::DenseArray;
use crate::text::TokenTable;

pub const DEFAULT_HASH_VOCAB: usize = 65_536;

pub const SHARED_NUMERICAL: &str = "relate.shared.numerical";
pub const SHARED_TIMESTAMP: &str = "relate.shared.timestamp";
pub const SHARED_TEXTUAL: &str = "relate.shared.textual";
pub const CAT_VOCAB: &str = "relate.cat.vocab";

pub fn missing_token_name(m: Modality) -> String {
    format!("relate.missing.{}", m.as_str())
}

/// Decimal-period Fourier features: `cos, sin` of `2πx / 10^k` for each `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoneConfig {
    pub k_min: i32,
    pub k_max: i32,
}

impl Default for FoneConfig {
    fn default() -> Self {
        Self { k_min: -2, k_max: 4 }
    }
}

impl FoneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "FoNE exponent range {}..={} is empty",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * (self.k_max - self.k_min + 1) as usize
    }

    pub fn features(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for k in self.k_min..=self.k_max {
            let phase = TAU * x / 10f64.powi(k);
            out.push(phase.cos());
            out.push(phase.sin());
        }
        out
    }
}

/// Cyclic periods in order: month, day, weekday, hour, minute, second.
pub const CYCLIC_PERIODS: [f64; 6] = [12.0, 31.0, 7.0, 24.0, 60.0, 60.0];
pub const ABSOLUTE_PAIRS: usize = 8;
pub const TIME_DIM: usize = 2 * (CYCLIC_PERIODS.len() + ABSOLUTE_PAIRS);
pub const MIN_YEAR: i32 = 1677;
pub const MAX_YEAR: i32 = 2262;

/// UTC civil decomposition with zero-based month, day and weekday
/// (Monday = 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CivilTime {
    pub year: i32,
    pub month0: u32,
    pub day0: u32,
    pub weekday: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
}

pub fn civil_time(t: i64) -> Result<CivilTime> {
    let dt = DateTime::from_timestamp(t, 0).ok_or(Error::Range(t))?;
    if !(MIN_YEAR..=MAX_YEAR).contains(&dt.year()) {
        return Err(Error::Range(t));
    }
    Ok(CivilTime {
        year: dt.year(),
        month0: dt.month0(),
        day0: dt.day0(),
        weekday: dt.weekday().num_days_from_monday(),
        hour: dt.hour(),
        minute: dt.minute(),
        second: dt.second(),
    })
}

/// The 28 raw time features: six cyclic `(cos, sin)` pairs followed by
/// eight absolute pairs over fractional days since the epoch with periods
/// `365.25 · 2^j` days.
pub fn time_features(t: i64) -> Result<Vec<f64>> {
    let c = civil_time(t)?;
    let comps = [c.month0, c.day0, c.weekday, c.hour, c.minute, c.second];
    let mut out = Vec::with_capacity(TIME_DIM);
    for (v, p) in comps.iter().zip(CYCLIC_PERIODS) {
        let phase = TAU * *v as f64 / p;
        out.push(phase.cos());
        out.push(phase.sin());
    }
    let days = t as f64 / 86_400.0;
    for j in 0..ABSOLUTE_PAIRS {
        let period = 365.25 * f64::from(1u32 << j);
        let phase = TAU * days / period;
        out.push(phase.cos());
        out.push(phase.sin());
    }
    Ok(out)
}

/// Hash bucket of a categorical value, keyed by the column's qualified name.
pub fn categorical_index(table: &str, column: &str, value: &str, vocab: usize) -> usize {
    let mut key = Vec::with_capacity(table.len() + column.len() + value.len() + 2);
    key.extend_from_slice(table.as_bytes());
    key.push(b'.');
    key.extend_from_slice(column.as_bytes());
    key.push(0);
    key.extend_from_slice(value.as_bytes());
    (fnv1a64(&key) % vocab as u64) as usize
}

/// Shapes of the modality parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModalityDims {
    pub d: usize,
    pub fone: FoneConfig,
    pub text_dim: usize,
    pub hash_vocab: usize,
}

impl ModalityDims {
    pub fn parameter_count(&self) -> usize {
        let d = self.d;
        self.fone.dim() * d + TIME_DIM * d + self.text_dim * d + self.hash_vocab * d + 4 * d
    }
}

pub fn register<R: Rng + ?Sized>(store: &mut ParameterStore, dims: &ModalityDims, rng: &mut R) -> Result<()> {
    let d = dims.d;
    store.insert(SHARED_NUMERICAL, DenseArray::glorot(dims.fone.dim(), d, rng), true)?;
    store.insert(SHARED_TIMESTAMP, DenseArray::glorot(TIME_DIM, d, rng), true)?;
    store.insert(SHARED_TEXTUAL, DenseArray::glorot(dims.text_dim, d, rng), true)?;
    store.insert(CAT_VOCAB, DenseArray::randn(&[dims.hash_vocab, d], 0.5, rng), true)?;
    for m in [Modality::Numerical, Modality::Timestamp, Modality::Categorical, Modality::Textual] {
        store.insert(missing_token_name(m), DenseArray::randn(&[1, d], 0.5, rng), true)?;
    }
    Ok(())
}

/// Projects raw feature rows through `proj`, substituting the `missing`
/// token row for `None` entries.
pub fn project_or_missing(
    tape: &mut Tape,
    store: &ParameterStore,
    raw: Vec<Option<Vec<f64>>>,
    width: usize,
    proj: &str,
    missing: &str,
) -> Result<Var> {
    let n = raw.len();
    if n == 0 {
        return Err(Error::Argument("no cells to encode".into()));
    }
    let keep: Vec<bool> = raw.iter().map(Option::is_some).collect();
    let missing = tape.param(store, missing)?;
    if keep.iter().all(|k| !k) {
        let d = tape.value(missing).cols();
        let zero = tape.constant(DenseArray::zeros(&[n, d]));
        return tape.where_rows(zero, missing, &keep);
    }
    let mut data = Vec::with_capacity(n * width);
    for r in raw {
        match r {
            Some(v) if v.len() == width => data.extend(v),
            Some(v) => return Err(Error::dim("raw features", &[1, v.len()], &[1, width])),
            None => data.extend(std::iter::repeat_n(0.0, width)),
        }
    }
    let x = tape.constant(DenseArray::matrix(n, width, data)?);
    let w = tape.param(store, proj)?;
    let projected = tape.matmul(x, w)?;
    tape.where_rows(projected, missing, &keep)
}

/// FoNE rows; `None`, NaN and ±Inf become `None`.
pub fn raw_numbers(values: &[Option<f64>], fone: &FoneConfig) -> Vec<Option<Vec<f64>>> {
    values
        .iter()
        .map(|v| match v {
            Some(x) if x.is_finite() => Some(fone.features(*x)),
            Some(x) if x.is_infinite() => {
                log::warn!("infinite numerical cell {x} encoded as missing");
                None
            }
            _ => None,
        })
        .collect()
}

pub fn raw_timestamps(values: &[Option<i64>]) -> Result<Vec<Option<Vec<f64>>>> {
    values.iter().map(|v| v.map(time_features).transpose()).collect()
}

/// Mean token vectors; text with no resolvable token becomes `None`.
pub fn raw_texts(values: &[Option<&str>], tokens: &TokenTable) -> Vec<Option<Vec<f64>>> {
    values.iter().map(|v| v.and_then(|s| tokens.try_embed(s))).collect()
}

/// Rows of the hash table `vocab` for the values of column `table.column`.
pub fn lookup_hashed(
    tape: &mut Tape,
    store: &ParameterStore,
    vocab: &str,
    missing: &str,
    table: &str,
    column: &str,
    values: &[Option<&str>],
) -> Result<Var> {
    let vocab = tape.param(store, vocab)?;
    let v = tape.value(vocab).rows();
    let keep: Vec<bool> = values.iter().map(Option::is_some).collect();
    let idx: Vec<usize> = values
        .iter()
        .map(|x| x.map_or(0, |s| categorical_index(table, column, s, v)))
        .collect();
    let rows = tape.gather_rows(vocab, &idx)?;
    let missing = tape.param(store, missing)?;
    tape.where_rows(rows, missing, &keep)
}

/// Numerical cells → `n × d`.
pub fn encode_numbers(tape: &mut Tape, store: &ParameterStore, values: &[Option<f64>], fone: &FoneConfig) -> Result<Var> {
    let raw = raw_numbers(values, fone);
    project_or_missing(tape, store, raw, fone.dim(), SHARED_NUMERICAL, &missing_token_name(Modality::Numerical))
}

pub fn encode_number(tape: &mut Tape, store: &ParameterStore, value: Option<f64>, fone: &FoneConfig) -> Result<Var> {
    encode_numbers(tape, store, &[value], fone)
}

/// Timestamp cells (epoch seconds) → `n × d`.
pub fn encode_timestamps(tape: &mut Tape, store: &ParameterStore, values: &[Option<i64>]) -> Result<Var> {
    let raw = raw_timestamps(values)?;
    project_or_missing(tape, store, raw, TIME_DIM, SHARED_TIMESTAMP, &missing_token_name(Modality::Timestamp))
}

pub fn encode_timestamp(tape: &mut Tape, store: &ParameterStore, value: Option<i64>) -> Result<Var> {
    encode_timestamps(tape, store, &[value])
}

/// Text cells → `n × d`.
pub fn encode_texts(tape: &mut Tape, store: &ParameterStore, values: &[Option<&str>], tokens: &TokenTable) -> Result<Var> {
    let raw = raw_texts(values, tokens);
    project_or_missing(tape, store, raw, tokens.dim(), SHARED_TEXTUAL, &missing_token_name(Modality::Textual))
}

pub fn encode_text_cell(tape: &mut Tape, store: &ParameterStore, value: Option<&str>, tokens: &TokenTable) -> Result<Var> {
    encode_texts(tape, store, &[value], tokens)
}

/// Categorical cells of column `table.column` → rows of the shared hash vocabulary.
pub fn encode_categoricals(
    tape: &mut Tape,
    store: &ParameterStore,
    table: &str,
    column: &str,
    values: &[Option<&str>],
) -> Result<Var> {
    let missing = missing_token_name(Modality::Categorical);
    lookup_hashed(tape, store, CAT_VOCAB, &missing, table, column, values)
}

pub fn encode_categorical(
    tape: &mut Tape,
    store: &ParameterStore,
    table: &str,
    column: &str,
    value: Option<&str>,
) -> Result<Var> {
    encode_categoricals(tape, store, table, column, &[value])
}
