//! The schema-agnostic row encoder.
//!
//! Every feature cell goes through its modality's shared encoder, is
//! conditioned on its column's metadata embedding, and the resulting set of
//! column embeddings is aggregated into one `d`-vector per row. No parameter
//! depends on the schema, so one [`ParameterStore`] encodes any database.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::conditioning::{self, ConditioningDims};
use crate::error::{Error, Result};
use crate::modality::{self, FoneConfig, ModalityDims, DEFAULT_HASH_VOCAB};
use crate::params::ParameterStore;
use crate::perceiver::{self, Pass, PerceiverConfig};
use crate::schema::{CellValue, Modality, SchemaManifest, Table, TableSpec};
use crate::tensor::DenseArray;
use crate::text::TokenTable;

/// Rows per forward pass when encoding a whole table.
pub const ENCODE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Perceiver,
    FullSelfAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelateConfig {
    pub perceiver: PerceiverConfig,
    pub fone: FoneConfig,
    pub hash_vocab: usize,
    /// Hidden width of the conditioning MLP; `None` means `d`.
    pub d_ff: Option<usize>,
    pub aggregator: Aggregator,
}

impl Default for RelateConfig {
    fn default() -> Self {
        Self {
            perceiver: PerceiverConfig::default(),
            fone: FoneConfig::default(),
            hash_vocab: DEFAULT_HASH_VOCAB,
            d_ff: None,
            aggregator: Aggregator::Perceiver,
        }
    }
}

impl RelateConfig {
    pub fn validate(&self) -> Result<()> {
        self.perceiver.validate()?;
        self.fone.validate()?;
        if self.hash_vocab == 0 {
            return Err(Error::Config("hash_vocab must be positive".into()));
        }
        if self.d_ff == Some(0) {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.perceiver.d
    }

    pub fn modality_dims(&self, text_dim: usize) -> ModalityDims {
        ModalityDims {
            d: self.d(),
            fone: self.fone,
            text_dim,
            hash_vocab: self.hash_vocab,
        }
    }

    pub fn conditioning_dims(&self, text_dim: usize) -> ConditioningDims {
        ConditioningDims {
            d: self.d(),
            meta_dim: text_dim,
            d_ff: self.d_ff.unwrap_or(self.d()),
        }
    }

    /// Closed-form trainable parameter count for a token table of width `text_dim`.
    pub fn parameter_count(&self, text_dim: usize) -> usize {
        let aggregator = match self.aggregator {
            Aggregator::Perceiver => self.perceiver.parameter_count(),
            Aggregator::FullSelfAttention => self.perceiver.full_sa_parameter_count() + self.d(),
        };
        self.modality_dims(text_dim).parameter_count() + self.conditioning_dims(text_dim).parameter_count() + aggregator
    }
}

/// Cells of one column for a set of rows, typed by modality.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnCells<'a> {
    Numbers(Vec<Option<f64>>),
    Timestamps(Vec<Option<i64>>),
    Categories(Vec<Option<&'a str>>),
    Texts(Vec<Option<&'a str>>),
}

pub fn column_cells<'a>(table: &'a Table, column: usize, rows: &[usize]) -> Result<ColumnCells<'a>> {
    let cells = rows.iter().map(|&r| {
        table
            .rows
            .get(r)
            .map(|row| &row[column])
            .ok_or_else(|| Error::Argument(format!("row {r} out of {} in `{}`", table.len(), table.name())))
    });
    let text = |c: &'a CellValue| match c {
        CellValue::Category(s) | CellValue::Text(s) => Some(s.as_str()),
        _ => None,
    };
    Ok(match table.spec.columns[column].modality {
        Modality::Numerical => ColumnCells::Numbers(cells.map(|c| c.map(CellValue::as_number)).collect::<Result<_>>()?),
        Modality::Timestamp => {
            ColumnCells::Timestamps(cells.map(|c| c.map(CellValue::as_timestamp)).collect::<Result<_>>()?)
        }
        Modality::Categorical => ColumnCells::Categories(cells.map(|c| c.map(text)).collect::<Result<_>>()?),
        Modality::Textual => ColumnCells::Texts(cells.map(|c| c.map(text)).collect::<Result<_>>()?),
        m => {
            return Err(Error::Schema(format!(
                "column `{}.{}` of modality {} is not a feature",
                table.name(),
                table.spec.columns[column].name,
                m.as_str()
            )))
        }
    })
}

/// Checks that `order` is a permutation of `0..n`.
pub fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Argument(format!("column order {order:?} is not a permutation of 0..{n}")));
        }
    }
    if order.len() != n {
        return Err(Error::Argument(format!("column order {order:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

/// Anything that maps rows of a table to `n × d` embeddings on a tape.
pub trait NodeEncoder: Send + Sync {
    fn d(&self) -> usize;

    fn init_params(&self, seed: u64) -> Result<ParameterStore>;

    fn encode_rows(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        rows: &[usize],
        pass: &mut Pass,
    ) -> Result<Var>;
}

/// Inference over a whole table, chunked and run in parallel.
pub fn encode_table_with<F>(table: &Table, d: usize, encode: F) -> Result<DenseArray>
where
    F: Fn(&mut Tape, &[usize]) -> Result<Var> + Sync,
{
    if table.is_empty() {
        return Err(Error::Argument(format!("table `{}` has no rows", table.name())));
    }
    let rows: Vec<usize> = (0..table.len()).collect();
    let chunks: Vec<Vec<f64>> = rows
        .par_chunks(ENCODE_CHUNK)
        .map(|chunk| {
            let mut tape = Tape::no_grad();
            let z = encode(&mut tape, chunk)?;
            Ok(tape.value(z).data().to_vec())
        })
        .collect::<Result<_>>()?;
    DenseArray::matrix(table.len(), d, chunks.concat())
}

pub struct RelateEncoder {
    config: RelateConfig,
    tokens: Arc<TokenTable>,
    metadata: HashMap<(String, String), Vec<f64>>,
}

impl RelateEncoder {
    pub fn new(config: RelateConfig, tokens: Arc<TokenTable>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tokens,
            metadata: HashMap::new(),
        })
    }

    pub fn config(&self) -> &RelateConfig {
        &self.config
    }

    pub fn tokens(&self) -> &TokenTable {
        &self.tokens
    }

    /// Precomputes the metadata vector of every feature column.
    pub fn bind_schema(&mut self, manifest: &SchemaManifest) {
        for t in &manifest.tables {
            for (_, c) in t.feature_columns() {
                let v = self.tokens.embed_column_metadata(&t.name, &c.name, c.description.as_deref());
                self.metadata.insert((t.name.clone(), c.name.clone()), v);
            }
        }
    }

    pub fn column_metadata(&self, table: &TableSpec, column: usize) -> Vec<f64> {
        let c = &table.columns[column];
        match self.metadata.get(&(table.name.clone(), c.name.clone())) {
            Some(v) => v.clone(),
            None => self.tokens.embed_column_metadata(&table.name, &c.name, c.description.as_deref()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count(self.tokens.dim())
    }

    pub fn register(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text_dim = self.tokens.dim();
        modality::register(store, &self.config.modality_dims(text_dim), &mut rng)?;
        conditioning::register(store, &self.config.conditioning_dims(text_dim), &mut rng)?;
        match self.config.aggregator {
            Aggregator::Perceiver => perceiver::register(store, &self.config.perceiver, &mut rng),
            Aggregator::FullSelfAttention => {
                store.insert(
                    perceiver::EMPTY_ROW,
                    DenseArray::randn(&[1, self.config.d()], 0.5, &mut rng),
                    true,
                )?;
                perceiver::register_full_sa(store, &self.config.perceiver, &mut rng)
            }
        }
    }

    /// Conditioned embedding of one feature column, `n × d`.
    pub fn column_embedding(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        column: usize,
        rows: &[usize],
    ) -> Result<Var> {
        let meta = self.column_metadata(&table.spec, column);
        let name = &table.spec.columns[column].name;
        match column_cells(table, column, rows)? {
            ColumnCells::Numbers(v) => {
                let x = modality::encode_numbers(tape, store, &v, &self.config.fone)?;
                conditioning::condition_additive(tape, store, x, &meta)
            }
            ColumnCells::Texts(v) => {
                let x = modality::encode_texts(tape, store, &v, &self.tokens)?;
                conditioning::condition_additive(tape, store, x, &meta)
            }
            ColumnCells::Timestamps(v) => {
                let x = modality::encode_timestamps(tape, store, &v)?;
                conditioning::condition_gated(tape, store, x, &meta)
            }
            ColumnCells::Categories(v) => {
                let x = modality::encode_categoricals(tape, store, table.name(), name, &v)?;
                Ok(conditioning::condition_hashed(x))
            }
        }
    }

    /// Column embeddings of `rows` stacked as `(n, C, d)`. `order` permutes
    /// the feature columns.
    pub fn column_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        rows: &[usize],
        order: Option<&[usize]>,
    ) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Argument("no rows to encode".into()));
        }
        let features: Vec<usize> = table.spec.feature_columns().map(|(i, _)| i).collect();
        if features.is_empty() {
            return perceiver::empty_nodes(tape, store, &self.config.perceiver, table.name(), rows.len());
        }
        let columns: Vec<usize> = match order {
            Some(o) => {
                check_permutation(o, features.len())?;
                o.iter().map(|&i| features[i]).collect()
            }
            None => features,
        };
        let parts = columns
            .iter()
            .map(|&c| self.column_embedding(tape, store, table, c, rows))
            .collect::<Result<Vec<_>>>()?;
        let flat = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        tape.reshape(flat, &[rows.len(), columns.len(), self.config.d()])
    }

    pub fn encode_rows_ordered(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        rows: &[usize],
        order: Option<&[usize]>,
        pass: &mut Pass,
    ) -> Result<Var> {
        let x = self.column_embeddings(tape, store, table, rows, order)?;
        match self.config.aggregator {
            Aggregator::Perceiver => perceiver::encode_node(tape, store, &self.config.perceiver, x, pass),
            Aggregator::FullSelfAttention => perceiver::encode_node_full_sa(tape, store, &self.config.perceiver, x, pass),
        }
    }

    /// Eval-mode embeddings of every row of `table`, `n × d`.
    pub fn encode_table(&self, store: &ParameterStore, table: &Table, order: Option<&[usize]>) -> Result<DenseArray> {
        encode_table_with(table, self.config.d(), |tape, rows| {
            self.encode_rows_ordered(tape, store, table, rows, order, &mut Pass::eval())
        })
    }
}

impl NodeEncoder for RelateEncoder {
    fn d(&self) -> usize {
        self.config.d()
    }

    fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        self.register(&mut store, seed)?;
        Ok(store)
    }

    fn encode_rows(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        rows: &[usize],
        pass: &mut Pass,
    ) -> Result<Var> {
        self.encode_rows_ordered(tape, store, table, rows, None, pass)
    }
}
