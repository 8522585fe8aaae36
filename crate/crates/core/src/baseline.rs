//! Schema-specific standard encoder.
//!
//! Every feature column owns its encoder: an unshared projection over the
//! same raw features the shared encoder uses (or its own hash table for
//! categoricals) plus its own missing token. A row is the concatenation of
//! its column encodings in manifest order, mapped to `d` by a per-table
//! two-layer MLP. Tables without feature columns get one learned row.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::{column_cells, encode_table_with, ColumnCells, NodeEncoder};
use crate::error::{Error, Result};
use crate::modality::{self, FoneConfig, DEFAULT_HASH_VOCAB, TIME_DIM};
use crate::params::ParameterStore;
use crate::perceiver::Pass;
use crate::schema::{ColumnSpec, Modality, SchemaManifest, Table, TableSpec};
use crate::tensor::DenseArray;
use crate::text::TokenTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandardConfig {
    pub d: usize,
    /// Output width of each column encoder.
    pub d_col: usize,
    /// Hidden width of the per-table backbone.
    pub hidden: usize,
    /// Rows of each categorical column's own hash table.
    pub hash_vocab: usize,
    pub fone: FoneConfig,
}

impl Default for StandardConfig {
    fn default() -> Self {
        Self {
            d: 128,
            d_col: 128,
            hidden: 128,
            hash_vocab: DEFAULT_HASH_VOCAB,
            fone: FoneConfig::default(),
        }
    }
}

impl StandardConfig {
    pub fn validate(&self) -> Result<()> {
        self.fone.validate()?;
        if self.d == 0 || self.d_col == 0 || self.hidden == 0 || self.hash_vocab == 0 {
            return Err(Error::Config("standard encoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Rows of the raw feature matrix a column encoder projects.
    pub fn raw_width(&self, modality: Modality, text_dim: usize) -> usize {
        match modality {
            Modality::Numerical => self.fone.dim(),
            Modality::Timestamp => TIME_DIM,
            Modality::Textual => text_dim,
            Modality::Categorical => self.hash_vocab,
            _ => 0,
        }
    }

    pub fn column_parameter_count(&self, modality: Modality, text_dim: usize) -> usize {
        (self.raw_width(modality, text_dim) + 1) * self.d_col
    }

    pub fn table_parameter_count(&self, table: &TableSpec, text_dim: usize) -> usize {
        let cols: Vec<Modality> = table.feature_columns().map(|(_, c)| c.modality).collect();
        if cols.is_empty() {
            return self.d;
        }
        let encoders: usize = cols.iter().map(|&m| self.column_parameter_count(m, text_dim)).sum();
        let backbone = cols.len() * self.d_col * self.hidden + self.hidden + self.hidden * self.d + self.d;
        encoders + backbone
    }

    pub fn parameter_count(&self, manifest: &SchemaManifest, text_dim: usize) -> usize {
        manifest.tables.iter().map(|t| self.table_parameter_count(t, text_dim)).sum()
    }
}

fn column_prefix(table: &str, column: &str) -> String {
    format!("std.{table}.{column}")
}

pub fn table_prefix(table: &str) -> String {
    format!("std.{table}.")
}

struct ColumnNames {
    weight: String,
    missing: String,
}

fn column_names(table: &str, c: &ColumnSpec) -> ColumnNames {
    let p = column_prefix(table, &c.name);
    let weight = if c.modality == Modality::Categorical {
        format!("{p}.vocab")
    } else {
        format!("{p}.proj")
    };
    ColumnNames {
        weight,
        missing: format!("{p}.missing"),
    }
}

struct BackboneNames {
    w1: String,
    b1: String,
    w2: String,
    b2: String,
    empty: String,
}

fn backbone_names(table: &str) -> BackboneNames {
    BackboneNames {
        w1: format!("std.{table}.backbone.w1"),
        b1: format!("std.{table}.backbone.b1"),
        w2: format!("std.{table}.backbone.w2"),
        b2: format!("std.{table}.backbone.b2"),
        empty: format!("std.{table}.empty"),
    }
}

pub struct StandardEncoder {
    config: StandardConfig,
    manifest: SchemaManifest,
    tokens: Arc<TokenTable>,
}

impl StandardEncoder {
    pub fn new(config: StandardConfig, manifest: SchemaManifest, tokens: Arc<TokenTable>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            manifest,
            tokens,
        })
    }

    pub fn config(&self) -> &StandardConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count(&self.manifest, self.tokens.dim())
    }

    pub fn register(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.config;
        let text_dim = self.tokens.dim();
        for t in &self.manifest.tables {
            let b = backbone_names(&t.name);
            let cols: Vec<&ColumnSpec> = t.feature_columns().map(|(_, c)| c).collect();
            if cols.is_empty() {
                store.insert(b.empty, DenseArray::randn(&[1, cfg.d], 0.5, &mut rng), true)?;
                continue;
            }
            for c in &cols {
                let n = column_names(&t.name, c);
                let rows = cfg.raw_width(c.modality, text_dim);
                let w = if c.modality == Modality::Categorical {
                    DenseArray::randn(&[rows, cfg.d_col], 0.5, &mut rng)
                } else {
                    DenseArray::glorot(rows, cfg.d_col, &mut rng)
                };
                store.insert(n.weight, w, true)?;
                store.insert(n.missing, DenseArray::randn(&[1, cfg.d_col], 0.5, &mut rng), true)?;
            }
            store.insert(b.w1, DenseArray::glorot(cols.len() * cfg.d_col, cfg.hidden, &mut rng), true)?;
            store.insert(b.b1, DenseArray::zeros(&[1, cfg.hidden]), true)?;
            store.insert(b.w2, DenseArray::glorot(cfg.hidden, cfg.d, &mut rng), true)?;
            store.insert(b.b2, DenseArray::zeros(&[1, cfg.d]), true)?;
        }
        Ok(())
    }

    fn column_encoding(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        column: usize,
        rows: &[usize],
    ) -> Result<Var> {
        let spec = &table.spec.columns[column];
        let n = column_names(table.name(), spec);
        let (raw, width) = match column_cells(table, column, rows)? {
            ColumnCells::Numbers(v) => (modality::raw_numbers(&v, &self.config.fone), self.config.fone.dim()),
            ColumnCells::Timestamps(v) => (modality::raw_timestamps(&v)?, TIME_DIM),
            ColumnCells::Texts(v) => (modality::raw_texts(&v, &self.tokens), self.tokens.dim()),
            ColumnCells::Categories(v) => {
                return modality::lookup_hashed(tape, store, &n.weight, &n.missing, table.name(), &spec.name, &v)
            }
        };
        modality::project_or_missing(tape, store, raw, width, &n.weight, &n.missing)
    }

    /// Encodes rows with the feature columns taken in `order`. The result
    /// depends on the order; the backbone weights stay attached to slot
    /// positions.
    pub fn encode_rows_ordered(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        table: &Table,
        rows: &[usize],
        order: Option<&[usize]>,
    ) -> Result<Var> {
        if self.manifest.table(table.name()).is_none() {
            return Err(Error::Schema(format!("unknown node type `{}`", table.name())));
        }
        if rows.is_empty() {
            return Err(Error::Argument("no rows to encode".into()));
        }
        let b = backbone_names(table.name());
        let features: Vec<usize> = table.spec.feature_columns().map(|(i, _)| i).collect();
        if features.is_empty() {
            let row = tape.param(store, &b.empty)?;
            let zero = tape.constant(DenseArray::zeros(&[rows.len(), self.config.d]));
            return tape.add(zero, row);
        }
        let columns: Vec<usize> = match order {
            Some(o) => {
                crate::encoder::check_permutation(o, features.len())?;
                o.iter().map(|&i| features[i]).collect()
            }
            None => features,
        };
        let parts = columns
            .iter()
            .map(|&c| self.column_encoding(tape, store, table, c, rows))
            .collect::<Result<Vec<_>>>()?;
        let h = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let hidden = tape.linear(store, h, &b.w1, Some(&b.b1))?;
        let hidden = tape.relu(hidden);
        tape.linear(store, hidden, &b.w2, Some(&b.b2))
    }

    pub fn encode_table(&self, store: &ParameterStore, table: &Table) -> Result<DenseArray> {
        encode_table_with(table, self.config.d, |tape, rows| {
            self.encode_rows_ordered(tape, store, table, rows, None)
        })
    }
}

impl NodeEncoder for StandardEncoder {
    fn d(&self) -> usize {
        self.config.d
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
        _pass: &mut Pass,
    ) -> Result<Var> {
        self.encode_rows_ordered(tape, store, table, rows, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::CellValue;

    fn small() -> StandardConfig {
        StandardConfig {
            d: 4,
            d_col: 3,
            hidden: 5,
            hash_vocab: 16,
            fone: FoneConfig::default(),
        }
    }

    fn spec(name: &str, cols: &[(&str, Modality)]) -> TableSpec {
        let mut columns = vec![ColumnSpec::new("id", Modality::PrimaryKey)];
        columns.extend(cols.iter().map(|(n, m)| ColumnSpec::new(*n, *m)));
        TableSpec { name: name.into(), time_column: None, columns }
    }

    fn numeric_table(name: &str, cols: usize, rows: usize) -> Table {
        let names: Vec<String> = (0..cols).map(|i| format!("x{i}")).collect();
        let s = spec(name, &names.iter().map(|n| (n.as_str(), Modality::Numerical)).collect::<Vec<_>>());
        let data = (0..rows)
            .map(|r| {
                let mut v = vec![CellValue::Category(format!("k{r}"))];
                v.extend((0..cols).map(|i| CellValue::Number(((r + 1) * (i + 2)) as f64 * 0.37)));
                v
            })
            .collect();
        Table::new(s, data).unwrap()
    }

    fn encoder(tables: &[&Table]) -> (StandardEncoder, ParameterStore) {
        let manifest = SchemaManifest { tables: tables.iter().map(|t| t.spec.clone()).collect() };
        let e = StandardEncoder::new(small(), manifest, Arc::new(TokenTable::demo())).unwrap();
        let s = e.init_params(1).unwrap();
        (e, s)
    }

    #[test]
    fn single_column_is_backbone_of_column_encoding() {
        let t = numeric_table("a", 1, 1);
        let (e, s) = encoder(&[&t]);
        let mut tape = Tape::no_grad();
        let z = e.encode_rows_ordered(&mut tape, &s, &t, &[0], None).unwrap();
        let x = CellValue::Number(0.74);
        assert_eq!(t.rows[0][1], x);
        let raw = e.config.fone.features(0.74);
        let proj = s.value("std.a.x0.proj").unwrap();
        let h: Vec<f64> = (0..3).map(|j| (0..raw.len()).map(|i| raw[i] * proj.get(i, j)).sum()).collect();
        let w1 = s.value("std.a.backbone.w1").unwrap();
        let a: Vec<f64> = (0..5).map(|j| (0..3).map(|i| h[i] * w1.get(i, j)).sum::<f64>().max(0.0)).collect();
        let w2 = s.value("std.a.backbone.w2").unwrap();
        for j in 0..4 {
            let expected: f64 = (0..5).map(|i| a[i] * w2.get(i, j)).sum();
            assert!((tape.value(z).data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn column_order_matters() {
        let t = numeric_table("a", 4, 3);
        let (e, s) = encoder(&[&t]);
        let mut tape = Tape::no_grad();
        let base = e.encode_rows_ordered(&mut tape, &s, &t, &[0, 1, 2], None).unwrap();
        let swapped = e.encode_rows_ordered(&mut tape, &s, &t, &[0, 1, 2], Some(&[1, 0, 2, 3])).unwrap();
        assert!(tape.value(base).max_abs_diff(tape.value(swapped)) > 1e-6);
    }

    #[test]
    fn node_types_use_disjoint_parameters() {
        let a = numeric_table("a", 2, 1);
        let b = numeric_table("b", 2, 1);
        let (_, s) = encoder(&[&a, &b]);
        let pa: Vec<&str> = s.names().filter(|n| n.starts_with(&table_prefix("a"))).collect();
        let pb: Vec<&str> = s.names().filter(|n| n.starts_with(&table_prefix("b"))).collect();
        assert_eq!(pa.len() + pb.len(), s.len());
        assert_eq!(pa.len(), pb.len());
    }

    #[test]
    fn count_matches_closed_form_for_all_modalities() {
        let s = spec(
            "mixed",
            &[
                ("n", Modality::Numerical),
                ("t", Modality::Timestamp),
                ("c", Modality::Categorical),
                ("x", Modality::Textual),
            ],
        );
        let manifest = SchemaManifest { tables: vec![s, spec("bare", &[])] };
        let e = StandardEncoder::new(small(), manifest, Arc::new(TokenTable::demo())).unwrap();
        let store = e.init_params(0).unwrap();
        let per_col = 3 * (14 + 1) + 3 * (28 + 1) + 3 * (16 + 1) + 3 * (64 + 1);
        let backbone = 4 * 3 * 5 + 5 + 5 * 4 + 4;
        assert_eq!(store.total_count(), per_col + backbone + 4);
        assert_eq!(store.total_count(), e.parameter_count());
    }

    #[test]
    fn adding_a_column_adds_parameters() {
        let cfg = small();
        let counts: Vec<usize> = (1..6)
            .map(|c| cfg.parameter_count(&SchemaManifest { tables: vec![numeric_table("a", c, 1).spec] }, 64))
            .collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn unknown_node_type() {
        let a = numeric_table("a", 1, 1);
        let other = numeric_table("zzz", 1, 1);
        let (e, s) = encoder(&[&a]);
        let mut tape = Tape::no_grad();
        assert!(matches!(
            e.encode_rows_ordered(&mut tape, &s, &other, &[0], None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_cells_use_column_token() {
        let s = spec("m", &[("v", Modality::Numerical)]);
        let t = Table::new(s, vec![vec![CellValue::Category("k".into()), CellValue::Missing]]).unwrap();
        let (e, store) = encoder(&[&t]);
        let mut tape = Tape::no_grad();
        let x = e.column_encoding(&mut tape, &store, &t, 1, &[0]).unwrap();
        assert_eq!(tape.value(x).data(), store.value("std.m.v.missing").unwrap().data());
    }
}
