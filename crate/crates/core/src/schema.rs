//! Schema manifests and CSV ingestion into a typed relational database.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Numerical,
    Timestamp,
    Categorical,
    Textual,
    PrimaryKey,
    ForeignKey,
}

impl Modality {
    /// Whether cells of this modality are encoded as node features.
    pub fn is_feature(self) -> bool {
        !matches!(self, Modality::PrimaryKey | Modality::ForeignKey)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Numerical => "numerical",
            Modality::Timestamp => "timestamp",
            Modality::Categorical => "categorical",
            Modality::Textual => "textual",
            Modality::PrimaryKey => "primary_key",
            Modality::ForeignKey => "foreign_key",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fk_target: Option<String>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, modality: Modality) -> Self {
        Self {
            name: name.into(),
            modality,
            description: None,
            fk_target: None,
        }
    }

    pub fn foreign_key(name: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            fk_target: Some(target.into()),
            ..Self::new(name, Modality::ForeignKey)
        }
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = Some(d.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn primary_key(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.modality == Modality::PrimaryKey)
    }

    pub fn feature_columns(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns.iter().enumerate().filter(|(_, c)| c.modality.is_feature())
    }
}

/// A foreign-key → primary-key relation `(from_table, column, to_table)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub from_table: String,
    pub column: String,
    pub to_table: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub tables: Vec<TableSpec>,
}

impl SchemaManifest {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: SchemaManifest =
            serde_json::from_str(s).map_err(|e| Error::Schema(format!("invalid manifest JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if t.name.is_empty() {
                return Err(Error::Schema("table with empty name".into()));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate table `{}`", t.name)));
            }
            let mut cols = HashSet::new();
            let mut pks = 0;
            for c in &t.columns {
                if c.name.is_empty() {
                    return Err(Error::Schema(format!("table `{}` has a column with empty name", t.name)));
                }
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::Schema(format!("duplicate column `{}.{}`", t.name, c.name)));
                }
                if c.modality == Modality::PrimaryKey {
                    pks += 1;
                }
                match (c.modality == Modality::ForeignKey, c.fk_target.is_some()) {
                    (true, false) => {
                        return Err(Error::Schema(format!(
                            "foreign key `{}.{}` has no fk_target",
                            t.name, c.name
                        )))
                    }
                    (false, true) => {
                        return Err(Error::Schema(format!(
                            "column `{}.{}` has fk_target but is not a foreign key",
                            t.name, c.name
                        )))
                    }
                    _ => {}
                }
            }
            if pks > 1 {
                return Err(Error::Schema(format!("table `{}` has more than one primary key", t.name)));
            }
            if let Some(tc) = &t.time_column {
                match t.columns.iter().find(|c| &c.name == tc) {
                    Some(c) if c.modality == Modality::Timestamp => {}
                    Some(_) => {
                        return Err(Error::Schema(format!(
                            "time column `{}.{tc}` is not a timestamp column",
                            t.name
                        )))
                    }
                    None => {
                        return Err(Error::Schema(format!("time column `{}.{tc}` not declared", t.name)))
                    }
                }
            }
        }
        for t in &self.tables {
            for c in &t.columns {
                let Some(target) = &c.fk_target else { continue };
                let Some(tt) = self.table(target) else {
                    return Err(Error::Schema(format!(
                        "foreign key `{}.{}` references undeclared table `{target}`",
                        t.name, c.name
                    )));
                };
                if tt.primary_key().is_none() {
                    return Err(Error::Schema(format!(
                        "table `{target}` referenced by `{}.{}` has no primary key",
                        t.name, c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn relations(&self) -> Vec<Relation> {
        self.tables
            .iter()
            .flat_map(|t| {
                t.columns.iter().filter_map(move |c| {
                    c.fk_target.as_ref().map(|target| Relation {
                        from_table: t.name.clone(),
                        column: c.name.clone(),
                        to_table: target.clone(),
                    })
                })
            })
            .collect()
    }

    pub fn feature_column_count(&self) -> usize {
        self.tables.iter().map(|t| t.feature_columns().count()).sum()
    }
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<SchemaManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SchemaManifest::from_json_str(&text)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellValue {
    Number(f64),
    /// Seconds since 1970-01-01T00:00:00Z.
    Timestamp(i64),
    Category(String),
    Text(String),
    Missing,
}

impl CellValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    pub fn as_key(&self) -> Option<&str> {
        match self {
            CellValue::Category(s) | CellValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<i64> {
        match self {
            CellValue::Timestamp(t) => Some(*t),
            _ => None,
        }
    }

    /// Parses a raw CSV field for a column of the given modality.
    pub fn parse(raw: &str, modality: Modality) -> CellValue {
        if raw.is_empty() {
            return CellValue::Missing;
        }
        match modality {
            Modality::Numerical => match raw.trim().parse::<f64>() {
                Ok(x) if !x.is_nan() => CellValue::Number(x),
                _ => CellValue::Missing,
            },
            Modality::Timestamp => parse_timestamp(raw.trim()).map_or(CellValue::Missing, CellValue::Timestamp),
            Modality::Textual => CellValue::Text(raw.to_string()),
            Modality::Categorical | Modality::PrimaryKey | Modality::ForeignKey => {
                CellValue::Category(raw.to_string())
            }
        }
    }

    /// CSV field form; [`CellValue::parse`] inverts it.
    pub fn to_field(&self) -> String {
        match self {
            CellValue::Number(x) => format!("{x}"),
            CellValue::Timestamp(t) => format_timestamp(*t),
            CellValue::Category(s) | CellValue::Text(s) => s.clone(),
            CellValue::Missing => String::new(),
        }
    }
}

/// RFC 3339, raw integer seconds, or a zone-less date/time taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

pub fn format_timestamp(t: i64) -> String {
    match DateTime::from_timestamp(t, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub spec: TableSpec,
    /// Cells in `spec.columns` order.
    pub rows: Vec<Vec<CellValue>>,
    pk_index: HashMap<String, usize>,
}

impl Table {
    pub fn new(spec: TableSpec, rows: Vec<Vec<CellValue>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != spec.columns.len() {
                return Err(Error::Ingestion {
                    table: spec.name.clone(),
                    message: format!("row {i} has {} cells, expected {}", r.len(), spec.columns.len()),
                });
            }
        }
        let mut pk_index = HashMap::new();
        if let Some(pk) = spec.primary_key() {
            for (i, r) in rows.iter().enumerate() {
                if let Some(key) = r[pk].as_key() {
                    if pk_index.insert(key.to_string(), i).is_some() {
                        return Err(Error::Integrity {
                            table: spec.name.clone(),
                            key: key.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Self { spec, rows, pk_index })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_by_key(&self, key: &str) -> Option<usize> {
        self.pk_index.get(key).copied()
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&CellValue> {
        self.spec.column_index(column).map(|c| &self.rows[row][c])
    }

    /// Timestamp of a row from the table's time column, if any.
    pub fn row_time(&self, row: usize) -> Option<i64> {
        let tc = self.spec.time_column.as_ref()?;
        let c = self.spec.column_index(tc)?;
        self.rows[row][c].as_timestamp()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.spec.columns.iter().map(|c| c.name.as_str()))?;
        for r in &self.rows {
            out.write_record(r.iter().map(CellValue::to_field))?;
        }
        out.flush().map_err(|e| Error::io(format!("{}.csv", self.spec.name), e))?;
        Ok(())
    }

    pub fn from_csv_reader<R: std::io::Read>(spec: TableSpec, reader: R) -> Result<Self> {
        let ingest = |message: String| Error::Ingestion {
            table: spec.name.clone(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| ingest(format!("unreadable header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut positions = Vec::with_capacity(spec.columns.len());
        for c in &spec.columns {
            match header.iter().position(|h| h == &c.name) {
                Some(p) => positions.push(p),
                None => return Err(ingest(format!("header lacks declared column `{}`", c.name))),
            }
        }
        if header.len() != spec.columns.len() {
            let extra: Vec<&String> = header
                .iter()
                .filter(|h| spec.column_index(h).is_none())
                .collect();
            return Err(ingest(format!("header has undeclared columns {extra:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ingest(format!("row {}: {e}", i + 1)))?;
            let row = spec
                .columns
                .iter()
                .zip(&positions)
                .map(|(c, &p)| CellValue::parse(rec.get(p).unwrap_or(""), c.modality))
                .collect();
            rows.push(row);
        }
        Table::new(spec, rows)
    }
}

#[derive(Clone, Debug)]
pub struct RelationalDatabase {
    pub manifest: SchemaManifest,
    pub tables: Vec<Table>,
}

impl RelationalDatabase {
    pub fn new(manifest: SchemaManifest, tables: Vec<Table>) -> Result<Self> {
        manifest.validate()?;
        if tables.len() != manifest.tables.len()
            || tables.iter().zip(&manifest.tables).any(|(t, s)| &t.spec != s)
        {
            return Err(Error::Schema("tables do not match the manifest".into()));
        }
        Ok(Self { manifest, tables })
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name() == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name() == name)
    }

    /// Writes `schema.json` and one `<table>.csv` per table into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let schema = dir.join("schema.json");
        std::fs::write(&schema, self.manifest.to_json_pretty() + "\n").map_err(|e| Error::io(&schema, e))?;
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name()));
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            t.write_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }
}

/// Reads `<directory>/<table>.csv` for every table of the manifest.
pub fn load_database(manifest: &SchemaManifest, directory: impl AsRef<Path>) -> Result<RelationalDatabase> {
    let dir = directory.as_ref();
    manifest.validate()?;
    let tables = manifest
        .tables
        .par_iter()
        .map(|spec| {
            let path = dir.join(format!("{}.csv", spec.name));
            let file = std::fs::File::open(&path).map_err(|e| Error::Ingestion {
                table: spec.name.clone(),
                message: format!("cannot open {}: {e}", path.display()),
            })?;
            Table::from_csv_reader(spec.clone(), std::io::BufReader::new(file))
        })
        .collect::<Result<Vec<_>>>()?;
    RelationalDatabase::new(manifest.clone(), tables)
}

/// Advisory modality guess for a raw column.
#[derive(Clone, Debug, Serialize)]
pub struct ModalitySuggestion {
    pub column: String,
    pub suggested: Modality,
    pub numeric_rate: f64,
    pub timestamp_rate: f64,
    pub cardinality_ratio: f64,
    pub mean_tokens: f64,
}

pub fn suggest_modality(column: &str, values: &[&str]) -> ModalitySuggestion {
    let present: Vec<&str> = values.iter().copied().filter(|v| !v.is_empty()).collect();
    let n = present.len().max(1) as f64;
    let numeric = present.iter().filter(|v| v.trim().parse::<f64>().is_ok()).count() as f64 / n;
    let stamps = present
        .iter()
        .filter(|v| v.trim().parse::<i64>().is_err() && parse_timestamp(v.trim()).is_some())
        .count() as f64
        / n;
    let distinct = present.iter().collect::<HashSet<_>>().len() as f64;
    let cardinality_ratio = distinct / n;
    let mean_tokens = present.iter().map(|v| v.split_whitespace().count()).sum::<usize>() as f64 / n;
    let suggested = if stamps >= 0.9 {
        Modality::Timestamp
    } else if numeric >= 0.9 && cardinality_ratio > 0.05 {
        Modality::Numerical
    } else if mean_tokens >= 3.0 {
        Modality::Textual
    } else {
        Modality::Categorical
    };
    ModalitySuggestion {
        column: column.to_string(),
        suggested,
        numeric_rate: numeric,
        timestamp_rate: stamps,
        cardinality_ratio,
        mean_tokens,
    }
}
