//! Trainable-parameter audit of the shared encoder against the standard one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baseline::{table_prefix, StandardConfig, StandardEncoder};
use crate::encoder::{NodeEncoder, RelateConfig, RelateEncoder};
use crate::error::Result;
use crate::schema::{ColumnSpec, Modality, SchemaManifest, TableSpec};
use crate::text::TokenTable;

/// Shared hash vocabulary size used by the bundled audit configurations.
pub const AUDIT_HASH_VOCAB: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCount {
    pub total: usize,
    pub closed_form: usize,
    pub formula: String,
    pub breakdown: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamAuditReport {
    pub schema: String,
    pub tables: usize,
    pub feature_columns: usize,
    pub universal: EncoderCount,
    pub standard: EncoderCount,
    /// `universal / standard · 100`.
    pub ratio_percent: f64,
}

impl ParamAuditReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn audit_configs() -> (RelateConfig, StandardConfig) {
    let relate = RelateConfig {
        hash_vocab: AUDIT_HASH_VOCAB,
        ..RelateConfig::default()
    };
    let standard = StandardConfig {
        hash_vocab: AUDIT_HASH_VOCAB,
        ..StandardConfig::default()
    };
    (relate, standard)
}

fn group_counts<'a>(
    store: &'a crate::params::ParameterStore,
    group: impl Fn(&'a str) -> String,
) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (name, p) in store.iter() {
        if p.trainable() {
            *out.entry(group(name)).or_insert(0) += p.value().len();
        }
    }
    out
}

fn relate_group(name: &str) -> String {
    let g = if name.starts_with("relate.shared.") || name == "relate.cat.vocab" {
        "modality_encoders"
    } else if name.starts_with("relate.missing.") {
        "missing_tokens"
    } else if name.starts_with("relate.colproj") || name.starts_with("relate.mlp.") {
        "column_conditioning"
    } else {
        "aggregator"
    };
    g.to_string()
}

fn relate_formula(cfg: &RelateConfig, text_dim: usize) -> String {
    let p = &cfg.perceiver;
    format!(
        "d(F + 28 + T + V + 4) + (T·d + 2·d·d_ff + d_ff + d) + (L·d + d + 8N·d²) with d={}, F={}, T={}, V={}, d_ff={}, L={}, N={}",
        p.d,
        cfg.fone.dim(),
        text_dim,
        cfg.hash_vocab,
        cfg.d_ff.unwrap_or(p.d),
        p.latents,
        p.layers
    )
}

fn standard_formula(cfg: &StandardConfig, text_dim: usize) -> String {
    format!(
        "Σ_tables [Σ_cols (r_c + 1)·d_col + C_t·d_col·h + h + h·d + d], or d for a featureless table; \
         r_c = {} numerical, 28 timestamp, {} textual, {} categorical; d_col={}, h={}, d={}",
        cfg.fone.dim(),
        text_dim,
        cfg.hash_vocab,
        cfg.d_col,
        cfg.hidden,
        cfg.d
    )
}

/// Instantiates both encoders for `manifest` and counts their parameters.
pub fn audit_parameters(
    label: &str,
    manifest: &SchemaManifest,
    relate_config: &RelateConfig,
    standard_config: &StandardConfig,
    tokens: Arc<TokenTable>,
) -> Result<ParamAuditReport> {
    let text_dim = tokens.dim();
    let relate = RelateEncoder::new(relate_config.clone(), tokens.clone())?;
    let rstore = relate.init_params(0)?;
    let standard = StandardEncoder::new(standard_config.clone(), manifest.clone(), tokens)?;
    let sstore = standard.init_params(0)?;

    let universal = EncoderCount {
        total: rstore.total_count(),
        closed_form: relate_config.parameter_count(text_dim),
        formula: relate_formula(relate_config, text_dim),
        breakdown: group_counts(&rstore, relate_group),
    };
    let mut breakdown = BTreeMap::new();
    for t in &manifest.tables {
        breakdown.insert(t.name.clone(), sstore.count_with_prefix(&table_prefix(&t.name)));
    }
    let standard = EncoderCount {
        total: sstore.total_count(),
        closed_form: standard_config.parameter_count(manifest, text_dim),
        formula: standard_formula(standard_config, text_dim),
        breakdown,
    };
    let ratio_percent = if standard.total == 0 {
        f64::INFINITY
    } else {
        universal.total as f64 / standard.total as f64 * 100.0
    };
    Ok(ParamAuditReport {
        schema: label.to_string(),
        tables: manifest.tables.len(),
        feature_columns: manifest.feature_column_count(),
        universal,
        standard,
        ratio_percent,
    })
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[ParamAuditReport]) -> String {
    let headers = ["Schema", "Tables", "Columns", "Std. Encoder (#params)", "Universal (#params)", "Universal / Std (%)"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.schema.clone(),
                r.tables.to_string(),
                r.feature_columns.to_string(),
                r.standard.total.to_string(),
                r.universal.total.to_string(),
                format!("{:.2}", r.ratio_percent),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(headers.to_vec()));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Modality cycle of generated feature columns.
const PATTERN: [Modality; 10] = [
    Modality::Numerical,
    Modality::Numerical,
    Modality::Numerical,
    Modality::Timestamp,
    Modality::Textual,
    Modality::Numerical,
    Modality::Numerical,
    Modality::Textual,
    Modality::Numerical,
    Modality::Numerical,
];

/// `tables` tables chained by foreign keys sharing `feature_columns` feature
/// columns as evenly as possible.
pub fn synthetic_audit_schema(feature_columns: usize, tables: usize) -> SchemaManifest {
    let tables = tables.max(1);
    let mut out = Vec::with_capacity(tables);
    let mut k = 0;
    for t in 0..tables {
        let name = format!("t{t:02}");
        let mut columns = vec![ColumnSpec::new("id", Modality::PrimaryKey)];
        if t > 0 {
            columns.push(ColumnSpec::foreign_key("parent_id", format!("t{:02}", t - 1)));
        }
        let share = feature_columns / tables + usize::from(t < feature_columns % tables);
        for _ in 0..share {
            columns.push(ColumnSpec::new(format!("f{k:03}"), PATTERN[k % PATTERN.len()]));
            k += 1;
        }
        out.push(TableSpec {
            name,
            time_column: None,
            columns,
        });
    }
    SchemaManifest { tables: out }
}

/// Column counts of the scaling family.
pub const SCALING_COLUMNS: [usize; 4] = [10, 50, 100, 200];
pub const SCALING_TABLES: usize = 4;

/// A wide multi-table schema on which the standard encoder is about five
/// times larger than the shared one under [`audit_configs`].
pub fn trial_like_schema() -> SchemaManifest {
    synthetic_audit_schema(275, 15)
}
