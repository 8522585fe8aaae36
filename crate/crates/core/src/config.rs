//! Run configuration shared by the CLI commands.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every input path must exist when the config is loaded.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baseline::{StandardConfig, StandardEncoder};
use crate::encoder::{Aggregator, NodeEncoder, RelateConfig, RelateEncoder};
use crate::error::{Error, Result};
use crate::schema::{load_database, parse_manifest, RelationalDatabase, SchemaManifest, Table};
use crate::synth::{generate_synthetic_db, SyntheticDbSpec};
use crate::task::TaskSpec;
use crate::text::{TokenTable, DEFAULT_FALLBACK_BUCKETS};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderChoice {
    #[default]
    Relate,
    Standard,
    RelateFullSa,
}

impl EncoderChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderChoice::Relate => "relate",
            EncoderChoice::Standard => "standard",
            EncoderChoice::RelateFullSa => "relate-full-sa",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderChoice,
    /// Schema manifest of an on-disk dataset; needs `data_dir`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Directory with one `<table>.csv` per table.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Generated dataset, used when no manifest is given.
    #[serde(default)]
    pub synthetic: Option<SyntheticDbSpec>,
    /// Word2vec-format token table; the built-in demo table when absent.
    #[serde(default)]
    pub token_table: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub relate: RelateConfig,
    #[serde(default)]
    pub standard: StandardConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Tasks to train; `tasks_file` or the generator's tasks when absent.
    #[serde(default)]
    pub tasks: Option<Vec<TaskSpec>>,
    /// JSON array of tasks.
    #[serde(default)]
    pub tasks_file: Option<PathBuf>,
    /// Manifests audited by `param-audit`; the built-in scaling family when empty.
    #[serde(default)]
    pub audit_schemas: Vec<PathBuf>,
    /// Trained parameter file read by `encode`; fresh init from `seed` when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Column counts timed by `ablate`.
    #[serde(default = "default_timing_columns")]
    pub timing_columns: Vec<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_timing_columns() -> Vec<usize> {
    vec![16, 64, 128]
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(what: &str, p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.manifest, &mut self.data_dir, &mut self.token_table, &mut self.model, &mut self.tasks_file]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
        for p in &mut self.audit_schemas {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.data_dir, &self.synthetic) {
            (Some(m), Some(d), None) => {
                must_exist("manifest", m)?;
                must_exist("data directory", d)?;
            }
            (None, None, Some(s)) => s.validate()?,
            (None, None, None) => {}
            _ => {
                return Err(Error::Config(
                    "give either `manifest` with `data_dir`, or `synthetic`".into(),
                ))
            }
        }
        if let Some(t) = &self.token_table {
            must_exist("token table", t)?;
        }
        if self.tasks.is_some() && self.tasks_file.is_some() {
            return Err(Error::Config("give `tasks` or `tasks_file`, not both".into()));
        }
        if let Some(t) = &self.tasks_file {
            must_exist("tasks file", t)?;
        }
        if let Some(m) = &self.model {
            must_exist("model", m)?;
        }
        for s in &self.audit_schemas {
            must_exist("audit schema", s)?;
        }
        self.relate.validate()?;
        self.standard.validate()?;
        self.train.validate()?;
        for t in self.tasks.iter().flatten() {
            t.validate()?;
        }
        Ok(())
    }

    pub fn tokens(&self) -> Result<Arc<TokenTable>> {
        Ok(Arc::new(match &self.token_table {
            Some(p) => TokenTable::load(p, DEFAULT_FALLBACK_BUCKETS)?,
            None => TokenTable::demo(),
        }))
    }

    /// The dataset and its tasks.
    pub fn database(&self) -> Result<(RelationalDatabase, Vec<TaskSpec>)> {
        let (db, generated) = match (&self.manifest, &self.data_dir, &self.synthetic) {
            (Some(m), Some(d), _) => (load_database(&parse_manifest(m)?, d)?, Vec::new()),
            (_, _, Some(s)) => generate_synthetic_db(s)?,
            _ => return Err(Error::Config("config names no dataset".into())),
        };
        let tasks = match (&self.tasks, &self.tasks_file) {
            (Some(t), _) => t.clone(),
            (None, Some(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let tasks: Vec<TaskSpec> =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid tasks file: {e}")))?;
                for t in &tasks {
                    t.validate()?;
                }
                tasks
            }
            (None, None) => generated,
        };
        Ok((db, tasks))
    }

    fn relate_with(&self, aggregator: Aggregator) -> RelateConfig {
        RelateConfig {
            aggregator,
            ..self.relate.clone()
        }
    }

    pub fn build_encoder(&self, manifest: &SchemaManifest, tokens: Arc<TokenTable>) -> Result<AnyEncoder> {
        Ok(match self.encoder {
            EncoderChoice::Relate | EncoderChoice::RelateFullSa => {
                let aggregator = if self.encoder == EncoderChoice::Relate {
                    Aggregator::Perceiver
                } else {
                    Aggregator::FullSelfAttention
                };
                let mut enc = RelateEncoder::new(self.relate_with(aggregator), tokens)?;
                enc.bind_schema(manifest);
                AnyEncoder::Relate(enc)
            }
            EncoderChoice::Standard => {
                AnyEncoder::Standard(StandardEncoder::new(self.standard.clone(), manifest.clone(), tokens)?)
            }
        })
    }
}

pub enum AnyEncoder {
    Relate(RelateEncoder),
    Standard(StandardEncoder),
}

impl AnyEncoder {
    pub fn as_node_encoder(&self) -> &dyn NodeEncoder {
        match self {
            AnyEncoder::Relate(e) => e,
            AnyEncoder::Standard(e) => e,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            AnyEncoder::Relate(e) => e.parameter_count(),
            AnyEncoder::Standard(e) => e.parameter_count(),
        }
    }

    /// Eval-mode embeddings of every row. `order` permutes the feature
    /// columns fed to a RELATE encoder; the standard encoder binds columns
    /// by name and ignores it.
    pub fn encode_table(
        &self,
        store: &crate::params::ParameterStore,
        table: &Table,
        order: Option<&[usize]>,
    ) -> Result<crate::tensor::DenseArray> {
        match self {
            AnyEncoder::Relate(e) => e.encode_table(store, table, order),
            AnyEncoder::Standard(e) => e.encode_table(store, table),
        }
    }
}
