use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use relate::ablation::{ablate, attention_timing};
use relate::audit::{audit_parameters, render_table, synthetic_audit_schema, trial_like_schema, SCALING_COLUMNS, SCALING_TABLES};
use relate::config::{EncoderChoice, RunConfig};
use relate::diagnostics::gradcheck_blocks;
use relate::graph::build_graph;
use relate::schema::{load_database, parse_manifest, suggest_modality, SchemaManifest};
use relate::synth::generate_synthetic_db;
use relate::train::{history_csv, train, Setup};
use relate::{Error, ParameterStore, Result};

const PERMUTE_SALT: u64 = 0x7065_726d;

#[derive(Parser)]
#[command(name = "relate", version, about = "Schema-agnostic row encoder for relational databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the encoder choice.
    #[arg(long, value_enum)]
    encoder: Option<EncoderChoice>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a schema and its CSVs and report graph counts.
    IngestCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "data_dir", conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one embedding per row of a table as CSV.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        out: PathBuf,
        /// Feed the feature columns in a seeded random order.
        #[arg(long)]
        permute_columns: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train on every task of the config and write metrics and models.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this task.
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare parameter counts of the universal and standard encoders.
    ParamAudit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train latent cross-attention and full self-attention side by side.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference check of every block at d = 8.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the synthetic three-table dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory when no config is given.
        #[arg(long, required_unless_present = "config")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Suggest a modality for every column of a CSV file.
    SuggestModality {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = o.encoder {
        cfg.encoder = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn ingest_check(config: Option<PathBuf>, manifest: Option<PathBuf>, data_dir: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let db = match (config, manifest, data_dir) {
        (Some(c), _, _) => RunConfig::load(c)?.database()?.0,
        (None, Some(m), Some(d)) => load_database(&parse_manifest(m)?, d)?,
        _ => return Err(Error::Config("give --config or --manifest with --data-dir".into())),
    };
    let g = build_graph(&db);
    let report = json!({
        "tables": db.tables.iter().map(|t| json!({"name": t.name(), "rows": t.len()})).collect::<Vec<_>>(),
        "nodes": g.total_nodes(),
        "edges": g.edges.len(),
        "edge_types": g.edge_count_by_type().into_iter().map(|(n, c)| json!({"type": n, "count": c})).collect::<Vec<_>>(),
        "dangling": g.dangling,
        "dangling_total": g.dangling_total(),
    });
    let text = pretty(&report);
    print!("{text}");
    if let Some(out) = out {
        write(&out, &text)?;
    }
    Ok(())
}

fn encode(cfg: &RunConfig, table: &str, out: &Path, permute: bool) -> Result<()> {
    let (db, _) = cfg.database()?;
    let t = db
        .table(table)
        .ok_or_else(|| Error::Schema(format!("unknown table `{table}`")))?;
    let enc = cfg.build_encoder(&db.manifest, cfg.tokens()?)?;
    let store = match &cfg.model {
        Some(p) => ParameterStore::load(p)?,
        None => enc.as_node_encoder().init_params(cfg.seed)?,
    };
    let order: Option<Vec<usize>> = permute.then(|| {
        let mut o: Vec<usize> = (0..t.spec.feature_columns().count()).collect();
        o.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ PERMUTE_SALT));
        o
    });
    let z = enc.encode_table(&store, t, order.as_deref())?;
    let d = z.cols();
    let mut text = String::from("row_id");
    for j in 0..d {
        text.push_str(&format!(",e{j}"));
    }
    text.push('\n');
    let key = t.spec.primary_key();
    for r in 0..t.len() {
        match key {
            Some(k) => text.push_str(&t.rows[r][k].to_field()),
            None => text.push_str(&r.to_string()),
        }
        for v in z.row_slice(r) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write(out, &text)
}

fn run_train(cfg: &RunConfig, only: Option<&str>) -> Result<()> {
    let (db, tasks) = cfg.database()?;
    let g = build_graph(&db);
    let enc = cfg.build_encoder(&db.manifest, cfg.tokens()?)?;
    let mut summary = Vec::new();
    let selected: Vec<_> = tasks.iter().filter(|t| only.is_none_or(|n| n == t.name)).collect();
    if selected.is_empty() {
        return Err(Error::Config("no task to train".into()));
    }
    for task in selected {
        let data = task.prepare(&db, cfg.seed)?;
        let setup = Setup::new(&db, &g, enc.as_node_encoder(), &cfg.train, task)?;
        let model = train(&setup, task, &data, cfg.seed)?;
        let dir = cfg.output_dir.join(&task.name);
        write(&dir.join("history.csv"), &history_csv(&model.report.history))?;
        let bin = dir.join("model.bin");
        fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        model.store.save(&bin)?;
        let sidecar = json!({
            "encoder": cfg.encoder.as_str(),
            "seed": cfg.seed,
            "task": task,
            "relate": cfg.relate,
            "standard": cfg.standard,
            "train": cfg.train,
            "encoder_parameters": enc.parameter_count(),
            "total_parameters": model.store.total_count(),
            "edge_types": g.edge_types.iter().map(|e| e.name.clone()).collect::<Vec<_>>(),
            "regression_scale": "raw",
        });
        write(&dir.join("model.json"), &pretty(&sidecar))?;
        println!(
            "{}: best val {} {:.4} at epoch {}, test {:.4}",
            task.name, model.report.metric, model.report.best_val, model.report.best_epoch, model.report.test_at_best
        );
        summary.push(json!({
            "task": task.name,
            "metric": model.report.metric,
            "best_epoch": model.report.best_epoch,
            "best_val": model.report.best_val,
            "test_at_best": model.report.test_at_best,
            "steps": model.report.steps,
            "rows": [model.report.train_rows, model.report.val_rows, model.report.test_rows],
        }));
    }
    let report = json!({"encoder": cfg.encoder.as_str(), "seed": cfg.seed, "tasks": summary});
    write(&cfg.output_dir.join("train_report.json"), &pretty(&report))
}

fn param_audit(cfg: &RunConfig) -> Result<()> {
    let tokens = cfg.tokens()?;
    let schemas: Vec<(String, SchemaManifest)> = if cfg.audit_schemas.is_empty() {
        let mut v: Vec<(String, SchemaManifest)> = SCALING_COLUMNS
            .iter()
            .map(|&c| (format!("synthetic-{c}"), synthetic_audit_schema(c, SCALING_TABLES)))
            .collect();
        v.push(("trial-like".into(), trial_like_schema()));
        v
    } else {
        cfg.audit_schemas
            .iter()
            .map(|p| {
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((label, parse_manifest(p)?))
            })
            .collect::<Result<_>>()?
    };
    let reports = schemas
        .iter()
        .map(|(label, m)| audit_parameters(label, m, &cfg.relate, &cfg.standard, tokens.clone()))
        .collect::<Result<Vec<_>>>()?;
    let table = render_table(&reports);
    print!("{table}");
    write(&cfg.output_dir.join("param_audit.txt"), &table)?;
    write(&cfg.output_dir.join("param_audit.json"), &pretty(&reports))
}

fn run_ablate(cfg: &RunConfig, only: Option<&str>) -> Result<()> {
    let (db, tasks) = cfg.database()?;
    let tasks: Vec<_> = tasks.into_iter().filter(|t| only.is_none_or(|n| n == t.name)).collect();
    let g = build_graph(&db);
    let report = ablate(&db, &g, &tasks, &cfg.relate, &cfg.tokens()?, &cfg.train, cfg.seed)?;
    for r in &report.rows {
        println!(
            "{}: cross AUC {:.4}, full-SA AUC {:.4}, ratio {:.4}, score counts exact: {}",
            r.task, r.cross_auc, r.full_sa_auc, r.ratio, r.scores.exact()
        );
    }
    write(&cfg.output_dir.join("ablation.json"), &pretty(&report))?;
    write(&cfg.output_dir.join("ablation.csv"), &report.to_csv())?;
    // Wall-clock numbers vary between runs and stay out of the report.
    let timing = attention_timing(&cfg.relate.perceiver, &cfg.timing_columns, 64, 3, cfg.seed)?;
    write(&cfg.output_dir.join("ablation_timing.json"), &pretty(&timing))
}

fn gradcheck(config: Option<PathBuf>, seed: Option<u64>) -> Result<bool> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let report = gradcheck_blocks(seed)?;
    let text = pretty(&report);
    print!("{text}");
    if let Some(c) = &cfg {
        write(&c.output_dir.join("gradcheck.json"), &text)?;
    }
    Ok(report.passed())
}

fn synth(config: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let mut spec = cfg.as_ref().and_then(|c| c.synthetic.clone()).unwrap_or_default();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let dir = out
        .or(cfg.map(|c| c.output_dir))
        .ok_or_else(|| Error::Config("give --out".into()))?;
    let (db, tasks) = generate_synthetic_db(&spec)?;
    db.write_dir(&dir)?;
    write(&dir.join("tasks.json"), &pretty(&tasks))?;
    println!("wrote {} tables and {} tasks to {}", db.tables.len(), tasks.len(), dir.display());
    Ok(())
}

fn suggest(csv_path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| Error::Ingestion {
        table: csv_path.display().to_string(),
        message: e.to_string(),
    })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        for (c, v) in record.iter().enumerate().take(headers.len()) {
            columns[c].push(v.to_string());
        }
    }
    let suggestions: Vec<_> = headers
        .iter()
        .zip(&columns)
        .map(|(h, vals)| suggest_modality(h, &vals.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect();
    print!("{}", pretty(&suggestions));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::IngestCheck { config, manifest, data_dir, out } => ingest_check(config, manifest, data_dir, out)?,
        Command::Encode { config, table, out, permute_columns, overrides } => {
            encode(&load_config(&config, &overrides)?, &table, &out, permute_columns)?
        }
        Command::Train { config, task, overrides } => run_train(&load_config(&config, &overrides)?, task.as_deref())?,
        Command::ParamAudit { config } => param_audit(&RunConfig::load(config)?)?,
        Command::Ablate { config, task, overrides } => run_ablate(&load_config(&config, &overrides)?, task.as_deref())?,
        Command::Gradcheck { config, seed } => return gradcheck(config, seed),
        Command::Synth { config, out, seed } => synth(config, out, seed)?,
        Command::SuggestModality { csv } => suggest(&csv)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(n) = std::env::var("RELATE_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
            }
            _ => {
                eprintln!("error: RELATE_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check exceeded tolerance");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
