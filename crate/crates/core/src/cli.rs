//! `lmkbqa` command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::embeddings::{EmbeddingProvider, EmbeddingStore};
use crate::error::{Error, Result};
use crate::evaluation::{dataset_to_jsonl, evaluate, load_dataset, QAPair};
use crate::kb::KnowledgeGraph;
use crate::neural::ModelWeights;
use crate::scoring::{answer_question, prepare_question};
use crate::training::{
    grad_check, load_checkpoint, prepare_examples, random_check_case, split_train_validation,
    train_prepared, write_checkpoint, CHECK_MARGIN,
};
use crate::{toy, Error as CrateError};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lmkbqa", version, about = "Knowledge-base question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Overrides the configured checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, validate and summarize the knowledge base.
    BuildKb {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set; defaults to `train_path` from the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Macro-F1 of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Answer one question.
    Answer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        question: String,
    },
    /// Finite-difference check of the analytic gradients on random tiny models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random models to check.
        #[arg(long, default_value_t = 1)]
        instances: u64,
    },
    /// Write stub embeddings for every candidate sequence of a dataset.
    ExportStubEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Also write a `{"key", "tokens"}` JSON Lines manifest for an
        /// external embedding exporter.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write the built-in toy graph, dataset and a config into a directory.
    ToyData {
        #[arg(long)]
        output_dir: PathBuf,
    },
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint_path = Some(c.clone());
    }
    Ok(cfg)
}

fn load_weights(cfg: &RunConfig) -> Result<ModelWeights> {
    let dims = cfg.model_dims()?;
    match &cfg.checkpoint_path {
        Some(path) => {
            let w = load_checkpoint(path, cfg.heads)?;
            if w.dims != dims {
                return Err(Error::Config(format!(
                    "checkpoint dims {:?} do not match config {:?}",
                    w.dims, dims
                )));
            }
            Ok(w)
        }
        None => {
            eprintln!("warning: no checkpoint configured, using untrained weights");
            Ok(ModelWeights::random(dims, cfg.training.seed))
        }
    }
}

fn dataset_path(
    explicit: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf> {
    explicit
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} dataset given")))
}

fn execute(command: Command, out: &mut impl Write) -> Result<i32> {
    match command {
        Command::BuildKb { common } => {
            let cfg = load_config(&common)?;
            let kb = cfg.load_kb()?;
            writeln!(out, "triples={}", kb.len())?;
            writeln!(out, "entities={}", kb.entities().len())?;
            writeln!(out, "named_entities={}", kb.aliases().count())?;
            let relations: std::collections::BTreeSet<_> =
                kb.triples().map(|t| &t.predicate).collect();
            writeln!(out, "relations={}", relations.len())?;
            Ok(EXIT_OK)
        }
        Command::Train { common, dataset } => {
            let cfg = load_config(&common)?;
            let kb = cfg.load_kb()?;
            let provider = cfg.provider()?;
            let data = load_dataset(dataset_path(dataset, &cfg.train_path, "training")?)?;
            let (train_set, valid_set) = match &cfg.valid_path {
                Some(p) => (data, load_dataset(p)?),
                None => split_train_validation(&data, cfg.training.seed),
            };
            let started = Instant::now();
            let train = prepare_examples(&kb, &provider, &train_set, cfg.candidate_cap)?;
            let valid = prepare_examples(&kb, &provider, &valid_set, cfg.candidate_cap)?;
            let init = ModelWeights::random(cfg.model_dims()?, cfg.training.seed);
            let outcome = train_prepared(init, &kb, &train, &valid, &cfg.training, |r| {
                let _ = writeln!(
                    out,
                    "epoch={} loss={:.6} val_f1={:.6} lr={:e}",
                    r.epoch, r.loss, r.val_f1, r.lr
                );
            })?;
            eprintln!("trained in {:.1}s", started.elapsed().as_secs_f64());
            if let Some(path) = &cfg.checkpoint_path {
                write_checkpoint(&outcome.weights, path)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Eval { common, dataset } => {
            let cfg = load_config(&common)?;
            let kb = cfg.load_kb()?;
            let provider = cfg.provider()?;
            let weights = load_weights(&cfg)?;
            let data = load_dataset(dataset_path(dataset, &cfg.test_path, "evaluation")?)?;
            let report = evaluate(
                &weights,
                &provider,
                &kb,
                &data,
                cfg.training.answer_threshold,
                cfg.candidate_cap,
                common.threads.max(1),
            )?;
            for r in &report.per_question {
                writeln!(
                    out,
                    "id={} f1={:.6} predicted={}",
                    r.id,
                    r.score.f1,
                    r.predicted.join("|")
                )?;
            }
            writeln!(out, "macro_f1={:.6}", report.macro_f1)?;
            Ok(EXIT_OK)
        }
        Command::Answer { common, question } => {
            let cfg = load_config(&common)?;
            let kb = cfg.load_kb()?;
            let provider = cfg.provider()?;
            let weights = load_weights(&cfg)?;
            let set = answer_question(
                &weights,
                &provider,
                &kb,
                &question,
                cfg.training.answer_threshold,
                cfg.candidate_cap,
            )?;
            for e in &set.selected {
                writeln!(out, "{}", kb.display_name(e))?;
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck { common, instances } => {
            let cfg = load_config(&common)?;
            let mut all_ok = true;
            for i in 0..instances.max(1) {
                let (w, inst) = random_check_case(cfg.training.seed + i);
                let report = grad_check(&w, &inst, CHECK_MARGIN, 1e-5, 1e-4)?;
                for t in &report.tensors {
                    writeln!(
                        out,
                        "{} max_rel_err={:.3e} {}",
                        t.name,
                        t.max_rel_error,
                        if t.passed { "ok" } else { "FAIL" }
                    )?;
                }
                writeln!(
                    out,
                    "case seed={} checked={} skipped={} max_rel_err={:.3e}",
                    cfg.training.seed + i,
                    report.checked,
                    report.skipped,
                    report.max_rel_error()
                )?;
                all_ok &= report.passed();
            }
            Ok(if all_ok { EXIT_OK } else { EXIT_RUNTIME })
        }
        Command::ExportStubEmbeddings {
            common,
            dataset,
            output,
            manifest,
        } => {
            let cfg = load_config(&common)?;
            let kb = cfg.load_kb()?;
            let data = load_dataset(dataset_path(dataset, &cfg.train_path, "export")?)?;
            let (store, keys) = export_stub(&kb, &data, &cfg)?;
            store.write(&output)?;
            if let Some(path) = manifest {
                write_manifest(&keys, &path)?;
            }
            writeln!(out, "entries={} dim={}", store.len(), store.dim)?;
            Ok(EXIT_OK)
        }
        Command::ToyData { output_dir } => {
            write_toy_data(&output_dir)?;
            writeln!(out, "wrote toy data to {}", output_dir.display())?;
            Ok(EXIT_OK)
        }
    }
}

/// `(key, tokens)` for every exported sequence.
pub type Manifest = Vec<(String, Vec<String>)>;

/// Stub embeddings (as 32-bit floats) for every candidate sequence of every
/// linkable question, plus the token lists of each key.
pub fn export_stub(
    kb: &KnowledgeGraph,
    data: &[QAPair],
    cfg: &RunConfig,
) -> Result<(EmbeddingStore, Manifest)> {
    let provider = EmbeddingProvider::stub(cfg.embedding_dim, cfg.embedding_seed);
    let mut store = EmbeddingStore::new(cfg.embedding_dim);
    let mut keys = std::collections::BTreeMap::new();
    for pair in data {
        let prepared = match prepare_question(kb, &provider, &pair.question, cfg.candidate_cap) {
            Ok(p) => p,
            Err(CrateError::NoTopicEntity | CrateError::EmptyQuestion) => continue,
            Err(e) => return Err(e),
        };
        for c in prepared.candidates {
            let key = c.sequence.key();
            store.insert(key.clone(), c.embedding.mapv(|v| v as f32))?;
            keys.insert(key, c.sequence.tokens);
        }
    }
    Ok((store, keys.into_iter().collect()))
}

fn write_manifest(keys: &Manifest, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (key, tokens) in keys {
        text.push_str(&serde_json::to_string(
            &serde_json::json!({ "key": key, "tokens": tokens }),
        )?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Toy graph files, the 40-question dataset and a matching config.
pub fn write_toy_data(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let kb = toy::toy_kb();
    std::fs::write(dir.join("triples.tsv"), kb.to_triples_tsv())?;
    std::fs::write(dir.join("names.tsv"), kb.to_names_tsv())?;
    std::fs::write(dir.join("toy.jsonl"), dataset_to_jsonl(&toy::toy_dataset()))?;
    let cfg = serde_json::json!({
        "triples_path": "triples.tsv",
        "names_path": "names.tsv",
        "type_relation": toy::TYPE_RELATION,
        "embedding_mode": "stub",
        "embedding_dim": 64,
        "embedding_seed": 1,
        "model_dim": 32,
        "heads": 4,
        "ff_dim": 64,
        "max_epochs": 200,
        "seed": 1,
        "stop_at_f1": 1.0,
        "checkpoint_path": "model.lmkw",
        "train_path": "toy.jsonl",
        "valid_path": "toy.jsonl",
        "test_path": "toy.jsonl"
    });
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    Ok(())
}
