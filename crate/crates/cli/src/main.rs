use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advqa_core::backend::BackendError;
use advqa_core::corpus::{load_squad_path, CorpusError};
use advqa_core::metrics::{dataset_report, render_text, MetricsError};
use advqa_core::pipeline::{attack_eval, run, PipelineError, RunConfig, RunStatus, Stage};
use advqa_core::retriever::{IndexConfig, RetrieverError, TfIdfIndex, DEFAULT_BIN_COUNT};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

/// Generate, filter and evaluate adversarial question-answer pairs.
#[derive(Parser)]
#[command(name = "advqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse passages into semantic graphs (JSON lines).
    Parse(StageArgs),
    /// Draw answer/clue/style samples (JSON lines).
    Sample(StageArgs),
    /// Generate candidate questions (JSON lines).
    Generate(StageArgs),
    /// Score and bucket candidates (JSON lines of verdicts).
    Filter(StageArgs),
    /// Build, query or evaluate a TF-IDF index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Top-1 retrieval accuracy of original versus attack questions.
    AttackEval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        attack: PathBuf,
    },
    /// Metric reports.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Run the full pipeline.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated stage names.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    #[arg(long)]
    workers: Option<usize>,
    /// Ignore existing checkpoints.
    #[arg(long)]
    fresh: bool,
    /// Use the paraphrasing mock generator.
    #[arg(long)]
    paraphrase: bool,
    /// Sidecar base URL (also read from ADVQA_SIDECAR_URL).
    #[arg(long)]
    sidecar_url: Option<String>,
    /// Override any config key, e.g. `--set filter.semantic_min=0.5`.
    /// Values are parsed as JSON, falling back to a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Where to write the stage output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BIN_COUNT)]
        bins: usize,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Top-1 accuracy of a dataset's questions.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Question-set columns for a gold file, plus F1/EM when predictions
    /// (a JSON object of qa id to answer text) are given.
    Report {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        Failure {
            code: exit_code(&error),
            error,
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        error: anyhow!("config error: {msg}"),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code() as u8;
        }
        if cause.downcast_ref::<BackendError>().is_some() {
            return 3;
        }
        if let Some(c) = cause.downcast_ref::<CorpusError>() {
            return if matches!(c, CorpusError::Io(_)) { 2 } else { 4 };
        }
        if let Some(r) = cause.downcast_ref::<RetrieverError>() {
            return match r {
                RetrieverError::Io(_) | RetrieverError::BadBinCount(_) | RetrieverError::ZeroK => 2,
                _ => 4,
            };
        }
        if cause.downcast_ref::<MetricsError>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    4
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(format!("`{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(*part).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| config_error(format!("`{key}` is not inside an object")))?
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    Ok(std::path::absolute(p)?)
}

fn build_config(args: &RunArgs, until: Option<Stage>) -> Result<RunConfig, Failure> {
    let (mut value, base) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            (value, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Value::Object(Default::default()), std::env::current_dir()?),
    };
    if let Some(p) = &args.input {
        set_path(&mut value, "input", serde_json::to_value(absolute(p)?)?)?;
    }
    if let Some(p) = &args.output_dir {
        set_path(&mut value, "output_dir", serde_json::to_value(absolute(p)?)?)?;
    }
    if let Some(seed) = args.seed {
        set_path(&mut value, "seed", seed.into())?;
    }
    if let Some(w) = args.workers {
        set_path(&mut value, "workers", w.into())?;
    }
    if args.fresh {
        set_path(&mut value, "fresh", true.into())?;
    }
    if args.paraphrase {
        set_path(&mut value, "generator", serde_json::json!({"mode": "mock", "paraphrase": true}))?;
    }
    if let Some(url) = &args.sidecar_url {
        set_path(&mut value, "sidecar.url", url.clone().into())?;
    }
    for s in &args.sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| config_error(format!("`--set {s}` is not KEY=VALUE")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        set_path(&mut value, key, v)?;
    }
    let stages: Option<Vec<Stage>> = match (&args.stages, until) {
        (Some(names), _) => Some(
            names
                .iter()
                .map(|n| Stage::parse(n).ok_or_else(|| config_error(format!("unknown stage `{n}`"))))
                .collect::<Result<_, _>>()?,
        ),
        (None, Some(last)) => Some(Stage::ALL.into_iter().filter(|s| *s <= last).collect()),
        (None, None) => None,
    };
    if let Some(stages) = stages {
        set_path(&mut value, "stages", serde_json::to_value(stages)?)?;
    }
    Ok(RunConfig::from_value(value, &base)?)
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Runs the pipeline through `stage` and exports that stage's checkpoint
/// as JSON lines.
fn stage_command(args: &StageArgs, stage: Stage) -> Result<(), Failure> {
    let cfg = build_config(&args.run, Some(stage))?;
    run(&cfg)?;
    let path = cfg.output_dir.join("checkpoints").join(format!("{}.json", stage.as_str()));
    let checkpoint: Value = serde_json::from_slice(&fs::read(&path)?)?;
    let data = &checkpoint["data"];
    let items = match stage {
        Stage::Sample => &data["samples"],
        Stage::Filter => &data["verdicts"],
        _ => data,
    };
    let mut out = open_out(&args.out)?;
    for item in items.as_array().into_iter().flatten() {
        serde_json::to_writer(&mut out, item)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn load_index(path: &Path) -> Result<TfIdfIndex, Failure> {
    let file = fs::File::open(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(TfIdfIndex::load(BufReader::new(file))?)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Parse(a) => stage_command(&a, Stage::Parse),
        Command::Sample(a) => stage_command(&a, Stage::Sample),
        Command::Generate(a) => stage_command(&a, Stage::Generate),
        Command::Filter(a) => stage_command(&a, Stage::Filter),
        Command::Run(a) => {
            let cfg = build_config(&a, None)?;
            let manifest = run(&cfg)?;
            if let RunStatus::Failed { stage, error } = &manifest.status {
                return Err(anyhow!("stage {stage} failed: {error}").into());
            }
            print_json(&manifest.counts)?;
            if let Some(e) = manifest.attack_eval {
                print_json(&e)?;
            }
            Ok(())
        }
        Command::Index(IndexCommand::Build { input, out, bins }) => {
            let ds = load_squad_path(&input)?;
            let passages: Vec<_> = ds.passages.values().cloned().collect();
            let index = TfIdfIndex::build(&passages, IndexConfig { bin_count: bins })?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            index.save(std::io::BufWriter::new(file))?;
            log::info!("indexed {} passages into {}", index.num_docs(), out.display());
            Ok(())
        }
        Command::Index(IndexCommand::Query { index, question, k }) => {
            let result = load_index(&index)?.query(&question, k)?;
            print_json(&result)
        }
        Command::Index(IndexCommand::Eval { index, input }) => {
            let ds = load_squad_path(&input)?;
            let acc = load_index(&index)?.top1_accuracy(&ds.qa_pairs)?;
            print_json(&serde_json::json!({"count": ds.qa_pairs.len(), "top1_accuracy": 100.0 * acc}))
        }
        Command::AttackEval { index, original, attack } => {
            let index = load_index(&index)?;
            let original = load_squad_path(&original)?;
            let attack = load_squad_path(&attack)?;
            print_json(&attack_eval(&index, &original.qa_pairs, &attack.qa_pairs)?)
        }
        Command::Metrics(MetricsCommand::Report { gold, pred, name, json }) => {
            let ds = load_squad_path(&gold)?;
            let preds: Option<HashMap<String, String>> = match pred {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
                    Some(serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON object of answers", p.display()))?)
                }
                None => None,
            };
            let report = dataset_report(name.unwrap_or_else(|| ds.name.clone()), &ds, preds.as_ref())?;
            if let Some(path) = json {
                fs::write(&path, serde_json::to_vec_pretty(&[&report])?)?;
            }
            print!("{}", render_text(&[report]));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
