//! End-to-end orchestration: parse, sample, generate, index, filter, emit,
//! attack evaluation and metrics, with per-stage checkpoints and a run
//! manifest.
//!
//! Output directory layout:
//!
//! ```text
//! standard.json  retriever_attack.json  reader_attack.json   SQuAD v2.0
//! index.json                                                 TF-IDF index
//! attack_eval.json                                           top-1 accuracies
//! report.json  report.txt                                    metric reports
//! manifest.json                                              run manifest
//! checkpoints/{parse,sample,generate,filter}.json
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, SidecarClient, SIDECAR_URL_ENV};
use crate::corpus::{load_squad, load_squad_path, normalize, save_squad_to_vec, Answer, CorpusError, Dataset, Passage, Provenance, QAPair};
use crate::filters::{
    qa_consistency, select, syntactic_score, Bucket, CandidateScores, EmbeddingBackend, EmbeddingVector,
    FilterConfig, FilterError, FilterVerdict, HashingEmbedder, MockQa, PrecomputedEmbeddings, QaBackend,
};
use crate::genclient::{assemble_prompt, generate, DecodingConfig, GenError, GeneratedQuestion, GenerationBackend, MockBackend};
use crate::metrics::{generation_metrics, render_text, MetricReport, MetricsError};
use crate::retriever::{IndexConfig, RetrieverError, TfIdfIndex};
use crate::semgraph::{build_graph_from_record, naive_parse, sample_acs, AcsSample, GraphError, ParseRecord, SamplingConfig, SemanticGraph};
use crate::util::{derive_seed, percentile, sha256_hex};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for backend failures, 4 for invalid
    /// data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } => 2,
            PipelineError::Backend(_)
            | PipelineError::Gen(GenError::Backend(_))
            | PipelineError::Filter(FilterError::Backend(_) | FilterError::DimMismatch(..)) => 3,
            PipelineError::Graph(GraphError::Config(_))
            | PipelineError::Gen(GenError::InvalidRequest(_))
            | PipelineError::Filter(FilterError::Config(_))
            | PipelineError::Retriever(RetrieverError::BadBinCount(_) | RetrieverError::ZeroK) => 2,
            _ => 4,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ParserMode {
    #[default]
    Naive,
    Sidecar,
    /// JSON lines of [`ParseRecord`], one per passage.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GeneratorMode {
    Mock {
        #[serde(default)]
        paraphrase: bool,
    },
    Sidecar,
}

impl Default for GeneratorMode {
    fn default() -> Self {
        GeneratorMode::Mock { paraphrase: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EmbeddingMode {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_bias")]
        bias: f64,
    },
    Sidecar,
    /// JSON lines `{id, vector}` keyed by question id and passage id.
    File { path: PathBuf },
}

fn default_dim() -> usize {
    HashingEmbedder::default().dim
}

fn default_bias() -> f64 {
    HashingEmbedder::default().bias
}

impl Default for EmbeddingMode {
    fn default() -> Self {
        EmbeddingMode::Hashing {
            dim: default_dim(),
            bias: default_bias(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QaMode {
    #[default]
    Mock,
    Sidecar,
}

/// Filter thresholds; absent TF-IDF thresholds are set from percentiles of
/// the original questions' scores against their own passages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub semantic_min: f64,
    pub qa_f1_min: f64,
    pub tfidf_low_max: Option<f64>,
    pub tfidf_high_min: Option<f64>,
    pub low_percentile: f64,
    pub high_percentile: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            semantic_min: 0.4,
            qa_f1_min: 0.5,
            tfidf_low_max: None,
            tfidf_high_min: None,
            low_percentile: 25.0,
            high_percentile: 75.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SidecarSettings {
    /// Falls back to the `ADVQA_SIDECAR_URL` environment variable.
    pub url: Option<String>,
    pub timeout_secs: f64,
    pub retries: usize,
}

impl Default for SidecarSettings {
    fn default() -> Self {
        Self {
            url: None,
            timeout_secs: 30.0,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Sample,
    Generate,
    Index,
    Filter,
    Emit,
    AttackEval,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Parse,
        Stage::Sample,
        Stage::Generate,
        Stage::Index,
        Stage::Filter,
        Stage::Emit,
        Stage::AttackEval,
        Stage::Metrics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Sample => "sample",
            Stage::Generate => "generate",
            Stage::Index => "index",
            Stage::Filter => "filter",
            Stage::Emit => "emit",
            Stage::AttackEval => "attack_eval",
            Stage::Metrics => "metrics",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub parser: ParserMode,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub generator: GeneratorMode,
    #[serde(default)]
    pub embedding: EmbeddingMode,
    #[serde(default)]
    pub qa: QaMode,
    #[serde(default)]
    pub sidecar: SidecarSettings,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Ignore existing checkpoints.
    #[serde(default)]
    pub fresh: bool,
}

impl RunConfig {
    /// Reads a JSON config; relative paths inside it are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value, path.parent().unwrap_or_else(|| Path::new("")))
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Deserializes a config value, resolving relative paths against `base`.
    pub fn from_value(value: serde_json::Value, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| PipelineError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.output_dir);
        if let ParserMode::File { path } = &mut cfg.parser {
            resolve(path);
        }
        if let EmbeddingMode::File { path } = &mut cfg.embedding {
            resolve(path);
        }
        Ok(cfg)
    }

    fn uses_sidecar(&self) -> bool {
        matches!(self.parser, ParserMode::Sidecar)
            || matches!(self.generator, GeneratorMode::Sidecar)
            || matches!(self.embedding, EmbeddingMode::Sidecar)
            || self.qa == QaMode::Sidecar
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let must_exist = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{what} `{}` not found", p.display())))
            }
        };
        must_exist(&self.input, "input dataset")?;
        if let ParserMode::File { path } = &self.parser {
            must_exist(path, "parse file")?;
        }
        if let EmbeddingMode::File { path } = &self.embedding {
            must_exist(path, "embedding file")?;
        }
        if let EmbeddingMode::Hashing { dim, .. } = self.embedding {
            if dim < 2 {
                return Err(PipelineError::Config("hashing embedding dim must be at least 2".into()));
            }
        }
        self.sampling.validate()?;
        self.decoding.validate()?;
        self.index.validate()?;
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if self.stages.is_empty() {
            return Err(PipelineError::Config("no stages selected".into()));
        }
        let f = &self.filter;
        for p in [f.low_percentile, f.high_percentile] {
            if !(0.0..=100.0).contains(&p) {
                return Err(PipelineError::Config(format!("percentile {p} outside [0, 100]")));
            }
        }
        if f.low_percentile > f.high_percentile {
            return Err(PipelineError::Config(format!(
                "low_percentile {} exceeds high_percentile {}",
                f.low_percentile, f.high_percentile
            )));
        }
        if !(0.0..=1.0).contains(&f.qa_f1_min) {
            return Err(PipelineError::Config(format!("qa_f1_min {} outside [0, 1]", f.qa_f1_min)));
        }
        if let (Some(lo), Some(hi)) = (f.tfidf_low_max, f.tfidf_high_min) {
            FilterConfig {
                semantic_min: f.semantic_min,
                qa_f1_min: f.qa_f1_min,
                tfidf_low_max: lo,
                tfidf_high_min: hi,
            }
            .validate()?;
        }
        if self.uses_sidecar() && self.sidecar_url().is_none() {
            return Err(PipelineError::Config(format!(
                "a sidecar mode is selected but neither sidecar.url nor {SIDECAR_URL_ENV} is set"
            )));
        }
        Ok(())
    }

    fn sidecar_url(&self) -> Option<String> {
        self.sidecar.url.clone().or_else(|| std::env::var(SIDECAR_URL_ENV).ok())
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub passages: usize,
    pub original_questions: usize,
    pub graphs: usize,
    pub samples: usize,
    pub sample_shortfall: usize,
    pub candidates: usize,
    pub verdicts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
    /// Loaded from a checkpoint or existing output instead of recomputed.
    pub reused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackEval {
    pub original_count: usize,
    pub attack_count: usize,
    /// Top-1 accuracy in [0, 100].
    pub acc_original: f64,
    pub acc_attack: f64,
    /// `acc_original - acc_attack`, in points.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub counts: StageCounts,
    pub timings: Vec<StageTiming>,
    pub attack_eval: Option<AttackEval>,
    /// SHA-256 of each emitted file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

pub const OUTPUT_FILES: [&str; 7] = [
    "standard.json",
    "retriever_attack.json",
    "reader_attack.json",
    "index.json",
    "attack_eval.json",
    "report.json",
    "report.txt",
];

/// Top-1 accuracy of the original questions and of the attack questions.
pub fn attack_eval(index: &TfIdfIndex, original: &[QAPair], attack: &[QAPair]) -> Result<AttackEval, RetrieverError> {
    let acc_original = 100.0 * index.top1_accuracy(original)?;
    let acc_attack = 100.0 * index.top1_accuracy(attack)?;
    Ok(AttackEval {
        original_count: original.len(),
        attack_count: attack.len(),
        acc_original,
        acc_attack,
        delta: acc_original - acc_attack,
    })
}

// ---------------------------------------------------------------------------
// Stage data

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint<T> {
    fingerprint: String,
    data: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleStageData {
    samples: Vec<AcsSample>,
    shortfall: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FilterStageData {
    thresholds: FilterConfig,
    original_semantic: Vec<f64>,
    original_syntactic: Vec<f64>,
    verdicts: Vec<FilterVerdict>,
}

struct Backends {
    sidecar: Option<SidecarClient>,
}

impl Backends {
    fn new(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let sidecar = match cfg.uses_sidecar() {
            false => None,
            true => {
                let url = cfg.sidecar_url().ok_or_else(|| PipelineError::Config("sidecar url missing".into()))?;
                let client = SidecarClient::new(url, Duration::from_secs_f64(cfg.sidecar.timeout_secs))
                    .with_retry_policy(cfg.sidecar.retries, Duration::from_millis(250));
                Some(client.connect()?)
            }
        };
        Ok(Self { sidecar })
    }

    fn sidecar(&self) -> &SidecarClient {
        self.sidecar.as_ref().expect("sidecar connected when a sidecar mode is configured")
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    pool: rayon::ThreadPool,
    backends: Backends,
    dataset: Dataset,
    input_hash: String,
    manifest: RunManifest,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("stage data serializes");
    bytes.push(b'\n');
    bytes
}

fn fingerprint(parent: &str, part: &impl Serialize) -> String {
    let mut bytes = parent.as_bytes().to_vec();
    bytes.extend(serde_json::to_vec(part).expect("config serializes"));
    sha256_hex(&bytes)
}

impl Runner<'_> {
    fn selected(&self, stage: Stage) -> bool {
        self.cfg.stages.contains(&stage)
    }

    /// True when no selected stage comes after `stage`.
    fn stops_after(&self, stage: Stage) -> bool {
        self.cfg.stages.iter().all(|s| *s <= stage)
    }

    fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        self.out.join("checkpoints").join(format!("{}.json", stage.as_str()))
    }

    /// Runs `compute` for a checkpointed stage unless a matching checkpoint
    /// can be reused: always when the stage is not selected, otherwise
    /// unless `fresh` is set.
    fn checkpointed<T: Serialize + DeserializeOwned>(
        &mut self,
        stage: Stage,
        fp: &str,
        compute: impl FnOnce(&Self) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let started = Instant::now();
        let path = self.checkpoint_path(stage);
        let existing = self.read_checkpoint::<T>(&path, fp);
        let (data, reused) = match (self.selected(stage), existing) {
            (false, Some(data)) => (data, true),
            (false, None) => {
                return Err(PipelineError::Config(format!(
                    "stage `{}` is not selected and no matching checkpoint exists at {}",
                    stage.as_str(),
                    path.display()
                )))
            }
            (true, Some(data)) if !self.cfg.fresh => (data, true),
            (true, _) => {
                let data = compute(self)?;
                write_file(&path, &to_json(&Checkpoint { fingerprint: fp.to_owned(), data: &data }))?;
                (data, false)
            }
        };
        self.timing(stage, started, reused);
        Ok(data)
    }

    fn read_checkpoint<T: DeserializeOwned>(&self, path: &Path, fp: &str) -> Option<T> {
        let bytes = fs::read(path).ok()?;
        match serde_json::from_slice::<Checkpoint<T>>(&bytes) {
            Ok(c) if c.fingerprint == fp => Some(c.data),
            Ok(_) => {
                log::info!("{} is stale; recomputing", path.display());
                None
            }
            Err(e) => {
                log::warn!("ignoring unreadable checkpoint {}: {e}", path.display());
                None
            }
        }
    }

    fn timing(&mut self, stage: Stage, started: Instant, reused: bool) {
        self.manifest.timings.push(StageTiming {
            stage,
            seconds: started.elapsed().as_secs_f64(),
            reused,
        });
    }

    fn passages(&self) -> Vec<&Passage> {
        self.dataset.passages.values().collect()
    }

    fn stage_parse(&self) -> Result<Vec<SemanticGraph>, PipelineError> {
        let records: Option<HashMap<String, ParseRecord>> = match &self.cfg.parser {
            ParserMode::File { path } => Some(read_parse_file(path)?),
            _ => None,
        };
        let passages = self.passages();
        self.pool.install(|| {
            passages
                .par_iter()
                .map(|p| {
                    let record = match (&self.cfg.parser, &records) {
                        (ParserMode::File { path }, Some(map)) => map.get(&p.id).cloned().ok_or_else(|| {
                            PipelineError::Validation(format!("{} has no record for passage `{}`", path.display(), p.id))
                        })?,
                        (ParserMode::Sidecar, _) => self.backends.sidecar().parse(p)?,
                        _ => naive_parse(p),
                    };
                    Ok(build_graph_from_record(p, &record)?)
                })
                .collect()
        })
    }

    fn stage_sample(&self, graphs: &[SemanticGraph]) -> Result<SampleStageData, PipelineError> {
        let batches: Vec<_> = self.pool.install(|| {
            graphs
                .par_iter()
                .map(|g| sample_acs(g, &self.cfg.sampling, derive_seed(self.cfg.seed, &format!("sample:{}", g.passage_id))))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let shortfall = batches.iter().map(|b| b.shortfall).sum();
        Ok(SampleStageData {
            samples: batches.into_iter().flat_map(|b| b.samples).collect(),
            shortfall,
        })
    }

    fn generator(&self) -> Box<dyn GenerationBackend + '_> {
        match self.cfg.generator {
            GeneratorMode::Mock { paraphrase } => Box::new(MockBackend {
                seed: derive_seed(self.cfg.seed, "generate"),
                paraphrase,
            }),
            GeneratorMode::Sidecar => Box::new(self.backends.sidecar().clone()),
        }
    }

    fn stage_generate(
        &self,
        graphs: &HashMap<&str, &SemanticGraph>,
        samples: &[AcsSample],
    ) -> Result<Vec<GeneratedQuestion>, PipelineError> {
        let backend = self.generator();
        let per_sample: Vec<Vec<GeneratedQuestion>> = self.pool.install(|| {
            samples
                .par_iter()
                .map(|s| {
                    let passage = self.dataset.passage(&s.passage_id).ok_or_else(|| {
                        PipelineError::Validation(format!("sample `{}` references unknown passage", s.id))
                    })?;
                    let graph = graphs.get(s.passage_id.as_str()).ok_or_else(|| {
                        PipelineError::Validation(format!("sample `{}` has no graph", s.id))
                    })?;
                    let request = assemble_prompt(s, passage, graph, self.cfg.decoding)?;
                    Ok(generate(backend.as_ref(), &request)?)
                })
                .collect::<Result<_, PipelineError>>()
        })?;
        // distinct beams only: repeats within one sample are dropped
        Ok(per_sample
            .into_iter()
            .flat_map(|qs| {
                let mut seen = HashSet::new();
                qs.into_iter().filter(move |q| seen.insert(normalize(&q.text)))
            })
            .collect())
    }

    fn stage_index(&self) -> Result<TfIdfIndex, PipelineError> {
        let passages: Vec<Passage> = self.dataset.passages.values().cloned().collect();
        let index = self.pool.install(|| TfIdfIndex::build(&passages, self.cfg.index))?;
        let mut bytes = Vec::new();
        index.save(&mut bytes)?;
        write_file(&self.out.join("index.json"), &bytes)?;
        Ok(index)
    }

    fn load_index(&self) -> Result<TfIdfIndex, PipelineError> {
        let path = self.out.join("index.json");
        let file = fs::File::open(&path).map_err(|e| {
            PipelineError::Config(format!("index stage not selected and {} unreadable: {e}", path.display()))
        })?;
        Ok(TfIdfIndex::load(std::io::BufReader::new(file))?)
    }

    fn embed_all(&self, texts: Vec<(String, String)>) -> Result<HashMap<String, EmbeddingVector>, PipelineError> {
        let vectors: Vec<EmbeddingVector> = match &self.cfg.embedding {
            EmbeddingMode::File { path } => {
                let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
                let pre = PrecomputedEmbeddings::load(std::io::BufReader::new(file))?;
                texts
                    .iter()
                    .map(|(id, _)| pre.get(id).cloned())
                    .collect::<Result<_, _>>()?
            }
            mode => {
                let backend: Box<dyn EmbeddingBackend + '_> = match *mode {
                    EmbeddingMode::Hashing { dim, bias } => Box::new(HashingEmbedder { dim, bias }),
                    _ => Box::new(self.backends.sidecar().clone()),
                };
                let chunks: Vec<Vec<String>> = texts
                    .chunks(EMBED_BATCH)
                    .map(|c| c.iter().map(|(_, t)| t.clone()).collect())
                    .collect();
                let embedded: Vec<Vec<EmbeddingVector>> = self.pool.install(|| {
                    chunks
                        .par_iter()
                        .map(|c| backend.embed(c))
                        .collect::<Result<_, BackendError>>()
                })?;
                embedded.into_iter().flatten().collect()
            }
        };
        Ok(texts.into_iter().map(|(id, _)| id).zip(vectors).collect())
    }

    fn qa_backend(&self) -> Box<dyn QaBackend + '_> {
        match self.cfg.qa {
            QaMode::Mock => Box::new(MockQa::default()),
            QaMode::Sidecar => Box::new(self.backends.sidecar().clone()),
        }
    }

    fn stage_filter(
        &self,
        index: &TfIdfIndex,
        graphs: &HashMap<&str, &SemanticGraph>,
        samples: &HashMap<&str, &AcsSample>,
        questions: &[GeneratedQuestion],
    ) -> Result<FilterStageData, PipelineError> {
        let originals = &self.dataset.qa_pairs;
        let original_syntactic: Vec<f64> = originals
            .iter()
            .map(|q| syntactic_score(&q.question, &q.passage_id, index))
            .collect::<Result<_, _>>()?;
        let s = &self.cfg.filter;
        let threshold = |given: Option<f64>, pct: f64| {
            given.or_else(|| percentile(&original_syntactic, pct)).ok_or_else(|| {
                PipelineError::Config("no original questions to set TF-IDF thresholds from; set them explicitly".into())
            })
        };
        let thresholds = FilterConfig {
            semantic_min: s.semantic_min,
            qa_f1_min: s.qa_f1_min,
            tfidf_low_max: threshold(s.tfidf_low_max, s.low_percentile)?,
            tfidf_high_min: threshold(s.tfidf_high_min, s.high_percentile)?,
        };
        thresholds.validate()?;

        let mut texts: Vec<(String, String)> = self
            .dataset
            .passages
            .values()
            .map(|p| (p.id.clone(), p.text.clone()))
            .collect();
        texts.extend(originals.iter().map(|q| (q.id.clone(), q.question.clone())));
        texts.extend(questions.iter().map(|q| (q.id.clone(), q.text.clone())));
        let vectors = self.embed_all(texts)?;
        let semantic = |qid: &str, pid: &str| -> Result<f64, FilterError> {
            crate::filters::semantic_score(&vectors[qid], &vectors[pid])
        };
        let original_semantic: Vec<f64> = originals
            .iter()
            .map(|q| semantic(&q.id, &q.passage_id))
            .collect::<Result<_, _>>()?;

        let qa = self.qa_backend();
        let candidates: Vec<(GeneratedQuestion, AcsSample)> = questions
            .iter()
            .map(|q| {
                samples
                    .get(q.sample_id.as_str())
                    .map(|s| (q.clone(), (*s).clone()))
                    .ok_or_else(|| PipelineError::Validation(format!("question `{}` has no sample", q.id)))
            })
            .collect::<Result<_, _>>()?;
        let scored: Vec<(String, CandidateScores)> = self.pool.install(|| {
            candidates
                .par_iter()
                .map(|(q, sample)| {
                    let passage = &self.dataset.passages[&sample.passage_id];
                    let qa_consistent = match answer_of(sample, graphs) {
                        Some(answer) => Some(qa_consistency(q, &answer.text, passage, qa.as_ref(), thresholds.qa_f1_min)?),
                        None => None,
                    };
                    Ok((
                        q.id.clone(),
                        CandidateScores {
                            semantic: semantic(&q.id, &sample.passage_id)?,
                            syntactic: syntactic_score(&q.text, &sample.passage_id, index)?,
                            qa_consistent,
                        },
                    ))
                })
                .collect::<Result<_, PipelineError>>()
        })?;
        let scores: HashMap<String, CandidateScores> = scored.into_iter().collect();
        let verdicts = select(&candidates, &scores, &thresholds)?;
        Ok(FilterStageData {
            thresholds,
            original_semantic,
            original_syntactic,
            verdicts,
        })
    }

    fn stage_emit(
        &self,
        graphs: &HashMap<&str, &SemanticGraph>,
        samples: &HashMap<&str, &AcsSample>,
        questions: &[GeneratedQuestion],
        verdicts: &[FilterVerdict],
    ) -> Result<BTreeMap<Bucket, Dataset>, PipelineError> {
        let by_id: HashMap<&str, &GeneratedQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
        let mut pairs: BTreeMap<Bucket, Vec<QAPair>> = BTreeMap::new();
        for v in verdicts.iter().filter(|v| v.kept) {
            let q = by_id
                .get(v.question_id.as_str())
                .ok_or_else(|| PipelineError::Validation(format!("verdict for unknown question `{}`", v.question_id)))?;
            let sample = samples[q.sample_id.as_str()];
            let answers: Vec<Answer> = answer_of(sample, graphs).into_iter().collect();
            pairs.entry(v.bucket).or_default().push(QAPair {
                id: q.id.clone(),
                passage_id: sample.passage_id.clone(),
                question: q.text.clone(),
                is_impossible: answers.is_empty(),
                answers,
                provenance: Provenance::Generated {
                    sample_id: sample.id.clone(),
                    backend_id: q.backend_id.clone(),
                    perplexity: q.perplexity,
                },
            });
        }
        let mut out = BTreeMap::new();
        for bucket in [Bucket::Standard, Bucket::RetrieverAttack, Bucket::ReaderAttack] {
            let qa_pairs = pairs.remove(&bucket).unwrap_or_default();
            let mut ds = Dataset::new(format!("{}-{}", self.dataset.name, bucket.as_str()));
            for p in self.dataset.passages.values() {
                if qa_pairs.iter().any(|q| q.passage_id == p.id) {
                    ds.add_passage(p.clone())?;
                }
            }
            ds.qa_pairs = qa_pairs;
            ds.validate()?;
            let bytes = save_squad_to_vec(&ds)?;
            let reloaded = load_squad(bytes.as_slice())?;
            if !reloaded.semantically_eq(&ds) {
                return Err(PipelineError::Validation(format!("{} does not round-trip", bucket.as_str())));
            }
            write_file(&self.out.join(format!("{}.json", bucket.as_str())), &bytes)?;
            out.insert(bucket, ds);
        }
        Ok(out)
    }

    fn load_emitted(&self) -> Result<BTreeMap<Bucket, Dataset>, PipelineError> {
        [Bucket::Standard, Bucket::RetrieverAttack, Bucket::ReaderAttack]
            .into_iter()
            .map(|b| {
                let path = self.out.join(format!("{}.json", b.as_str()));
                if !path.is_file() {
                    return Err(PipelineError::Config(format!(
                        "emit stage not selected and {} is missing",
                        path.display()
                    )));
                }
                Ok((b, load_squad_path(&path)?))
            })
            .collect()
    }

    fn stage_metrics(
        &self,
        questions: &[GeneratedQuestion],
        filtered: &FilterStageData,
        emitted: &BTreeMap<Bucket, Dataset>,
        eval: Option<&AttackEval>,
    ) -> Result<Vec<MetricReport>, PipelineError> {
        let mut reports = Vec::new();
        let originals: Vec<&str> = self.dataset.qa_pairs.iter().map(|q| q.question.as_str()).collect();
        if !originals.is_empty() {
            let mut r = MetricReport::new("original");
            let no_ppl = vec![None; originals.len()];
            r.generation = Some(generation_metrics(&originals, &filtered.original_semantic, &no_ppl)?);
            r.top1_accuracy = eval.map(|e| e.acc_original);
            reports.push(r);
        }
        let semantic: HashMap<&str, f64> = filtered
            .verdicts
            .iter()
            .map(|v| (v.question_id.as_str(), v.semantic_score))
            .collect();
        let name = questions.first().map_or_else(|| "generated".to_owned(), |q| q.backend_id.clone());
        let mut groups: Vec<(String, Vec<&GeneratedQuestion>, Option<f64>)> =
            vec![(name.clone(), questions.iter().collect(), None)];
        let by_id: HashMap<&str, &GeneratedQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
        for (bucket, ds) in emitted {
            let members: Vec<&GeneratedQuestion> =
                ds.qa_pairs.iter().filter_map(|qa| by_id.get(qa.id.as_str()).copied()).collect();
            let top1 = (*bucket == Bucket::RetrieverAttack).then(|| eval.map(|e| e.acc_attack)).flatten();
            groups.push((format!("{name} {}", bucket.as_str()), members, top1));
        }
        for (label, members, top1) in groups {
            if members.is_empty() {
                continue;
            }
            let texts: Vec<&str> = members.iter().map(|q| q.text.as_str()).collect();
            let sem: Vec<f64> = members.iter().filter_map(|q| semantic.get(q.id.as_str()).copied()).collect();
            let ppl: Vec<Option<f64>> = members.iter().map(|q| q.perplexity).collect();
            let mut r = MetricReport::new(label);
            r.generation = Some(generation_metrics(&texts, &sem, &ppl)?);
            r.top1_accuracy = top1;
            reports.push(r);
        }
        if let Some(all) = reports.iter_mut().find(|r| r.name == name) {
            all.bucket_counts = self.manifest.counts.verdicts.clone();
        }
        write_file(&self.out.join("report.json"), &to_json(&reports))?;
        write_file(&self.out.join("report.txt"), render_text(&reports).as_bytes())?;
        Ok(reports)
    }

    fn execute(&mut self) -> Result<(), (Stage, PipelineError)> {
        let cfg = self.cfg;
        let fp_parse = fingerprint(&self.input_hash, &(&cfg.parser, parse_file_hash(cfg)));
        let graphs: Vec<SemanticGraph> = self
            .checkpointed(Stage::Parse, &fp_parse, |r| r.stage_parse())
            .map_err(|e| (Stage::Parse, e))?;
        self.manifest.counts.graphs = graphs.len();
        if self.stops_after(Stage::Parse) {
            return Ok(());
        }
        let graph_map: HashMap<&str, &SemanticGraph> = graphs.iter().map(|g| (g.passage_id.as_str(), g)).collect();

        let fp_sample = fingerprint(&fp_parse, &(&cfg.sampling, cfg.seed));
        let sampled: SampleStageData = self
            .checkpointed(Stage::Sample, &fp_sample, |r| r.stage_sample(&graphs))
            .map_err(|e| (Stage::Sample, e))?;
        self.manifest.counts.samples = sampled.samples.len();
        self.manifest.counts.sample_shortfall = sampled.shortfall;
        if self.stops_after(Stage::Sample) {
            return Ok(());
        }
        let sample_map: HashMap<&str, &AcsSample> = sampled.samples.iter().map(|s| (s.id.as_str(), s)).collect();

        let fp_generate = fingerprint(&fp_sample, &(&cfg.decoding, &cfg.generator));
        let questions: Vec<GeneratedQuestion> = self
            .checkpointed(Stage::Generate, &fp_generate, |r| r.stage_generate(&graph_map, &sampled.samples))
            .map_err(|e| (Stage::Generate, e))?;
        self.manifest.counts.candidates = questions.len();
        if self.stops_after(Stage::Generate) {
            return Ok(());
        }

        let started = Instant::now();
        let index = if self.selected(Stage::Index) {
            self.stage_index()
        } else {
            self.load_index()
        }
        .map_err(|e| (Stage::Index, e))?;
        self.timing(Stage::Index, started, !self.selected(Stage::Index));
        if self.stops_after(Stage::Index) {
            return Ok(());
        }

        let fp_filter = fingerprint(&fp_generate, &(&cfg.index, &cfg.filter, &cfg.embedding, cfg.qa));
        let filtered: FilterStageData = self
            .checkpointed(Stage::Filter, &fp_filter, |r| r.stage_filter(&index, &graph_map, &sample_map, &questions))
            .map_err(|e| (Stage::Filter, e))?;
        let mut verdict_counts: BTreeMap<String, usize> =
            Bucket::ALL.iter().map(|b| (b.as_str().to_owned(), 0)).collect();
        for v in &filtered.verdicts {
            *verdict_counts.entry(v.bucket.as_str().to_owned()).or_default() += 1;
        }
        self.manifest.counts.verdicts = verdict_counts;
        if self.stops_after(Stage::Filter) {
            return Ok(());
        }

        let started = Instant::now();
        let emitted = if self.selected(Stage::Emit) {
            self.stage_emit(&graph_map, &sample_map, &questions, &filtered.verdicts)
        } else {
            self.load_emitted()
        }
        .map_err(|e| (Stage::Emit, e))?;
        self.timing(Stage::Emit, started, !self.selected(Stage::Emit));
        if self.stops_after(Stage::Emit) {
            return Ok(());
        }

        let started = Instant::now();
        let eval_path = self.out.join("attack_eval.json");
        let eval: Option<AttackEval> = if self.selected(Stage::AttackEval) {
            let attack = &emitted[&Bucket::RetrieverAttack].qa_pairs;
            if attack.is_empty() || self.dataset.qa_pairs.is_empty() {
                log::warn!("attack evaluation skipped: empty original or retriever-attack set");
                let _ = fs::remove_file(&eval_path);
                None
            } else {
                let e = attack_eval(&index, &self.dataset.qa_pairs, attack).map_err(|e| (Stage::AttackEval, e.into()))?;
                write_file(&eval_path, &to_json(&e)).map_err(|e| (Stage::AttackEval, e))?;
                Some(e)
            }
        } else {
            fs::read(&eval_path).ok().and_then(|b| serde_json::from_slice(&b).ok())
        };
        self.timing(Stage::AttackEval, started, !self.selected(Stage::AttackEval));
        self.manifest.attack_eval = eval;
        if self.stops_after(Stage::AttackEval) {
            return Ok(());
        }

        if self.selected(Stage::Metrics) {
            let started = Instant::now();
            self.stage_metrics(&questions, &filtered, &emitted, eval.as_ref())
                .map_err(|e| (Stage::Metrics, e))?;
            self.timing(Stage::Metrics, started, false);
        }
        Ok(())
    }
}

fn answer_of(sample: &AcsSample, graphs: &HashMap<&str, &SemanticGraph>) -> Option<Answer> {
    let node = graphs.get(sample.passage_id.as_str())?.node(sample.answer_node?)?;
    Some(Answer {
        text: node.surface.clone(),
        answer_start: node.span.start,
    })
}

fn read_parse_file(path: &Path) -> Result<HashMap<String, ParseRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: ParseRecord = serde_json::from_str(l)
                .map_err(|e| PipelineError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
            Ok((rec.passage_id.clone(), rec))
        })
        .collect()
}

fn parse_file_hash(cfg: &RunConfig) -> Option<String> {
    match &cfg.parser {
        ParserMode::File { path } => fs::read(path).ok().map(|b| sha256_hex(&b)),
        _ => None,
    }
}

/// Runs the selected stages. The manifest is written to
/// `output_dir/manifest.json` whether or not a stage fails; on failure it
/// carries a `failed` status naming the stage.
pub fn run(config: &RunConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let out = config.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let input_bytes = fs::read(&config.input).map_err(|e| io_err(&config.input, e))?;
    let dataset = load_squad(input_bytes.as_slice())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let mut manifest = RunManifest {
        tool_version: TOOL_VERSION.to_owned(),
        config: config.clone(),
        status: RunStatus::Complete,
        counts: StageCounts {
            passages: dataset.passages.len(),
            original_questions: dataset.qa_pairs.len(),
            ..Default::default()
        },
        timings: Vec::new(),
        attack_eval: None,
        outputs: BTreeMap::new(),
    };
    let backends = match Backends::new(config) {
        Ok(b) => b,
        Err(e) => {
            manifest.status = RunStatus::Failed {
                stage: "connect".into(),
                error: e.to_string(),
            };
            write_file(&out.join("manifest.json"), &to_json(&manifest))?;
            return Err(e);
        }
    };
    let mut runner = Runner {
        cfg: config,
        out,
        pool,
        backends,
        dataset,
        input_hash: sha256_hex(&input_bytes),
        manifest,
    };
    let result = runner.execute();
    let mut manifest = runner.manifest;
    if let Err((stage, e)) = &result {
        manifest.status = RunStatus::Failed {
            stage: stage.as_str().to_owned(),
            error: e.to_string(),
        };
    }
    for name in OUTPUT_FILES {
        if let Ok(bytes) = fs::read(out.join(name)) {
            manifest.outputs.insert(name.to_owned(), sha256_hex(&bytes));
        }
    }
    write_file(&out.join("manifest.json"), &to_json(&manifest))?;
    match result {
        Ok(()) => Ok(manifest),
        Err((stage, e)) => {
            log::error!("stage {} failed: {e}", stage.as_str());
            Err(e)
        }
    }
}
