//! Semantic and syntactic scoring of generated candidates and selection of
//! the retriever-attack, reader-attack and standard subsets.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{char_len, char_slice, tokenize, Passage};
use crate::genclient::GeneratedQuestion;
use crate::lexicon;
use crate::metrics::token_f1;
use crate::retriever::{RetrieverError, TfIdfIndex};
use crate::semgraph::{naive_parse, AcsSample, Style};
use crate::util::stable_hash;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("candidate `{0}` has no scores")]
    MissingScore(String),
    #[error("answerable candidate `{0}` has no QA-consistency result")]
    MissingQaResult(String),
    #[error("invalid filter config: {0}")]
    Config(String),
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values, marking them normalized when their L2 norm is
    /// within 1e-6 of 1.
    pub fn from_values(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            normalized: (norm - 1.0).abs() <= 1e-6,
            values,
        }
    }

    /// L2-normalizes `values`; an all-zero vector stays zero.
    pub fn normalize(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self {
            normalized: norm > 0.0,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dot product of two embeddings.
pub fn semantic_score(q: &EmbeddingVector, p: &EmbeddingVector) -> Result<f64, FilterError> {
    if q.dim() != p.dim() {
        return Err(FilterError::DimMismatch(q.dim(), p.dim()));
    }
    Ok(q.values.iter().zip(&p.values).map(|(a, b)| a * b).sum())
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Offline stand-in encoder: signed feature hashing of normalized tokens
/// (mapped through the synonym lexicon) into `dim - 1` bins, plus one shared
/// channel carrying `sqrt(bias * n)` for a text of `n` tokens, then
/// L2-normalized. A text with no tokens maps to the unit vector on the
/// shared channel.
///
/// Two unrelated texts score about `bias / (1 + bias)`; each shared token
/// adds on top of that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub bias: f64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 64, bias: 0.25 }
    }
}

impl HashingEmbedder {
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        let tokens = tokenize(text);
        for tok in &tokens {
            let h = stable_hash(lexicon::canonical(tok).as_bytes());
            let bin = 1 + (h % (self.dim as u64 - 1)) as usize;
            values[bin] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        values[0] = (self.bias * tokens.len().max(1) as f64).sqrt();
        EmbeddingVector::normalize(values)
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

/// Precomputed vectors keyed by question or passage id (JSON lines
/// `{id, vector}`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedEmbeddings {
    vectors: HashMap<String, EmbeddingVector>,
}

impl PrecomputedEmbeddings {
    pub fn load<R: BufRead>(source: R) -> Result<Self, FilterError> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in source.lines().enumerate() {
            let err = |message: String| FilterError::EmbeddingFile { line: i + 1, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if *dim.get_or_insert(rec.vector.len()) != rec.vector.len() {
                return Err(err(format!("vector length {} differs from {}", rec.vector.len(), dim.unwrap_or(0))));
            }
            vectors.insert(rec.id, EmbeddingVector::from_values(rec.vector));
        }
        Ok(Self { vectors })
    }

    pub fn get(&self, id: &str) -> Result<&EmbeddingVector, FilterError> {
        self.vectors
            .get(id)
            .ok_or_else(|| FilterError::MissingEmbedding(id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub answer_text: String,
    pub start: usize,
    pub end: usize,
}

pub trait QaBackend: Send + Sync {
    fn answer(&self, question: &str, passage: &Passage) -> Result<QaPrediction, BackendError>;
}

/// Extractive reader heuristic: candidate spans are the rule-based parser's
/// entities. A candidate scores, for each distinct question token found
/// within `radius` characters of it, `1 - distance / radius` at the closest
/// occurrence, plus a bonus when the entity class suits the question's
/// interrogative. Candidates fully contained in the question are skipped.
/// Ties go to the earliest span.
#[derive(Debug, Clone, Copy)]
pub struct MockQa {
    pub radius: usize,
}

impl Default for MockQa {
    fn default() -> Self {
        Self { radius: 80 }
    }
}

fn canonical_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .iter()
        .map(|t| lexicon::canonical(t).to_owned())
        .collect()
}

fn detect_style(question: &str) -> Option<Style> {
    let toks = tokenize(question);
    match toks.first().map(String::as_str) {
        Some("how") if toks.get(1).is_some_and(|t| t == "many" || t == "much") => Some(Style::HowMany),
        Some(first) => Style::ALL
            .into_iter()
            .find(|s| s.question_word() == first && *s != Style::YesNo),
        None => None,
    }
}

/// Whitespace-separated words as (start, end, canonical tokens), in scalar
/// offsets.
fn word_spans(text: &str) -> Vec<(usize, usize, Vec<String>)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive(char::is_whitespace) {
        let word = raw.trim_end();
        let toks = canonical_tokens(word);
        if !toks.is_empty() {
            out.push((offset, offset + char_len(word), toks));
        }
        offset += char_len(raw);
    }
    out
}

impl QaBackend for MockQa {
    fn answer(&self, question: &str, passage: &Passage) -> Result<QaPrediction, BackendError> {
        let q_tokens: HashSet<String> = canonical_tokens(question).into_iter().collect();
        let style = detect_style(question);
        let words = word_spans(&passage.text);
        let radius = self.radius.max(1) as f64;
        let mut best: Option<(f64, QaPrediction)> = None;
        for ent in naive_parse(passage).entities {
            let surface = char_slice(&passage.text, ent.start, ent.end).unwrap_or_default();
            let cand_tokens = canonical_tokens(surface);
            if cand_tokens.iter().all(|t| q_tokens.contains(t)) {
                continue;
            }
            // each question token counts once, at its closest occurrence
            let mut closeness: HashMap<&str, f64> = HashMap::new();
            for (start, end, toks) in &words {
                let dist = if *end <= ent.start {
                    ent.start - end
                } else if *start >= ent.end {
                    start - ent.end
                } else {
                    continue;
                } as f64;
                if dist >= radius {
                    continue;
                }
                for t in toks.iter().filter(|t| q_tokens.contains(*t) && !cand_tokens.contains(t)) {
                    let c = closeness.entry(t.as_str()).or_insert(0.0);
                    *c = c.max(1.0 - dist / radius);
                }
            }
            let bonus = match style {
                Some(s) if Style::allowed_for(ent.label).contains(&s) => 1.5,
                _ => 0.0,
            };
            let score = closeness.values().sum::<f64>() + bonus;
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((
                    score,
                    QaPrediction {
                        answer_text: surface.to_owned(),
                        start: ent.start,
                        end: ent.end,
                    },
                ));
            }
        }
        Ok(best.map(|(_, p)| p).unwrap_or(QaPrediction {
            answer_text: String::new(),
            start: 0,
            end: 0,
        }))
    }
}

/// Whether the reader's span for `candidate` matches `expected_answer` with
/// token F1 of at least `qa_f1_min`.
pub fn qa_consistency(
    candidate: &GeneratedQuestion,
    expected_answer: &str,
    passage: &Passage,
    qa_backend: &dyn QaBackend,
    qa_f1_min: f64,
) -> Result<bool, BackendError> {
    let predicted = qa_backend.answer(&candidate.text, passage)?;
    Ok(token_f1(&predicted.answer_text, &[expected_answer]) >= qa_f1_min)
}

/// Retriever score of `question` against one indexed passage.
pub fn syntactic_score(question: &str, passage_id: &str, index: &TfIdfIndex) -> Result<f64, FilterError> {
    Ok(index.score(question, passage_id)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub semantic_min: f64,
    pub qa_f1_min: f64,
    pub tfidf_low_max: f64,
    pub tfidf_high_min: f64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=1.0).contains(&self.qa_f1_min) {
            return Err(FilterError::Config(format!("qa_f1_min {} outside [0, 1]", self.qa_f1_min)));
        }
        if self.tfidf_low_max > self.tfidf_high_min {
            return Err(FilterError::Config(format!(
                "tfidf_low_max {} exceeds tfidf_high_min {}",
                self.tfidf_low_max, self.tfidf_high_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub semantic: f64,
    pub syntactic: f64,
    /// Only answerable candidates are checked.
    pub qa_consistent: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    RetrieverAttack,
    ReaderAttack,
    Standard,
    Dropped,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::RetrieverAttack, Bucket::ReaderAttack, Bucket::Standard, Bucket::Dropped];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::RetrieverAttack => "retriever_attack",
            Bucket::ReaderAttack => "reader_attack",
            Bucket::Standard => "standard",
            Bucket::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub question_id: String,
    pub semantic_score: f64,
    pub syntactic_score: f64,
    pub qa_consistent: Option<bool>,
    pub kept: bool,
    pub bucket: Bucket,
    pub reason: String,
}

fn classify(answerable: bool, s: &CandidateScores, cfg: &FilterConfig) -> (Bucket, String) {
    if s.semantic < cfg.semantic_min {
        return (
            Bucket::Dropped,
            format!("semantic {:.3} < {:.3}", s.semantic, cfg.semantic_min),
        );
    }
    if answerable {
        if s.qa_consistent != Some(true) {
            return (Bucket::Dropped, "reader span disagrees with the sampled answer".into());
        }
        if s.syntactic <= cfg.tfidf_low_max {
            (
                Bucket::RetrieverAttack,
                format!("answerable, syntactic {:.3} <= {:.3}", s.syntactic, cfg.tfidf_low_max),
            )
        } else {
            (Bucket::Standard, "answerable, semantically valid, QA-consistent".into())
        }
    } else if s.syntactic >= cfg.tfidf_high_min {
        (
            Bucket::ReaderAttack,
            format!("unanswerable, syntactic {:.3} >= {:.3}", s.syntactic, cfg.tfidf_high_min),
        )
    } else {
        (
            Bucket::Dropped,
            format!("unanswerable, syntactic {:.3} < {:.3}", s.syntactic, cfg.tfidf_high_min),
        )
    }
}

/// One verdict per candidate, in input order.
pub fn select(
    candidates: &[(GeneratedQuestion, AcsSample)],
    scores: &HashMap<String, CandidateScores>,
    config: &FilterConfig,
) -> Result<Vec<FilterVerdict>, FilterError> {
    config.validate()?;
    candidates
        .iter()
        .map(|(q, sample)| {
            let s = scores.get(&q.id).ok_or_else(|| FilterError::MissingScore(q.id.clone()))?;
            if sample.answerable && s.qa_consistent.is_none() {
                return Err(FilterError::MissingQaResult(q.id.clone()));
            }
            let (bucket, reason) = classify(sample.answerable, s, config);
            Ok(FilterVerdict {
                question_id: q.id.clone(),
                semantic_score: s.semantic,
                syntactic_score: s.syntactic,
                qa_consistent: s.qa_consistent,
                kept: bucket != Bucket::Dropped,
                bucket,
                reason,
            })
        })
        .collect()
}
