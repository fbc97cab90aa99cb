//! Control-prompt assembly from ACS samples and the generation backend
//! boundary, including the deterministic template generator used offline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{char_find, char_len, tokenize, Passage};
use crate::lexicon;
use crate::semgraph::{AcsSample, SemanticGraph, Style};
use crate::util::stable_hash;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("sample `{sample_id}` references node {node} missing from the graph of `{passage_id}`")]
    DanglingNode {
        sample_id: String,
        passage_id: String,
        node: usize,
    },
    #[error("sample `{sample_id}` belongs to passage `{expected}`, got `{got}`")]
    WrongPassage {
        sample_id: String,
        expected: String,
        got: String,
    },
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Reserved markers separating the prompt parts, in this order:
/// passage, answer (answerable only), zero or more clues, style.
pub const MARK_PASSAGE: &str = "<|passage|>";
pub const MARK_ANSWER: &str = "<|answer|>";
pub const MARK_CLUE: &str = "<|clue|>";
pub const MARK_STYLE: &str = "<|style|>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptParts {
    pub passage_text: String,
    pub answer_text: Option<String>,
    pub clue_texts: Vec<String>,
    pub style: Style,
    pub answerable: bool,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace("<|", "\\<|")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Splits on unescaped `<|` marker starts, returning (marker, content) pairs.
fn split_marked(s: &str) -> Option<Vec<(&str, &str)>> {
    let bytes = s.as_bytes();
    let mut starts = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'<' if bytes.get(i + 1) == Some(&b'|') => {
                starts.push(i);
                i += 2;
            }
            _ => i += 1,
        }
    }
    if starts.first() != Some(&0) {
        return None;
    }
    let mut parts = Vec::new();
    for (n, &at) in starts.iter().enumerate() {
        let end = starts.get(n + 1).copied().unwrap_or(s.len());
        let close = s[at..end].find("|>")? + at + 2;
        parts.push((&s[at..close], &s[close..end]));
    }
    Some(parts)
}

impl PromptParts {
    /// Flat prompt string with marker occurrences in content escaped.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(MARK_PASSAGE);
        out.push_str(&escape(&self.passage_text));
        if let Some(answer) = &self.answer_text {
            out.push_str(MARK_ANSWER);
            out.push_str(&escape(answer));
        }
        for clue in &self.clue_texts {
            out.push_str(MARK_CLUE);
            out.push_str(&escape(clue));
        }
        out.push_str(MARK_STYLE);
        out.push_str(self.style.as_str());
        out
    }

    /// Inverse of [`PromptParts::render`].
    pub fn parse(prompt: &str) -> Option<PromptParts> {
        let parts = split_marked(prompt)?;
        let mut iter = parts.into_iter().peekable();
        let (mark, passage) = iter.next()?;
        if mark != MARK_PASSAGE {
            return None;
        }
        let answer_text = match iter.peek() {
            Some((MARK_ANSWER, a)) => {
                let a = unescape(a);
                iter.next();
                Some(a)
            }
            _ => None,
        };
        let mut clue_texts = Vec::new();
        while let Some((MARK_CLUE, c)) = iter.peek() {
            clue_texts.push(unescape(c));
            iter.next();
        }
        let (mark, style) = iter.next()?;
        if mark != MARK_STYLE || iter.next().is_some() {
            return None;
        }
        Some(PromptParts {
            passage_text: unescape(passage),
            answerable: answer_text.is_some(),
            answer_text,
            clue_texts,
            style: Style::parse(style)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub top_p: f64,
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub num_return: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            beam_width: 4,
            max_new_tokens: 48,
            num_return: 4,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.beam_width == 0 || self.num_return == 0 || self.max_new_tokens == 0 {
            return Err(GenError::InvalidRequest(
                "beam_width, num_return and max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub sample_id: String,
    pub prompt: PromptParts,
    pub decoding: DecodingConfig,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenError> {
        self.decoding.validate()?;
        if self.prompt.answer_text.is_some() != self.prompt.answerable {
            return Err(GenError::InvalidRequest(format!(
                "request `{}`: answer text must be present exactly when answerable",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// One candidate as returned over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuestion {
    pub text: String,
    #[serde(default)]
    pub perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    /// `<sample_id>/q<n>`
    pub id: String,
    pub text: String,
    pub backend_id: String,
    pub perplexity: Option<f64>,
    pub sample_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub supports_perplexity: bool,
}

pub trait GenerationBackend: Send + Sync {
    fn backend_id(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn generate_raw(&self, request: &GenerationRequest) -> Result<Vec<RawQuestion>, BackendError>;

    fn perplexity(&self, _texts: &[String]) -> Result<Vec<f64>, BackendError> {
        Err(BackendError::Unsupported {
            backend: self.backend_id(),
            what: "perplexity".into(),
        })
    }
}

/// Resolves the sample's nodes to surface strings and lays out the request.
pub fn assemble_prompt(
    sample: &AcsSample,
    passage: &Passage,
    graph: &SemanticGraph,
    decoding: DecodingConfig,
) -> Result<GenerationRequest, GenError> {
    if sample.passage_id != passage.id || graph.passage_id != passage.id {
        return Err(GenError::WrongPassage {
            sample_id: sample.id.clone(),
            expected: sample.passage_id.clone(),
            got: passage.id.clone(),
        });
    }
    let surface = |node: usize| {
        graph
            .node(node)
            .map(|n| n.surface.clone())
            .ok_or_else(|| GenError::DanglingNode {
                sample_id: sample.id.clone(),
                passage_id: passage.id.clone(),
                node,
            })
    };
    let answer_text = sample.answer_node.map(surface).transpose()?;
    let clue_texts = sample
        .clue_nodes
        .iter()
        .map(|&n| surface(n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GenerationRequest {
        sample_id: sample.id.clone(),
        prompt: PromptParts {
            passage_text: passage.text.clone(),
            answerable: answer_text.is_some(),
            answer_text,
            clue_texts,
            style: sample.style,
        },
        decoding,
    })
}

/// Runs `request` through `backend` and checks the reply against the
/// request: at most `num_return` single-line, non-empty questions.
pub fn generate(
    backend: &dyn GenerationBackend,
    request: &GenerationRequest,
) -> Result<Vec<GeneratedQuestion>, GenError> {
    request.validate()?;
    let backend_id = backend.backend_id();
    let raw = backend.generate_raw(request)?;
    if raw.len() > request.decoding.num_return {
        return Err(BackendError::protocol(
            &backend_id,
            format!("{} questions returned, {} requested", raw.len(), request.decoding.num_return),
        )
        .into());
    }
    if let Some(bad) = raw
        .iter()
        .find(|q| q.text.trim().is_empty() || q.text.contains(['\n', '\r']))
    {
        return Err(BackendError::protocol(&backend_id, format!("invalid question text {:?}", bad.text)).into());
    }

    let mut perplexities: Vec<Option<f64>> = if backend.capabilities().supports_perplexity {
        raw.iter().map(|q| q.perplexity).collect()
    } else {
        vec![None; raw.len()]
    };
    if backend.capabilities().supports_perplexity && perplexities.iter().any(Option::is_none) {
        let texts: Vec<String> = raw.iter().map(|q| q.text.clone()).collect();
        perplexities = backend.perplexity(&texts)?.into_iter().map(Some).collect();
    }
    if perplexities.iter().flatten().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(BackendError::protocol(&backend_id, "non-positive perplexity").into());
    }

    Ok(raw
        .into_iter()
        .zip(perplexities)
        .enumerate()
        .map(|(i, (q, perplexity))| GeneratedQuestion {
            id: format!("{}/q{i}", request.sample_id),
            text: q.text.trim().to_owned(),
            backend_id: backend_id.clone(),
            perplexity,
            sample_id: request.sample_id.clone(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Template generator

const CONTEXT_RADIUS: usize = 4;

/// Synthetic fluency score, decreasing in question length.
pub fn mock_perplexity(token_count: usize) -> f64 {
    3.0 + 24.0 / (token_count as f64 + 2.0)
}

/// Lowercased words of `text` with their scalar start offsets.
fn words_with_offsets(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive(char::is_whitespace) {
        let word: String = raw
            .trim()
            .trim_matches(|c: char| c.is_ascii_punctuation())
            .to_lowercase();
        if !word.is_empty() {
            out.push((offset, word));
        }
        offset += char_len(raw);
    }
    out
}

/// Deterministic template questions:
/// `<style word> <shuffled clues> <passage words near the anchor>?`.
///
/// The anchor is the answer when present, else the first clue. With
/// `paraphrase`, answerable requests keep only the context words that have a
/// synonym-table substitute, and emit the substitute instead.
pub fn mock_generate(request: &GenerationRequest, seed: u64, paraphrase: bool) -> Vec<GeneratedQuestion> {
    let prompt = &request.prompt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(prompt.render().as_bytes()));

    let anchor_text = prompt.answer_text.as_deref().or(prompt.clue_texts.first().map(String::as_str));
    let words = words_with_offsets(&prompt.passage_text);
    let excluded: Vec<String> = prompt
        .answer_text
        .iter()
        .chain(&prompt.clue_texts)
        .flat_map(|t| tokenize(t))
        .collect();
    let window: Vec<&str> = match anchor_text.and_then(|a| char_find(&prompt.passage_text, a).map(|s| (s, s + char_len(a)))) {
        Some((start, end)) => {
            let first_after = words.iter().position(|(o, _)| *o >= end).unwrap_or(words.len());
            let first_inside = words.iter().position(|(o, _)| *o >= start).unwrap_or(words.len());
            let lo = first_inside.saturating_sub(CONTEXT_RADIUS);
            let hi = (first_after + CONTEXT_RADIUS).min(words.len());
            words[lo..first_inside]
                .iter()
                .chain(&words[first_after..hi])
                .map(|(_, w)| w.as_str())
                .collect()
        }
        None => words.iter().take(CONTEXT_RADIUS).map(|(_, w)| w.as_str()).collect(),
    };
    let window: Vec<&str> = window
        .into_iter()
        .filter(|w| {
            let toks = tokenize(w);
            !toks.is_empty() && toks.iter().all(|t| !excluded.contains(t))
        })
        .collect();

    let backend_id = if paraphrase { "mock-paraphrase" } else { "mock" };
    (0..request.decoding.num_return)
        .map(|i| {
            let mut clues = prompt.clue_texts.clone();
            clues.shuffle(&mut rng);
            let kept: Vec<&str> = window.iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
            let context: Vec<String> = if paraphrase && prompt.answerable {
                kept.iter()
                    .filter_map(|w| lexicon::substitute(w).map(str::to_owned))
                    .collect()
            } else {
                kept.iter().map(|w| (*w).to_owned()).collect()
            };
            let mut parts = vec![prompt.style.question_word().to_owned()];
            parts.extend(clues);
            parts.extend(context);
            let text = format!("{}?", parts.join(" "));
            let perplexity = mock_perplexity(tokenize(&text).len());
            GeneratedQuestion {
                id: format!("{}/q{i}", request.sample_id),
                text,
                backend_id: backend_id.to_owned(),
                perplexity: Some(perplexity),
                sample_id: request.sample_id.clone(),
            }
        })
        .collect()
}

/// Pure, reentrant [`GenerationBackend`] over [`mock_generate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend {
    pub seed: u64,
    pub paraphrase: bool,
}

impl GenerationBackend for MockBackend {
    fn backend_id(&self) -> String {
        if self.paraphrase { "mock-paraphrase" } else { "mock" }.to_owned()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_perplexity: true,
        }
    }

    fn generate_raw(&self, request: &GenerationRequest) -> Result<Vec<RawQuestion>, BackendError> {
        Ok(mock_generate(request, self.seed, self.paraphrase)
            .into_iter()
            .map(|q| RawQuestion {
                text: q.text,
                perplexity: q.perplexity,
            })
            .collect())
    }

    fn perplexity(&self, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(texts.iter().map(|t| mock_perplexity(tokenize(t).len())).collect())
    }
}
