//! SQuAD-format passages, question/answer pairs and the text normalization
//! shared by every other stage.

use std::collections::HashSet;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed SQuAD JSON at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid dataset: {message} (offending ids: {})", ids.join(", "))]
    Validation { message: String, ids: Vec<String> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// SQuAD answer normalization: lowercase, drop ASCII punctuation, split on
/// whitespace, drop the articles "a", "an" and "the".
///
/// Punctuation is removed rather than replaced, so "A-B" becomes "ab".
pub fn tokenize(text: &str) -> Vec<String> {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(tok))
        .map(str::to_owned)
        .collect()
}

/// Normalized form of `text` as a single space-joined string.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Number of Unicode scalar values in `text`. All offsets in this crate are
/// counted in scalars, never bytes.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring by scalar offsets, `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start {
        begin
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[begin..finish])
}

/// Scalar offset of the first occurrence of `needle` in `haystack`.
pub fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .find(needle)
        .map(|byte| haystack[..byte].chars().count())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    tokens: Vec<String>,
}

impl Passage {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::Validation {
                message: "passage text is empty".into(),
                ids: vec![id],
            });
        }
        let tokens = tokenize(&text);
        Ok(Self {
            id,
            title: title.into(),
            text,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token count `t` of the context.
    pub fn len_tokens(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Generated {
        sample_id: String,
        backend_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perplexity: Option<f64>,
    },
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAPair {
    pub id: String,
    pub passage_id: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    pub provenance: Provenance,
}

impl QAPair {
    pub fn answer_texts(&self) -> Vec<String> {
        self.answers.iter().map(|a| a.text.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub passages: IndexMap<String, Passage>,
    pub qa_pairs: Vec<QAPair>,
}

/// (passages, qa pairs)
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSize {
    pub passages: usize,
    pub qa_pairs: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn size(&self) -> DatasetSize {
        DatasetSize {
            passages: self.passages.len(),
            qa_pairs: self.qa_pairs.len(),
        }
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passages.get(id)
    }

    pub fn add_passage(&mut self, passage: Passage) -> Result<(), CorpusError> {
        if self.passages.contains_key(&passage.id) {
            return Err(CorpusError::Validation {
                message: "duplicate passage id".into(),
                ids: vec![passage.id],
            });
        }
        self.passages.insert(passage.id.clone(), passage);
        Ok(())
    }

    /// Checks every invariant and reports all offending qa ids at once.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        let mut dup = Vec::new();
        let mut dangling = Vec::new();
        let mut bad_span = Vec::new();
        let mut missing_answer = Vec::new();
        for qa in &self.qa_pairs {
            if !seen.insert(qa.id.as_str()) {
                dup.push(qa.id.clone());
            }
            let Some(passage) = self.passages.get(&qa.passage_id) else {
                dangling.push(qa.id.clone());
                continue;
            };
            if !qa.is_impossible && qa.answers.is_empty() {
                missing_answer.push(qa.id.clone());
            }
            let spans_ok = qa.answers.iter().all(|a| {
                char_slice(&passage.text, a.answer_start, a.answer_start + char_len(&a.text))
                    == Some(a.text.as_str())
            });
            if !spans_ok {
                bad_span.push(qa.id.clone());
            }
        }
        let checks = [
            ("duplicate qa id", dup),
            ("qa pair references unknown passage", dangling),
            ("answerable qa pair has no answers", missing_answer),
            ("answer span does not match context substring", bad_span),
        ];
        for (message, ids) in checks {
            if !ids.is_empty() {
                return Err(CorpusError::Validation {
                    message: message.into(),
                    ids,
                });
            }
        }
        Ok(())
    }

    /// Same passages and the same qa pairs keyed by id, ignoring pair order.
    pub fn semantically_eq(&self, other: &Dataset) -> bool {
        if self.name != other.name
            || self.passages.len() != other.passages.len()
            || self.qa_pairs.len() != other.qa_pairs.len()
        {
            return false;
        }
        let passages_eq = self
            .passages
            .iter()
            .all(|(id, p)| other.passages.get(id) == Some(p));
        let theirs: std::collections::HashMap<&str, &QAPair> =
            other.qa_pairs.iter().map(|q| (q.id.as_str(), q)).collect();
        passages_eq
            && self
                .qa_pairs
                .iter()
                .all(|q| theirs.get(q.id.as_str()) == Some(&q))
    }
}

// Wire layout. `id` on paragraphs, `provenance` on qas and `name` at the top
// are extensions that SQuAD readers ignore.

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<Answer>,
    #[serde(default)]
    is_impossible: bool,
    #[serde(default, skip_serializing_if = "Provenance::is_original")]
    provenance: Provenance,
}

pub fn load_squad<R: Read>(source: R) -> Result<Dataset, CorpusError> {
    let mut de = serde_json::Deserializer::from_reader(source);
    let file: SquadFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        CorpusError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })?;

    let mut ds = Dataset::new(file.name.unwrap_or_else(|| "squad".to_owned()));
    for (ai, article) in file.data.into_iter().enumerate() {
        for (pi, para) in article.paragraphs.into_iter().enumerate() {
            let pid = para.id.unwrap_or_else(|| format!("{ai}_{pi}"));
            ds.add_passage(Passage::new(pid.clone(), article.title.clone(), para.context)?)?;
            ds.qa_pairs.extend(para.qas.into_iter().map(|qa| QAPair {
                id: qa.id,
                passage_id: pid.clone(),
                question: qa.question,
                answers: qa.answers,
                is_impossible: qa.is_impossible,
                provenance: qa.provenance,
            }));
        }
    }
    ds.validate()?;
    Ok(ds)
}

pub fn load_squad_path(path: &std::path::Path) -> Result<Dataset, CorpusError> {
    let file = std::fs::File::open(path)?;
    load_squad(std::io::BufReader::new(file))
}

/// Writes SQuAD v2.0 JSON. Passages are grouped into articles by title in
/// first-appearance order; qa pairs keep their relative order per passage.
pub fn save_squad<W: Write>(ds: &Dataset, sink: W) -> Result<(), CorpusError> {
    let mut by_passage: IndexMap<&str, Vec<SquadQa>> =
        ds.passages.keys().map(|k| (k.as_str(), Vec::new())).collect();
    for qa in &ds.qa_pairs {
        let Some(slot) = by_passage.get_mut(qa.passage_id.as_str()) else {
            return Err(CorpusError::Validation {
                message: "qa pair references unknown passage".into(),
                ids: vec![qa.id.clone()],
            });
        };
        slot.push(SquadQa {
            id: qa.id.clone(),
            question: qa.question.clone(),
            answers: qa.answers.clone(),
            is_impossible: qa.is_impossible,
            provenance: qa.provenance.clone(),
        });
    }

    let mut articles: IndexMap<&str, Vec<SquadParagraph>> = IndexMap::new();
    for (pid, qas) in by_passage {
        let passage = &ds.passages[pid];
        articles
            .entry(passage.title.as_str())
            .or_default()
            .push(SquadParagraph {
                id: Some(pid.to_owned()),
                context: passage.text.clone(),
                qas,
            });
    }
    let file = SquadFile {
        version: Some("v2.0".into()),
        name: Some(ds.name.clone()),
        data: articles
            .into_iter()
            .map(|(title, paragraphs)| SquadArticle {
                title: title.to_owned(),
                paragraphs,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(sink, &file).map_err(|e| CorpusError::Io(e.into()))
}

pub fn save_squad_to_vec(ds: &Dataset) -> Result<Vec<u8>, CorpusError> {
    let mut buf = Vec::new();
    save_squad(ds, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIXTURE: &str = include_str!("../fixtures/tiny_squad.json");

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("The cat sat."), vec!["cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("the a an").is_empty());
        assert_eq!(tokenize("An A-B test, the 2nd!"), vec!["ab", "test", "2nd"]);
    }

    #[test]
    fn char_offsets_are_scalar_based() {
        let text = "Zoë visited Köln.";
        assert_eq!(char_find(text, "Köln"), Some(12));
        assert_eq!(char_slice(text, 12, 16), Some("Köln"));
        assert_eq!(char_slice(text, 12, 12), Some(""));
        assert_eq!(char_slice(text, 17, 17), Some(""));
        assert_eq!(char_slice(text, 16, 18), None);
    }

    #[test]
    fn loads_bundled_fixture() {
        let ds = load_squad(FIXTURE.as_bytes()).unwrap();
        assert_eq!(ds.size(), DatasetSize { passages: 3, qa_pairs: 6 });
        assert!(ds.qa_pairs.iter().any(|q| q.is_impossible));
        // missing is_impossible defaults to false
        assert!(!ds.qa_pairs[0].is_impossible);
    }

    #[test]
    fn wrong_answer_start_is_a_validation_error() {
        let bad = FIXTURE.replacen("\"answer_start\": 0", "\"answer_start\": 3", 1);
        match load_squad(bad.as_bytes()) {
            Err(CorpusError::Validation { ids, .. }) => assert_eq!(ids, vec!["q1"]),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_path() {
        let bad = r#"{"data": [{"title": "x", "paragraphs": [{"context": 5, "qas": []}]}]}"#;
        match load_squad(bad.as_bytes()) {
            Err(CorpusError::Parse { path, .. }) => {
                assert_eq!(path, "data[0].paragraphs[0].context")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_saves_empty_data_array() {
        let ds = Dataset::new("empty");
        let bytes = save_squad_to_vec(&ds).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["data"], serde_json::json!([]));
        assert_eq!(v["version"], "v2.0");
        assert!(load_squad(bytes.as_slice()).unwrap().semantically_eq(&ds));
    }

    #[test]
    fn impossible_only_dataset_has_empty_answer_arrays() {
        let mut ds = Dataset::new("unans");
        ds.add_passage(Passage::new("p", "T", "Nothing to see here.").unwrap())
            .unwrap();
        ds.qa_pairs.push(QAPair {
            id: "u1".into(),
            passage_id: "p".into(),
            question: "Who lives here?".into(),
            answers: vec![],
            is_impossible: true,
            provenance: Provenance::Original,
        });
        let bytes = save_squad_to_vec(&ds).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let qa = &v["data"][0]["paragraphs"][0]["qas"][0];
        assert_eq!(qa["answers"], serde_json::json!([]));
        assert_eq!(qa["is_impossible"], true);
        assert!(load_squad(bytes.as_slice()).unwrap().semantically_eq(&ds));
    }

    #[test]
    fn dangling_passage_reference_rejected() {
        let mut ds = Dataset::new("d");
        ds.add_passage(Passage::new("p", "T", "Text.").unwrap()).unwrap();
        ds.qa_pairs.push(QAPair {
            id: "x".into(),
            passage_id: "nope".into(),
            question: "?".into(),
            answers: vec![],
            is_impossible: true,
            provenance: Provenance::Original,
        });
        assert!(matches!(ds.validate(), Err(CorpusError::Validation { .. })));
    }

    #[test]
    fn empty_passage_text_rejected() {
        assert!(Passage::new("p", "", "   ").is_err());
    }

    /// Runs only when SQUAD_V2_TRAIN points at train-v2.0.json.
    #[test]
    fn squad_v2_train_size_when_present() {
        let Ok(path) = std::env::var("SQUAD_V2_TRAIN") else {
            return;
        };
        let ds = load_squad_path(std::path::Path::new(&path)).unwrap();
        assert_eq!(ds.size().qa_pairs, 130_319);
    }
}
