//! Hashed unigram+bigram TF-IDF passage index.
//!
//! Term weight is `ln(1 + tf) * idf` with
//! `idf = max(0, ln((N - df + 0.5) / (df + 0.5)))`, and a query scores each
//! passage by the unnormalized dot product over shared bins. Features are
//! hashed into `bin_count` bins; colliding features share a bin silently.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Passage, QAPair};
use crate::util::stable_hash;

pub const DEFAULT_BIN_COUNT: usize = 1 << 24;
const FORMAT: &str = "advqa-tfidf";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("cannot build an index from zero passages")]
    EmptyCorpus,
    #[error("bin_count {0} is not a power of two")]
    BadBinCount(usize),
    #[error("passage `{0}` is not in the index")]
    UnknownPassage(String),
    #[error("qa pair `{qa_id}` has gold passage `{passage_id}` which is not indexed")]
    UnindexedGold { qa_id: String, passage_id: String },
    #[error("top-1 accuracy of an empty question set is undefined")]
    EmptyQuestions,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub bin_count: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), RetrieverError> {
        check_bins(self.bin_count)
    }
}

/// Unigrams followed by bigrams (joined by a single space) of normalized
/// tokens.
pub fn features(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .cloned()
        .chain(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])))
        .collect()
}

pub fn idf(num_docs: usize, df: usize) -> f64 {
    let (n, df) = (num_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

/// Sparse vector sorted by bin.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    bin_count: usize,
    num_docs: usize,
    passage_ids: Vec<String>,
    doc_freq: BTreeMap<u32, u32>,
    doc_vectors: Vec<SparseVec>,
    position: std::collections::HashMap<String, usize>,
    postings: std::collections::HashMap<u32, Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
    /// Distinct query bins with non-zero document frequency.
    pub query_terms_matched: usize,
}

impl TfIdfIndex {
    pub fn build(passages: &[Passage], config: IndexConfig) -> Result<Self, RetrieverError> {
        if passages.is_empty() {
            return Err(RetrieverError::EmptyCorpus);
        }
        check_bins(config.bin_count)?;
        let counts: Vec<BTreeMap<u32, u32>> = passages
            .par_iter()
            .map(|p| bin_counts(p.tokens(), config.bin_count))
            .collect();
        let mut doc_freq: BTreeMap<u32, u32> = BTreeMap::new();
        for doc in &counts {
            for &bin in doc.keys() {
                *doc_freq.entry(bin).or_default() += 1;
            }
        }
        let num_docs = passages.len();
        let doc_vectors = counts
            .par_iter()
            .map(|doc| weigh(doc, &doc_freq, num_docs))
            .collect();
        Ok(Self::assemble(
            config.bin_count,
            passages.iter().map(|p| p.id.clone()).collect(),
            doc_freq,
            doc_vectors,
        ))
    }

    fn assemble(
        bin_count: usize,
        passage_ids: Vec<String>,
        doc_freq: BTreeMap<u32, u32>,
        doc_vectors: Vec<SparseVec>,
    ) -> Self {
        let position = passage_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut postings: std::collections::HashMap<u32, Vec<(u32, f64)>> = Default::default();
        for (doc, vec) in doc_vectors.iter().enumerate() {
            for &(bin, w) in vec {
                if w > 0.0 {
                    postings.entry(bin).or_default().push((doc as u32, w));
                }
            }
        }
        Self {
            bin_count,
            num_docs: passage_ids.len(),
            passage_ids,
            doc_freq,
            doc_vectors,
            position,
            postings,
        }
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn contains(&self, passage_id: &str) -> bool {
        self.position.contains_key(passage_id)
    }

    pub fn doc_freq(&self, bin: u32) -> u32 {
        self.doc_freq.get(&bin).copied().unwrap_or(0)
    }

    pub fn doc_vector(&self, passage_id: &str) -> Option<&SparseVec> {
        self.position.get(passage_id).map(|&i| &self.doc_vectors[i])
    }

    /// Bin of a feature string.
    pub fn bin_of(&self, feature: &str) -> u32 {
        bin_of(feature, self.bin_count)
    }

    /// Query vector, weighted with the corpus statistics of this index.
    pub fn query_vector(&self, text: &str) -> SparseVec {
        weigh(&bin_counts(&tokenize(text), self.bin_count), &self.doc_freq, self.num_docs)
    }

    fn scores(&self, qvec: &SparseVec) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_docs];
        for &(bin, wq) in qvec {
            if wq == 0.0 {
                continue;
            }
            if let Some(list) = self.postings.get(&bin) {
                for &(doc, wd) in list {
                    scores[doc as usize] += wq * wd;
                }
            }
        }
        scores
    }

    /// Top-`k` passages for `question`. Ties keep index insertion order.
    pub fn query(&self, question: &str, k: usize) -> Result<RetrievalResult, RetrieverError> {
        if k == 0 {
            return Err(RetrieverError::ZeroK);
        }
        let qvec = self.query_vector(question);
        let scores = self.scores(&qvec);
        let mut order: Vec<usize> = (0..self.num_docs).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(RetrievalResult {
            ranked: order
                .into_iter()
                .take(k)
                .map(|i| (self.passage_ids[i].clone(), scores[i]))
                .collect(),
            query_terms_matched: qvec.iter().filter(|(b, _)| self.doc_freq.contains_key(b)).count(),
        })
    }

    /// The query scoring function restricted to a single passage.
    pub fn score(&self, question: &str, passage_id: &str) -> Result<f64, RetrieverError> {
        let dvec = self
            .doc_vector(passage_id)
            .ok_or_else(|| RetrieverError::UnknownPassage(passage_id.to_owned()))?;
        Ok(sparse_dot(&self.query_vector(question), dvec))
    }

    /// Fraction of pairs whose gold passage is ranked first.
    pub fn top1_accuracy(&self, qa_pairs: &[QAPair]) -> Result<f64, RetrieverError> {
        if qa_pairs.is_empty() {
            return Err(RetrieverError::EmptyQuestions);
        }
        if let Some(bad) = qa_pairs.iter().find(|q| !self.contains(&q.passage_id)) {
            return Err(RetrieverError::UnindexedGold {
                qa_id: bad.id.clone(),
                passage_id: bad.passage_id.clone(),
            });
        }
        let hits: usize = qa_pairs
            .par_iter()
            .map(|q| {
                let top = self.query(&q.question, 1).expect("k = 1");
                usize::from(top.ranked[0].0 == q.passage_id)
            })
            .sum();
        Ok(hits as f64 / qa_pairs.len() as f64)
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<(), RetrieverError> {
        let file = IndexFile {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            bin_count: self.bin_count,
            ngram_max: 2,
            num_docs: self.num_docs,
            passage_ids: self.passage_ids.clone(),
            doc_freq: self.doc_freq.iter().map(|(b, d)| (*b, *d)).collect(),
            doc_vectors: self.doc_vectors.clone(),
        };
        serde_json::to_writer(sink, &file).map_err(|e| RetrieverError::Io(e.into()))
    }

    pub fn load<R: Read>(source: R) -> Result<Self, RetrieverError> {
        let file: IndexFile =
            serde_json::from_reader(source).map_err(|e| RetrieverError::Format(e.to_string()))?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(RetrieverError::Format(format!(
                "unsupported header {} v{}",
                file.format, file.version
            )));
        }
        check_bins(file.bin_count)?;
        if file.ngram_max != 2
            || file.passage_ids.len() != file.num_docs
            || file.doc_vectors.len() != file.num_docs
        {
            return Err(RetrieverError::Format("inconsistent header counts".into()));
        }
        Ok(Self::assemble(
            file.bin_count,
            file.passage_ids,
            file.doc_freq.into_iter().collect(),
            file.doc_vectors,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    bin_count: usize,
    ngram_max: usize,
    num_docs: usize,
    passage_ids: Vec<String>,
    doc_freq: Vec<(u32, u32)>,
    doc_vectors: Vec<SparseVec>,
}

fn check_bins(bin_count: usize) -> Result<(), RetrieverError> {
    if bin_count.is_power_of_two() && bin_count <= 1 << 32 {
        Ok(())
    } else {
        Err(RetrieverError::BadBinCount(bin_count))
    }
}

fn bin_of(feature: &str, bin_count: usize) -> u32 {
    (stable_hash(feature.as_bytes()) & (bin_count as u64 - 1)) as u32
}

fn bin_counts(tokens: &[String], bin_count: usize) -> BTreeMap<u32, u32> {
    let mut counts = BTreeMap::new();
    for f in features(tokens) {
        *counts.entry(bin_of(&f, bin_count)).or_default() += 1;
    }
    counts
}

fn weigh(counts: &BTreeMap<u32, u32>, doc_freq: &BTreeMap<u32, u32>, num_docs: usize) -> SparseVec {
    counts
        .iter()
        .map(|(&bin, &tf)| {
            let df = doc_freq.get(&bin).copied().unwrap_or(0) as usize;
            (bin, (tf as f64).ln_1p() * idf(num_docs, df))
        })
        .collect()
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}
