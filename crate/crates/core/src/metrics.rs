//! Question-set diversity and answer-accuracy metrics, and their report
//! layout.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Dataset};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("average length of an empty question list is undefined")]
    EmptyQuestions,
    #[error("n-gram order must be at least 1")]
    ZeroN,
    #[error("missing predictions for {} qa ids: {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
}

/// Entropy of the pooled n-gram distribution of a question set, in the
/// given log base. Questions shorter than `n` tokens contribute nothing.
pub fn ent_n_base(questions: &[impl AsRef<str>], n: usize, base: f64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroN);
    }
    let mut counts: HashMap<Vec<String>, u64> = HashMap::new();
    for q in questions {
        for gram in tokenize(q.as_ref()).windows(n) {
            *counts.entry(gram.to_vec()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Ok(0.0);
    }
    // Sorted summation keeps the result independent of hash order.
    let mut freqs: Vec<u64> = counts.into_values().collect();
    freqs.sort_unstable();
    let t = total as f64;
    let h: f64 = freqs
        .iter()
        .map(|&f| {
            let p = f as f64 / t;
            -p * p.log(base)
        })
        .sum();
    Ok(h.max(0.0))
}

/// Base-2 n-gram entropy.
pub fn ent_n(questions: &[impl AsRef<str>], n: usize) -> Result<f64, MetricsError> {
    ent_n_base(questions, n, 2.0)
}

pub fn avg_len(questions: &[impl AsRef<str>]) -> Result<f64, MetricsError> {
    if questions.is_empty() {
        return Err(MetricsError::EmptyQuestions);
    }
    let total: usize = questions.iter().map(|q| tokenize(q.as_ref()).len()).sum();
    Ok(total as f64 / questions.len() as f64)
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return f64::from(u8::from(pred == gold));
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *gold_counts.entry(g).or_default() += 1;
    }
    let mut common = 0usize;
    for p in pred {
        if let Some(c) = gold_counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Max token F1 over `golds`. With no golds the example is unanswerable and
/// only an empty (after normalization) prediction scores 1.
pub fn token_f1(prediction: &str, golds: &[impl AsRef<str>]) -> f64 {
    let pred = tokenize(prediction);
    if golds.is_empty() {
        return f64::from(u8::from(pred.is_empty()));
    }
    golds
        .iter()
        .map(|g| f1_tokens(&pred, &tokenize(g.as_ref())))
        .fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &[impl AsRef<str>]) -> f64 {
    let pred = tokenize(prediction);
    if golds.is_empty() {
        return f64::from(u8::from(pred.is_empty()));
    }
    f64::from(u8::from(golds.iter().any(|g| tokenize(g.as_ref()) == pred)))
}

/// Question-set quality columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub count: usize,
    pub ent4: f64,
    pub entropy_base: f64,
    pub mean_len: f64,
    pub mean_semantic: Option<f64>,
    pub mean_perplexity: Option<f64>,
}

/// Answer accuracy columns, scaled to [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub count: usize,
    pub f1: f64,
    pub em: f64,
    pub answerable_count: usize,
    pub unanswerable_count: usize,
    pub f1_answerable: Option<f64>,
    pub f1_unanswerable: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub generation: Option<GenerationMetrics>,
    pub accuracy: Option<AccuracyMetrics>,
    /// Top-1 retrieval accuracy in [0, 100].
    pub top1_accuracy: Option<f64>,
    pub bucket_counts: BTreeMap<String, usize>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }
}

/// Ent-4, |U|, and the means of whatever semantic scores and perplexities
/// are supplied. Any absent perplexity gives an absent mean, with a warning
/// when only some are absent.
pub fn generation_metrics(
    questions: &[impl AsRef<str>],
    semantic: &[f64],
    perplexities: &[Option<f64>],
) -> Result<GenerationMetrics, MetricsError> {
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let ppl: Option<Vec<f64>> = perplexities.iter().copied().collect();
    let mean_perplexity = match ppl {
        Some(p) => mean(&p),
        None if perplexities.iter().any(Option::is_some) => {
            log::warn!("perplexity missing for some questions; mean perplexity omitted");
            None
        }
        None => None,
    };
    Ok(GenerationMetrics {
        count: questions.len(),
        ent4: ent_n(questions, 4)?,
        entropy_base: 2.0,
        mean_len: avg_len(questions)?,
        mean_semantic: mean(semantic),
        mean_perplexity,
    })
}

/// Gold answers of a pair, empty when unanswerable. Golds that normalize to
/// nothing are dropped, as in the SQuAD v2 evaluator.
pub fn gold_answers(qa: &crate::corpus::QAPair) -> Vec<String> {
    if qa.is_impossible {
        return Vec::new();
    }
    qa.answers
        .iter()
        .map(|a| a.text.clone())
        .filter(|t| !tokenize(t).is_empty())
        .collect()
}

/// Overall F1/EM plus F1 over the answerable and unanswerable subsets.
pub fn split_report(predictions: &HashMap<String, String>, dataset: &Dataset) -> Result<AccuracyMetrics, MetricsError> {
    let missing: Vec<String> = dataset
        .qa_pairs
        .iter()
        .filter(|q| !predictions.contains_key(&q.id))
        .map(|q| q.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    let (mut f1_sum, mut em_sum) = (0.0, 0.0);
    let (mut ans_sum, mut ans_n, mut unans_sum, mut unans_n) = (0.0, 0usize, 0.0, 0usize);
    for qa in &dataset.qa_pairs {
        let golds = gold_answers(qa);
        let pred = &predictions[&qa.id];
        let f1 = token_f1(pred, &golds);
        f1_sum += f1;
        em_sum += exact_match(pred, &golds);
        if golds.is_empty() {
            unans_sum += f1;
            unans_n += 1;
        } else {
            ans_sum += f1;
            ans_n += 1;
        }
    }
    let n = dataset.qa_pairs.len();
    let pct = |sum: f64, n: usize| (n > 0).then(|| 100.0 * sum / n as f64);
    Ok(AccuracyMetrics {
        count: n,
        f1: pct(f1_sum, n).unwrap_or(0.0),
        em: pct(em_sum, n).unwrap_or(0.0),
        answerable_count: ans_n,
        unanswerable_count: unans_n,
        f1_answerable: pct(ans_sum, ans_n),
        f1_unanswerable: pct(unans_sum, unans_n),
    })
}

/// Report row for a dataset's question set, with an accuracy block when
/// predictions are given. Perplexities come from generated provenance.
pub fn dataset_report(
    name: impl Into<String>,
    dataset: &Dataset,
    predictions: Option<&HashMap<String, String>>,
) -> Result<MetricReport, MetricsError> {
    let questions: Vec<&str> = dataset.qa_pairs.iter().map(|q| q.question.as_str()).collect();
    let perplexities: Vec<Option<f64>> = dataset
        .qa_pairs
        .iter()
        .map(|q| match &q.provenance {
            crate::corpus::Provenance::Generated { perplexity, .. } => *perplexity,
            crate::corpus::Provenance::Original => None,
        })
        .collect();
    let mut report = MetricReport::new(name);
    report.generation = Some(generation_metrics(&questions, &[], &perplexities)?);
    report.accuracy = predictions.map(|p| split_report(p, dataset)).transpose()?;
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.2}"))
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<String>| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(out, "{}", line(header.iter().map(|h| (*h).to_owned()).collect()));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    );
    for row in rows {
        let _ = writeln!(out, "{}", line(row.clone()));
    }
}

/// Plain-text tables: question quality (Semantic, |U|, Ent-4, Perp), answer
/// accuracy (F1, EM, ans, unans) and retrieval accuracy, each listing only
/// the reports that carry those columns.
pub fn render_text(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let gen_rows: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| {
            r.generation.as_ref().map(|g| {
                vec![
                    r.name.clone(),
                    cell(g.mean_semantic),
                    cell(Some(g.mean_len)),
                    cell(Some(g.ent4)),
                    cell(g.mean_perplexity),
                ]
            })
        })
        .collect();
    if !gen_rows.is_empty() {
        table(&mut out, &["Generation model", "Semantic", "|U|", "Ent-4", "Perp"], &gen_rows);
    }
    let acc_rows: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| {
            r.accuracy.as_ref().map(|a| {
                vec![
                    r.name.clone(),
                    cell(Some(a.f1)),
                    cell(Some(a.em)),
                    cell(a.f1_answerable),
                    cell(a.f1_unanswerable),
                ]
            })
        })
        .collect();
    if !acc_rows.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        table(&mut out, &["Train", "F1", "EM", "ans", "unans"], &acc_rows);
    }
    let ret_rows: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| r.top1_accuracy.map(|t| vec![r.name.clone(), cell(Some(t))]))
        .collect();
    if !ret_rows.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        table(&mut out, &["Questions", "Top-1 ACC"], &ret_rows);
    }
    out
}
