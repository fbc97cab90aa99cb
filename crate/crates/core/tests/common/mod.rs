//! Brute-force reference implementations shared by the integration and
//! acceptance tests. None of these call into the library's own scoring code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use advqa_core::filters::{Bucket, CandidateScores, FilterConfig};
use advqa_core::genclient::GeneratedQuestion;
use advqa_core::semgraph::{AcsSample, NerLabel, SamplingConfig, SemanticGraph, Style};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

/// Lowercase, delete ASCII punctuation, split on whitespace, drop articles.
pub fn norm_tokens(text: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if !c.is_ascii_punctuation() {
            cleaned.push(c);
        }
    }
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

// ---------------------------------------------------------------------------
// Dense TF-IDF

pub struct DenseTfIdf {
    pub n: usize,
    pub df: BTreeMap<String, usize>,
    pub docs: Vec<BTreeMap<String, f64>>,
}

pub fn dense_features(text: &str) -> Vec<String> {
    let toks = norm_tokens(text);
    let mut out = toks.clone();
    for i in 1..toks.len() {
        out.push(format!("{} {}", toks[i - 1], toks[i]));
    }
    out
}

fn counts(feats: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for f in feats {
        *m.entry(f.clone()).or_insert(0) += 1;
    }
    m
}

impl DenseTfIdf {
    pub fn new(docs: &[&str]) -> Self {
        let n = docs.len();
        let doc_counts: Vec<BTreeMap<String, usize>> = docs.iter().map(|d| counts(&dense_features(d))).collect();
        let mut df = BTreeMap::new();
        for c in &doc_counts {
            for f in c.keys() {
                *df.entry(f.clone()).or_insert(0) += 1;
            }
        }
        let mut oracle = Self { n, df, docs: Vec::new() };
        oracle.docs = doc_counts.iter().map(|c| oracle.weigh(c)).collect();
        oracle
    }

    pub fn idf(&self, feature: &str) -> f64 {
        let df = *self.df.get(feature).unwrap_or(&0) as f64;
        let n = self.n as f64;
        f64::max(0.0, ((n - df + 0.5) / (df + 0.5)).ln())
    }

    fn weigh(&self, c: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
        c.iter()
            .map(|(f, &tf)| (f.clone(), (tf as f64).ln_1p() * self.idf(f)))
            .collect()
    }

    pub fn scores(&self, query: &str) -> Vec<f64> {
        let q = self.weigh(&counts(&dense_features(query)));
        self.docs
            .iter()
            .map(|d| q.iter().map(|(f, w)| w * d.get(f).copied().unwrap_or(0.0)).sum())
            .collect()
    }

    /// Documents by descending score; scores within `tol` count as tied and
    /// keep document order.
    pub fn ranking(&self, query: &str, tol: f64) -> Vec<(usize, f64)> {
        let s = self.scores(query);
        let mut order: Vec<usize> = (0..self.n).collect();
        // insertion sort so that the tolerance-based comparison stays stable
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && s[order[j]] > s[order[j - 1]] + tol {
                order.swap(j, j - 1);
                j -= 1;
            }
        }
        order.into_iter().map(|i| (i, s[i])).collect()
    }
}

/// Random small corpus: `docs` documents of 3..=12 words from a vocabulary
/// of `vocab` words, with occasional punctuation and articles.
pub fn random_corpus(rng: &mut impl Rng, docs: usize, vocab: usize) -> Vec<String> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..docs)
        .map(|_| {
            let len = rng.gen_range(3..=12);
            (0..len)
                .map(|_| match rng.gen_range(0..10) {
                    0 => "the".to_owned(),
                    1 => format!("{},", words.choose(rng).unwrap().to_uppercase()),
                    _ => words.choose(rng).unwrap().clone(),
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Answer metrics

pub fn f1_oracle(pred: &str, golds: &[&str]) -> f64 {
    let p = norm_tokens(pred);
    if golds.is_empty() {
        return if p.is_empty() { 1.0 } else { 0.0 };
    }
    let mut best: f64 = 0.0;
    for g in golds {
        let g = norm_tokens(g);
        let f = if p.is_empty() || g.is_empty() {
            if p == g { 1.0 } else { 0.0 }
        } else {
            let mut remaining = g.clone();
            let mut same = 0;
            for t in &p {
                if let Some(pos) = remaining.iter().position(|x| x == t) {
                    remaining.remove(pos);
                    same += 1;
                }
            }
            if same == 0 {
                0.0
            } else {
                let prec = same as f64 / p.len() as f64;
                let rec = same as f64 / g.len() as f64;
                2.0 * prec * rec / (prec + rec)
            }
        };
        best = best.max(f);
    }
    best
}

pub fn em_oracle(pred: &str, golds: &[&str]) -> f64 {
    let p = norm_tokens(pred);
    if golds.is_empty() {
        return if p.is_empty() { 1.0 } else { 0.0 };
    }
    if golds.iter().any(|g| norm_tokens(g) == p) { 1.0 } else { 0.0 }
}

pub fn ent_oracle(questions: &[String], n: usize) -> f64 {
    let mut counts: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for q in questions {
        let t = norm_tokens(q);
        if t.len() < n {
            continue;
        }
        for i in 0..=t.len() - n {
            *counts.entry(t[i..i + n].to_vec()).or_insert(0.0) += 1.0;
        }
    }
    let total: f64 = counts.values().sum();
    if total == 0.0 {
        return 0.0;
    }
    -counts
        .values()
        .map(|c| {
            let p = c / total;
            p * p.ln() / std::f64::consts::LN_2
        })
        .sum::<f64>()
}

pub fn avg_len_oracle(questions: &[String]) -> f64 {
    questions.iter().map(|q| norm_tokens(q).len() as f64).sum::<f64>() / questions.len() as f64
}

/// Short texts over a tiny vocabulary so that overlaps are common.
pub fn random_text(rng: &mut impl Rng, max_words: usize) -> String {
    const WORDS: [&str; 12] = ["the", "a", "cat", "Cat", "sat", "mat.", "on", "an", "dog", "dog!", "red", "1920"];
    let len = rng.gen_range(0..=max_words);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Graph distances and sample validity

/// All-pairs shortest paths over the undirected edge list.
pub fn all_pairs(graph: &SemanticGraph) -> Vec<Vec<usize>> {
    let n = graph.nodes.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for e in &graph.edges {
        if e.from != e.to {
            d[e.from][e.to] = 1;
            d[e.to][e.from] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn allowed(label: NerLabel) -> &'static [&'static str] {
    match label {
        NerLabel::Person => &["who", "what", "which"],
        NerLabel::Location => &["where", "what", "which"],
        NerLabel::Date => &["when", "what"],
        NerLabel::Number => &["how_many", "what"],
        _ => &["what", "which", "how", "why"],
    }
}

/// Checks one sample against the sampling rules using distances from
/// [`all_pairs`].
pub fn check_sample(graph: &SemanticGraph, dist: &[Vec<usize>], cfg: &SamplingConfig, s: &AcsSample) -> Result<(), String> {
    let n = graph.nodes.len();
    if s.passage_id != graph.passage_id {
        return Err(format!("{}: wrong passage", s.id));
    }
    if !cfg.styles.contains(&s.style) {
        return Err(format!("{}: style {:?} not configured", s.id, s.style));
    }
    if s.clue_nodes.len() != cfg.num_clues {
        return Err(format!("{}: {} clues, expected {}", s.id, s.clue_nodes.len(), cfg.num_clues));
    }
    let distinct: BTreeSet<usize> = s.clue_nodes.iter().copied().collect();
    if distinct.len() != s.clue_nodes.len() || s.clue_nodes.iter().any(|&c| c >= n) {
        return Err(format!("{}: clues not distinct valid nodes", s.id));
    }
    if s.answerable != s.answer_node.is_some() {
        return Err(format!("{}: answerable flag disagrees with answer node", s.id));
    }
    match s.answer_node {
        Some(a) => {
            let label = graph.nodes.get(a).and_then(|x| x.ner_label).ok_or(format!("{}: answer has no NER label", s.id))?;
            if !allowed(label).contains(&s.style.as_str()) {
                return Err(format!("{}: style {:?} not allowed for {:?}", s.id, s.style, label));
            }
            for &c in &s.clue_nodes {
                if c == a || dist[a][c] > cfg.k {
                    return Err(format!("{}: clue {c} at distance {} from answer {a}", s.id, dist[a][c]));
                }
            }
        }
        None => {
            for &x in &s.clue_nodes {
                for &y in &s.clue_nodes {
                    if dist[x][y] > cfg.k {
                        return Err(format!("{}: clues {x},{y} at distance {}", s.id, dist[x][y]));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Every (answer, clue set, style) an answerable draw may produce, by
/// exhaustive enumeration.
pub fn enumerate_answerable(graph: &SemanticGraph, dist: &[Vec<usize>], cfg: &SamplingConfig) -> BTreeSet<(usize, Vec<usize>, Style)> {
    let n = graph.nodes.len();
    let mut out = BTreeSet::new();
    for (a, node) in graph.nodes.iter().enumerate() {
        let Some(label) = node.ner_label else { continue };
        let pool: Vec<usize> = (0..n).filter(|&c| c != a && dist[a][c] <= cfg.k).collect();
        for clues in subsets(&pool, cfg.num_clues) {
            for &style in &cfg.styles {
                if allowed(label).contains(&style.as_str()) {
                    out.insert((a, clues.clone(), style));
                }
            }
        }
    }
    out
}

pub fn subsets(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in pool.iter().enumerate() {
        for mut rest in subsets(&pool[i + 1..], k - 1) {
            rest.insert(0, x);
            out.push(rest);
        }
    }
    out
}

/// Random graph with `n` nodes, each edge present with probability `p`;
/// about two thirds of the nodes carry an NER label.
pub fn random_graph(rng: &mut impl Rng, id: &str, n: usize, p: f64) -> SemanticGraph {
    use advqa_core::semgraph::{NodeKind, SemEdge, SemNode, Span};
    const LABELS: [NerLabel; 6] = [
        NerLabel::Person,
        NerLabel::Location,
        NerLabel::Date,
        NerLabel::Number,
        NerLabel::Org,
        NerLabel::Other,
    ];
    let nodes = (0..n)
        .map(|i| {
            let labelled = rng.gen_bool(0.67);
            SemNode {
                id: i,
                span: Span::new(3 * i, 3 * i + 2),
                surface: format!("n{i}"),
                kind: if labelled { NodeKind::Entity } else { NodeKind::Attribute },
                ner_label: labelled.then(|| *LABELS.choose(rng).unwrap()),
            }
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                let (from, to) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                edges.push(SemEdge { from, to, relation: "rel".into() });
            }
        }
    }
    SemanticGraph::from_parts(id.to_owned(), nodes, edges).unwrap()
}

// ---------------------------------------------------------------------------
// Filter candidates

pub type Candidates = Vec<(GeneratedQuestion, AcsSample)>;

/// `n` candidates with random answerability and quantized scores.
pub fn random_candidates(seed: u64, n: usize) -> (Candidates, HashMap<String, CandidateScores>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cands = Vec::with_capacity(n);
    let mut scores = HashMap::new();
    for i in 0..n {
        let answerable = rng.gen_bool(0.6);
        let id = format!("s{i}/q0");
        cands.push((
            GeneratedQuestion {
                id: id.clone(),
                text: format!("question {i}"),
                backend_id: "test".into(),
                perplexity: None,
                sample_id: format!("s{i}"),
            },
            AcsSample {
                id: format!("s{i}"),
                passage_id: "p".into(),
                answer_node: answerable.then_some(0),
                clue_nodes: vec![],
                style: Style::What,
                answerable,
                seed_trace: vec![],
            },
        ));
        // quantized so that boundary values occur
        let semantic = f64::from(rng.gen_range(-10..=10)) / 10.0;
        let syntactic = f64::from(rng.gen_range(0..=40)) / 10.0;
        let qa_consistent = answerable.then(|| rng.gen_bool(0.7));
        scores.insert(id, CandidateScores { semantic, syntactic, qa_consistent });
    }
    (cands, scores)
}

pub fn expected_bucket(answerable: bool, s: &CandidateScores, cfg: &FilterConfig) -> Bucket {
    let sem_ok = s.semantic >= cfg.semantic_min;
    let retriever = answerable && sem_ok && s.qa_consistent == Some(true) && s.syntactic <= cfg.tfidf_low_max;
    let reader = !answerable && sem_ok && s.syntactic >= cfg.tfidf_high_min;
    let standard = answerable && sem_ok && s.qa_consistent == Some(true) && !retriever;
    match (retriever, reader, standard) {
        (true, false, false) => Bucket::RetrieverAttack,
        (false, true, false) => Bucket::ReaderAttack,
        (false, false, true) => Bucket::Standard,
        (false, false, false) => Bucket::Dropped,
        other => panic!("overlapping buckets {other:?}"),
    }
}
