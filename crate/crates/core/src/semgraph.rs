//! Symbolic semantic graphs over passages and seeded sampling of
//! (answer, clues, style) control tuples from them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, char_slice, Passage};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("span {start}..{end} out of range for passage `{passage_id}` of length {len}")]
    SpanOutOfRange {
        passage_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("invalid sampling config: {0}")]
    Config(String),
}

/// Half-open range of scalar offsets into a passage text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Entity,
    Attribute,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NerLabel {
    Person,
    Location,
    Date,
    Number,
    Org,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    What,
    Who,
    When,
    Where,
    Why,
    How,
    HowMany,
    Which,
    #[serde(rename = "yesno")]
    YesNo,
}

impl Style {
    pub const ALL: [Style; 9] = [
        Style::What,
        Style::Who,
        Style::When,
        Style::Where,
        Style::Why,
        Style::How,
        Style::HowMany,
        Style::Which,
        Style::YesNo,
    ];

    /// Wire name, as used in prompts and the generation protocol.
    pub fn as_str(self) -> &'static str {
        match self {
            Style::What => "what",
            Style::Who => "who",
            Style::When => "when",
            Style::Where => "where",
            Style::Why => "why",
            Style::How => "how",
            Style::HowMany => "how_many",
            Style::Which => "which",
            Style::YesNo => "yesno",
        }
    }

    pub fn parse(s: &str) -> Option<Style> {
        Style::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// Surface interrogative that opens a question of this style.
    pub fn question_word(self) -> &'static str {
        match self {
            Style::HowMany => "how many",
            Style::YesNo => "is",
            other => other.as_str(),
        }
    }

    /// Styles compatible with an answer of the given NER class.
    pub fn allowed_for(label: NerLabel) -> &'static [Style] {
        match label {
            NerLabel::Person => &[Style::Who, Style::What, Style::Which],
            NerLabel::Location => &[Style::Where, Style::What, Style::Which],
            NerLabel::Date => &[Style::When, Style::What],
            NerLabel::Number => &[Style::HowMany, Style::What],
            NerLabel::Org | NerLabel::Other => &[Style::What, Style::Which, Style::How, Style::Why],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemNode {
    pub id: usize,
    pub span: Span,
    pub surface: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner_label: Option<NerLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemEdge {
    pub from: usize,
    pub to: usize,
    pub relation: String,
}

/// Entity mention in the external parse ingest format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub label: NerLabel,
}

impl EntityMention {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// (subject, relation, object) in the ingest format. `rel_span`, when known,
/// locates the relation word in the passage and turns it into a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subj: Span,
    pub rel: String,
    pub obj: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_span: Option<Span>,
}

/// One line of the external parse ingest format (also the `/parse` reply).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseRecord {
    pub passage_id: String,
    pub entities: Vec<EntityMention>,
    pub triples: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticGraph {
    pub passage_id: String,
    pub nodes: Vec<SemNode>,
    pub edges: Vec<SemEdge>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct GraphParts {
    passage_id: String,
    nodes: Vec<SemNode>,
    edges: Vec<SemEdge>,
}

impl<'de> Deserialize<'de> for SemanticGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let parts = GraphParts::deserialize(d)?;
        SemanticGraph::from_parts(parts.passage_id, parts.nodes, parts.edges)
            .map_err(serde::de::Error::custom)
    }
}

impl SemanticGraph {
    /// Assembles a graph from explicit parts, deriving the undirected
    /// adjacency. Node ids must equal their position.
    pub fn from_parts(
        passage_id: String,
        nodes: Vec<SemNode>,
        edges: Vec<SemEdge>,
    ) -> Result<Self, GraphError> {
        if let Some(bad) = nodes.iter().enumerate().find(|(i, n)| n.id != *i) {
            return Err(GraphError::UnknownNode(bad.1.id));
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
        for e in &edges {
            for end in [e.from, e.to] {
                if end >= nodes.len() {
                    return Err(GraphError::UnknownNode(end));
                }
            }
            if e.from != e.to {
                adj[e.from].insert(e.to);
                adj[e.to].insert(e.from);
            }
        }
        Ok(Self {
            passage_id,
            nodes,
            edges,
            adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<&SemNode> {
        self.nodes.get(id)
    }

    /// Sorted undirected neighbours of `id`.
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    /// All nodes within undirected shortest-path distance `k` of `node`,
    /// including `node` itself.
    pub fn neighborhood(&self, node: usize, k: usize) -> Result<BTreeSet<usize>, GraphError> {
        if node >= self.nodes.len() {
            return Err(GraphError::UnknownNode(node));
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        let mut queue = VecDeque::from([node]);
        dist[node] = 0;
        let mut out = BTreeSet::from([node]);
        while let Some(cur) = queue.pop_front() {
            if dist[cur] == k {
                continue;
            }
            for &next in &self.adjacency[cur] {
                if dist[next] == usize::MAX {
                    dist[next] = dist[cur] + 1;
                    out.insert(next);
                    queue.push_back(next);
                }
            }
        }
        Ok(out)
    }
}

/// Builds the graph of a passage: one node per distinct span, one relation
/// edge per distinct triple. Nodes are numbered in span order.
pub fn build_graph(
    passage: &Passage,
    triples: &[Triple],
    entities: &[EntityMention],
) -> Result<SemanticGraph, GraphError> {
    let len = char_len(&passage.text);
    let check = |span: Span| -> Result<Span, GraphError> {
        if span.start < span.end && span.end <= len {
            Ok(span)
        } else {
            Err(GraphError::SpanOutOfRange {
                passage_id: passage.id.clone(),
                start: span.start,
                end: span.end,
                len,
            })
        }
    };

    let mut spans: BTreeMap<Span, (NodeKind, Option<NerLabel>)> = BTreeMap::new();
    for ent in entities {
        spans.insert(check(ent.span())?, (NodeKind::Entity, Some(ent.label)));
    }
    for t in triples {
        for end in [t.subj, t.obj] {
            spans
                .entry(check(end)?)
                .or_insert((NodeKind::Attribute, None));
        }
        if let Some(rs) = t.rel_span {
            spans.entry(check(rs)?).or_insert((NodeKind::Relation, None));
        }
    }

    let index: BTreeMap<Span, usize> = spans.keys().enumerate().map(|(i, s)| (*s, i)).collect();
    let nodes = spans
        .iter()
        .enumerate()
        .map(|(id, (span, (kind, label)))| SemNode {
            id,
            span: *span,
            surface: char_slice(&passage.text, span.start, span.end)
                .unwrap_or_default()
                .to_owned(),
            kind: *kind,
            ner_label: *label,
        })
        .collect();

    let mut edges = BTreeSet::new();
    for t in triples {
        let (s, o) = (index[&t.subj], index[&t.obj]);
        if s == o {
            continue;
        }
        edges.insert(SemEdge {
            from: s,
            to: o,
            relation: t.rel.clone(),
        });
        if let Some(r) = t.rel_span.map(|rs| index[&rs]) {
            if r != s && r != o {
                edges.insert(SemEdge { from: s, to: r, relation: "subject".into() });
                edges.insert(SemEdge { from: r, to: o, relation: "object".into() });
            }
        }
    }
    SemanticGraph::from_parts(passage.id.clone(), nodes, edges.into_iter().collect())
}

pub fn build_graph_from_record(
    passage: &Passage,
    record: &ParseRecord,
) -> Result<SemanticGraph, GraphError> {
    build_graph(passage, &record.triples, &record.entities)
}

// ---------------------------------------------------------------------------
// Rule-based fallback parser

const CAPITALIZED_STOPWORDS: &[&str] = &[
    "A", "An", "The", "In", "On", "At", "He", "She", "It", "They", "We", "I", "This", "That",
    "These", "Those", "His", "Her", "Its", "Their", "Our", "After", "Before", "During", "When",
    "While", "Although", "However", "Many", "Some", "Today", "Later", "By", "From", "For", "With",
    "Of", "And", "But", "As", "Since", "Until", "Despite", "There", "Most", "Several", "Each",
    "Both", "Over", "Under", "Between", "Because", "If", "Then", "Also", "Who", "What", "Where",
    "Why", "How", "Which", "Is", "Was", "Are", "Were", "Did",
];
const CONNECTORS: &[&str] = &["of", "de", "von", "van", "da", "del"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];
const NUMBER_WORDS: &[&str] = &[
    "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "dozen", "hundred", "thousand", "million",
];
const ORG_WORDS: &[&str] = &[
    "University", "Company", "Corporation", "Institute", "Academy", "Society", "Association",
    "Party", "Council", "Church", "Museum", "Bank", "College", "Club", "Orchestra", "Group",
    "Inc", "Ltd", "Foundation", "Agency", "Ministry", "Library", "School", "Hospital", "Band",
    "Records", "Airlines", "Railway", "Observatory", "Theatre", "Gallery", "Press", "League",
];
const PLACE_WORDS: &[&str] = &[
    "River", "Lake", "Mountain", "Mount", "Sea", "Ocean", "Island", "Islands", "Valley", "Bay",
    "Park", "Street", "Bridge", "Castle", "Province", "County", "Desert", "Coast", "Forest",
    "Harbour", "Harbor", "Strait", "Peninsula",
];
const PLACE_PREPOSITIONS: &[&str] = &[
    "in", "at", "from", "to", "near", "into", "across", "toward", "towards", "through",
    "throughout", "outside", "inside", "around",
];
const VERBS: &[&str] = &[
    "is", "was", "are", "were", "has", "had", "won", "led", "built", "wrote", "became", "made",
    "took", "began", "met", "left", "joined", "leads", "runs", "ran", "holds", "held", "sold",
    "bought", "taught", "found", "gave", "drew", "flows", "lies", "hosts", "owns", "married",
    "sent", "grew", "fought", "beat", "chose", "knew", "brought", "lost", "spent", "opened",
    "sang", "spoke", "crossed", "rules", "borders",
];
const NOT_VERBS_ED: &[&str] = &["red", "bed", "need", "seed", "speed", "hundred", "united", "sacred", "naked", "wicked"];

#[derive(Debug, Clone)]
struct Tok<'a> {
    start: usize,
    end: usize,
    text: &'a str,
    sentence: usize,
}

fn is_number_token(t: &str) -> bool {
    t.chars().any(|c| c.is_ascii_digit()) && t.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

fn is_capitalized(t: &str) -> bool {
    t.chars().next().is_some_and(char::is_uppercase)
}

fn is_verb_like(t: &str) -> bool {
    if is_capitalized(t) || is_number_token(t) {
        return false;
    }
    let lower = t.to_lowercase();
    VERBS.contains(&lower.as_str())
        || (lower.len() >= 4 && lower.ends_with("ed") && !NOT_VERBS_ED.contains(&lower.as_str()))
}

/// Words are alphanumeric runs with internal `-`, `'`, and digit-internal
/// `,`/`.`. A sentence ends at `.`, `!` or `?` followed by whitespace or EOF.
fn lex(text: &str) -> Vec<Tok<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut toks = Vec::new();
    let mut sentence = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_alphanumeric() {
            let begin = i;
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                let next_alnum = chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric());
                let joins = match cj {
                    '-' | '\'' | '\u{2019}' => next_alnum,
                    ',' | '.' => {
                        chars[j - 1].1.is_ascii_digit()
                            && chars.get(j + 1).is_some_and(|n| n.1.is_ascii_digit())
                    }
                    _ => cj.is_alphanumeric(),
                };
                if !joins {
                    break;
                }
                j += 1;
            }
            let byte_start = chars[begin].0;
            let byte_end = chars.get(j).map_or(text.len(), |c| c.0);
            toks.push(Tok {
                start: begin,
                end: j,
                text: &text[byte_start..byte_end],
                sentence,
            });
            i = j;
        } else {
            if matches!(c, '.' | '!' | '?')
                && chars.get(i + 1).is_none_or(|n| n.1.is_whitespace())
            {
                sentence += 1;
            }
            i += 1;
        }
    }
    toks
}

fn only_whitespace_between(text: &str, a: &Tok, b: &Tok) -> bool {
    char_slice(text, a.end, b.start).is_some_and(|s| s.chars().all(char::is_whitespace))
}

fn label_run(run: &[&Tok], prev: Option<&Tok>) -> NerLabel {
    let words: Vec<&str> = run.iter().map(|t| t.text).collect();
    if words.iter().any(|w| MONTHS.contains(w)) {
        NerLabel::Date
    } else if words.iter().any(|w| ORG_WORDS.contains(w)) {
        NerLabel::Org
    } else if words.iter().any(|w| PLACE_WORDS.contains(w))
        || prev.is_some_and(|p| PLACE_PREPOSITIONS.contains(&p.text))
    {
        NerLabel::Location
    } else if words.iter().filter(|w| is_capitalized(w)).count() >= 2 {
        NerLabel::Person
    } else {
        NerLabel::Other
    }
}

/// Rule-based offline stand-in for an external scene-graph parser.
///
/// Capitalized token runs and number/date tokens become entities. Within a
/// sentence, each pair of consecutive entities with a verb-like token between
/// them yields a (subject, verb, object) triple.
pub fn naive_parse(passage: &Passage) -> ParseRecord {
    let text = passage.text.as_str();
    let toks = lex(text);
    let mut entities: Vec<(Span, NerLabel, usize)> = Vec::new();

    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        let prev = i.checked_sub(1).map(|p| &toks[p]).filter(|p| p.sentence == t.sentence);
        if is_number_token(t.text) {
            let label = match t.text.parse::<u32>() {
                Ok(y) if t.text.len() == 4 && (1000..=2100).contains(&y) => NerLabel::Date,
                _ => NerLabel::Number,
            };
            entities.push((Span::new(t.start, t.end), label, t.sentence));
            i += 1;
            continue;
        }
        if NUMBER_WORDS.contains(&t.text) {
            entities.push((Span::new(t.start, t.end), NerLabel::Number, t.sentence));
            i += 1;
            continue;
        }
        if !is_capitalized(t.text) || CAPITALIZED_STOPWORDS.contains(&t.text) {
            i += 1;
            continue;
        }
        let mut run = vec![t];
        let mut j = i + 1;
        while j < toks.len() {
            let last = run[run.len() - 1];
            let cand = &toks[j];
            if cand.sentence != t.sentence || !only_whitespace_between(text, last, cand) {
                break;
            }
            if is_capitalized(cand.text) && !CAPITALIZED_STOPWORDS.contains(&cand.text) {
                run.push(cand);
                j += 1;
            } else if CONNECTORS.contains(&cand.text)
                && toks.get(j + 1).is_some_and(|n| {
                    n.sentence == t.sentence
                        && is_capitalized(n.text)
                        && only_whitespace_between(text, cand, n)
                })
            {
                run.push(cand);
                run.push(&toks[j + 1]);
                j += 2;
            } else {
                break;
            }
        }
        // "March 1920" style dates absorb the following year.
        let all_months = run.iter().all(|r| MONTHS.contains(&r.text));
        if all_months {
            if let Some(n) = toks.get(j).filter(|n| {
                n.sentence == t.sentence
                    && is_number_token(n.text)
                    && only_whitespace_between(text, run[run.len() - 1], n)
            }) {
                run.push(n);
                j += 1;
            }
        }
        let label = label_run(&run, prev);
        entities.push((Span::new(run[0].start, run[run.len() - 1].end), label, t.sentence));
        i = j;
    }

    let mut triples = Vec::new();
    for pair in entities.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.2 != b.2 {
            continue;
        }
        let verb = toks
            .iter()
            .filter(|t| t.start >= a.0.end && t.end <= b.0.start)
            .find(|t| is_verb_like(t.text));
        if let Some(v) = verb {
            triples.push(Triple {
                subj: a.0,
                rel: v.text.to_lowercase(),
                obj: b.0,
                rel_span: Some(Span::new(v.start, v.end)),
            });
        }
    }

    ParseRecord {
        passage_id: passage.id.clone(),
        entities: entities
            .into_iter()
            .map(|(s, label, _)| EntityMention {
                start: s.start,
                end: s.end,
                label,
            })
            .collect(),
        triples,
    }
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub num_clues: usize,
    pub k: usize,
    pub styles: BTreeSet<Style>,
    pub unanswerable_fraction: f64,
    pub samples_per_passage: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_clues: 2,
            k: 2,
            styles: Style::ALL.into_iter().collect(),
            unanswerable_fraction: 0.3,
            samples_per_passage: 8,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.styles.is_empty() {
            return Err(GraphError::Config("style set is empty".into()));
        }
        if self.k == 0 {
            return Err(GraphError::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.unanswerable_fraction) {
            return Err(GraphError::Config(format!(
                "unanswerable_fraction {} outside [0, 1]",
                self.unanswerable_fraction
            )));
        }
        Ok(())
    }
}

/// One recorded random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "draw", rename_all = "snake_case")]
pub enum Draw {
    Answerability { u: f64 },
    Answer { index: usize, of: usize },
    Clue { index: usize, of: usize },
    Style { index: usize, of: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsSample {
    pub id: String,
    pub passage_id: String,
    pub answer_node: Option<usize>,
    pub clue_nodes: Vec<usize>,
    pub style: Style,
    pub answerable: bool,
    pub seed_trace: Vec<Draw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub samples: Vec<AcsSample>,
    /// Requested samples that could not be drawn (graph too small).
    pub shortfall: usize,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], trace: &mut Vec<Draw>, kind: fn(usize, usize) -> Draw) -> T {
    let index = rng.gen_range(0..items.len());
    trace.push(kind(index, items.len()));
    items[index]
}

/// Draws `config.samples_per_passage` control tuples from `graph`.
///
/// Answerable draws take an NER-labelled answer node uniformly, a style from
/// its allowed set, and `num_clues` distinct clues from the distance-`k` ball
/// around the answer. Unanswerable draws (probability
/// `unanswerable_fraction`) build a clue set whose members are pairwise within
/// distance `k`, and take any configured style. Draws that cannot be
/// satisfied are skipped and counted in `shortfall`.
pub fn sample_acs(graph: &SemanticGraph, config: &SamplingConfig, seed: u64) -> Result<SampleBatch, GraphError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles: Vec<Style> = config.styles.iter().copied().collect();
    let answer_candidates: Vec<usize> = graph
        .nodes
        .iter()
        .filter(|n| n.ner_label.is_some())
        .map(|n| n.id)
        .collect();
    let all_nodes: Vec<usize> = (0..graph.len()).collect();

    let mut samples = Vec::new();
    let mut shortfall = 0;
    for i in 0..config.samples_per_passage {
        let mut trace = Vec::new();
        let u: f64 = rng.gen();
        trace.push(Draw::Answerability { u });
        let unanswerable = u < config.unanswerable_fraction;

        let drawn = if unanswerable {
            draw_unanswerable(graph, config, &styles, &all_nodes, &mut rng, &mut trace)?
        } else {
            draw_answerable(graph, config, &answer_candidates, &mut rng, &mut trace)?
        };
        match drawn {
            Some((answer_node, clue_nodes, style)) => samples.push(AcsSample {
                id: format!("{}#s{i}", graph.passage_id),
                passage_id: graph.passage_id.clone(),
                answer_node,
                clue_nodes,
                style,
                answerable: answer_node.is_some(),
                seed_trace: trace,
            }),
            None => shortfall += 1,
        }
    }
    Ok(SampleBatch { samples, shortfall })
}

type Drawn = Option<(Option<usize>, Vec<usize>, Style)>;

fn draw_answerable(
    graph: &SemanticGraph,
    config: &SamplingConfig,
    candidates: &[usize],
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<Draw>,
) -> Result<Drawn, GraphError> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let answer = pick(rng, candidates, trace, |index, of| Draw::Answer { index, of });
    let label = graph.nodes[answer].ner_label.unwrap_or(NerLabel::Other);
    let allowed: Vec<Style> = Style::allowed_for(label)
        .iter()
        .copied()
        .filter(|s| config.styles.contains(s))
        .collect();
    if allowed.is_empty() {
        return Ok(None);
    }
    let style = pick(rng, &allowed, trace, |index, of| Draw::Style { index, of });

    let mut pool: Vec<usize> = graph
        .neighborhood(answer, config.k)?
        .into_iter()
        .filter(|&n| n != answer)
        .collect();
    if pool.len() < config.num_clues {
        return Ok(None);
    }
    let mut clues = Vec::with_capacity(config.num_clues);
    for _ in 0..config.num_clues {
        let index = rng.gen_range(0..pool.len());
        trace.push(Draw::Clue { index, of: pool.len() });
        clues.push(pool.swap_remove(index));
    }
    clues.sort_unstable();
    Ok(Some((Some(answer), clues, style)))
}

fn draw_unanswerable(
    graph: &SemanticGraph,
    config: &SamplingConfig,
    styles: &[Style],
    all_nodes: &[usize],
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<Draw>,
) -> Result<Drawn, GraphError> {
    let style = pick(rng, styles, trace, |index, of| Draw::Style { index, of });
    let mut clues: Vec<usize> = Vec::with_capacity(config.num_clues);
    let mut pool: Vec<usize> = all_nodes.to_vec();
    while clues.len() < config.num_clues {
        if pool.is_empty() {
            return Ok(None);
        }
        let index = rng.gen_range(0..pool.len());
        trace.push(Draw::Clue { index, of: pool.len() });
        let chosen = pool.swap_remove(index);
        clues.push(chosen);
        let ball = graph.neighborhood(chosen, config.k)?;
        pool.retain(|n| ball.contains(n));
        pool.sort_unstable();
    }
    clues.sort_unstable();
    Ok(Some((None, clues, style)))
}
