//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use advqa_core::corpus::{load_squad, load_squad_path, save_squad_to_vec, Answer, Dataset, Passage, Provenance, QAPair};
use advqa_core::filters::{select, Bucket, FilterConfig};
use advqa_core::metrics::{avg_len, dataset_report, ent_n, exact_match, render_text, token_f1};
use advqa_core::pipeline::{run, RunConfig, RunManifest, OUTPUT_FILES};
use advqa_core::retriever::{IndexConfig, TfIdfIndex};
use advqa_core::semgraph::{build_graph_from_record, naive_parse, sample_acs, SamplingConfig};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Ctx) -> Outcome);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

struct Ctx {
    dir: tempfile::TempDir,
    runs: RefCell<HashMap<String, (PathBuf, RunManifest, Duration)>>,
}

impl Ctx {
    /// Paraphrase-mode mock run on the 50-passage fixture with default
    /// filters, executed once per output directory name.
    fn desk_run(&self, name: &str) -> (PathBuf, RunManifest, Duration) {
        if let Some(done) = self.runs.borrow().get(name) {
            return done.clone();
        }
        let out = self.dir.path().join(name);
        let cfg: RunConfig = serde_json::from_value(json!({
            "input": fixture("desk50.json"),
            "output_dir": out,
            "seed": 1,
            "generator": {"mode": "mock", "paraphrase": true},
        }))
        .unwrap();
        let started = Instant::now();
        let manifest = run(&cfg).expect("pipeline run");
        let done = (out, manifest, started.elapsed());
        self.runs.borrow_mut().insert(name.to_owned(), done.clone());
        done
    }
}

fn tfidf_oracle(_: &Ctx) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut corpora, mut queries) = (0, 0);
    while corpora < 25 {
        let docs = rng.gen_range(1..=10);
        let texts = random_corpus(&mut rng, docs, 40);
        let passages: Vec<Passage> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(format!("d{i}"), "", t.as_str()).unwrap())
            .collect();
        let index = TfIdfIndex::build(&passages, IndexConfig::default()).unwrap();
        let mut bins = HashMap::new();
        let collision = texts
            .iter()
            .flat_map(|t| dense_features(t))
            .any(|f| bins.entry(index.bin_of(&f)).or_insert_with(|| f.clone()) != &f);
        if collision {
            continue;
        }
        corpora += 1;
        let oracle = DenseTfIdf::new(&texts.iter().map(String::as_str).collect::<Vec<_>>());
        for q in random_corpus(&mut rng, 10, 40).iter().chain(&texts) {
            queries += 1;
            let got = index.query(q, docs).unwrap().ranked;
            let want = oracle.ranking(q, 1e-9);
            let scores = oracle.scores(q);
            for ((gid, gs), (wi, ws)) in got.iter().zip(&want) {
                if (gs - ws).abs() > 1e-9 {
                    return Err(format!("query {q:?}: score {gs} vs oracle {ws}"));
                }
                let gi: usize = gid[1..].parse().unwrap();
                if gi != *wi && (scores[gi] - scores[*wi]).abs() > 1e-9 {
                    return Err(format!("query {q:?}: ranking differs at {gid}"));
                }
            }
            if got.len() != want.len() {
                return Err(format!("query {q:?}: {} results, oracle {}", got.len(), want.len()));
            }
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("took {elapsed:.2?}"));
    }
    Ok(format!("{corpora} corpora, {queries} queries, {elapsed:.2?}"))
}

fn metric_oracles(_: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let pred = random_text(&mut rng, 8);
        let golds: Vec<String> = (0..rng.gen_range(0..4)).map(|_| random_text(&mut rng, 8)).collect();
        let refs: Vec<&str> = golds.iter().map(String::as_str).collect();
        if (token_f1(&pred, &golds) - f1_oracle(&pred, &refs)).abs() > 1e-12 {
            return Err(format!("token_f1 {pred:?} {golds:?}"));
        }
        if (exact_match(&pred, &golds) - em_oracle(&pred, &refs)).abs() > 1e-12 {
            return Err(format!("exact_match {pred:?} {golds:?}"));
        }
    }
    for _ in 0..100 {
        let qs: Vec<String> = (0..rng.gen_range(1..12)).map(|_| random_text(&mut rng, 10)).collect();
        let n = rng.gen_range(1..=4);
        if (ent_n(&qs, n).unwrap() - ent_oracle(&qs, n)).abs() > 1e-12 {
            return Err(format!("ent_{n} {qs:?}"));
        }
        if (avg_len(&qs).unwrap() - avg_len_oracle(&qs)).abs() > 1e-12 {
            return Err(format!("avg_len {qs:?}"));
        }
    }
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&(any::<u64>()), |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_text(&mut rng, 8), random_text(&mut rng, 8));
            prop_assert!((token_f1(&a, &[&b]) - token_f1(&b, &[&a])).abs() <= 1e-12);
            let golds: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_text(&mut rng, 6)).collect();
            if exact_match(&a, &golds) == 1.0 {
                prop_assert_eq!(token_f1(&a, &golds), 1.0);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("400 oracle cases, 1000 property cases".into())
}

fn desk_attack(ctx: &Ctx) -> Outcome {
    let (_, manifest, elapsed) = ctx.desk_run("desk_a");
    let eval = manifest.attack_eval.ok_or("no attack evaluation")?;
    let detail = format!(
        "acc_original {:.2}, acc_attack {:.2} ({} questions), delta {:.2} points, {elapsed:.2?}",
        eval.acc_original, eval.acc_attack, eval.attack_count, eval.delta
    );
    if eval.acc_attack > eval.acc_original - 10.0 {
        return Err(detail);
    }
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("too slow: {detail}"));
    }
    Ok(detail)
}

fn filter_properties(_: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for set in 0..1000 {
        let (cands, scores) = random_candidates(rng.gen(), rng.gen_range(1..200));
        let (a, b) = (rng.gen_range(0..=40), rng.gen_range(0..=40));
        let cfg = FilterConfig {
            semantic_min: f64::from(rng.gen_range(-10..=10)) / 10.0,
            qa_f1_min: 0.5,
            tfidf_low_max: f64::from(a.min(b)) / 10.0,
            tfidf_high_min: f64::from(a.max(b)) / 10.0,
        };
        let stricter = FilterConfig { semantic_min: cfg.semantic_min + f64::from(rng.gen_range(0..10)) / 10.0, ..cfg };
        let loose = select(&cands, &scores, &cfg).map_err(|e| e.to_string())?;
        let strict = select(&cands, &scores, &stricter).map_err(|e| e.to_string())?;
        if loose.len() != cands.len() {
            return Err(format!("set {set}: {} verdicts for {} candidates", loose.len(), cands.len()));
        }
        for (((q, s), l), st) in cands.iter().zip(&loose).zip(&strict) {
            if l.bucket != expected_bucket(s.answerable, &scores[&q.id], &cfg) || l.kept != (l.bucket != Bucket::Dropped) {
                return Err(format!("set {set}: {} misbucketed as {:?}", q.id, l.bucket));
            }
            let answerable_bucket = matches!(l.bucket, Bucket::RetrieverAttack | Bucket::Standard);
            if (answerable_bucket && !s.answerable) || (l.bucket == Bucket::ReaderAttack && s.answerable) {
                return Err(format!("set {set}: {} crosses the answerability split", q.id));
            }
            if st.kept && (!l.kept || st.bucket != l.bucket) {
                return Err(format!("set {set}: raising semantic_min admitted {}", q.id));
            }
        }
    }
    Ok("1000 candidate sets".into())
}

fn sampling_validity(ctx: &Ctx) -> Outcome {
    let mut graphs = Vec::new();
    for name in ["tiny_squad.json", "desk50.json"] {
        let ds = load_squad_path(&fixture(name)).map_err(|e| e.to_string())?;
        for p in ds.passages.values() {
            graphs.push(build_graph_from_record(p, &naive_parse(p)).map_err(|e| e.to_string())?);
        }
    }
    let dists: Vec<_> = graphs.iter().map(all_pairs).collect();
    let (mut draws, mut emitted) = (0, 0);
    for seed in 0..1000u64 {
        let g = seed as usize % graphs.len();
        let cfg = SamplingConfig { samples_per_passage: 1, ..SamplingConfig::default() };
        let batch = sample_acs(&graphs[g], &cfg, seed).map_err(|e| e.to_string())?;
        draws += 1;
        for s in &batch.samples {
            emitted += 1;
            check_sample(&graphs[g], &dists[g], &cfg, s)?;
        }
    }
    let (a, ma, _) = ctx.desk_run("desk_a");
    let (b, mb, _) = ctx.desk_run("desk_b");
    if ma.outputs != mb.outputs || ma.outputs.len() != OUTPUT_FILES.len() {
        return Err("output hashes differ between executions".into());
    }
    for name in OUTPUT_FILES {
        if fs::read(a.join(name)).ok() != fs::read(b.join(name)).ok() {
            return Err(format!("{name} differs between executions"));
        }
    }
    Ok(format!("{draws} draws, {emitted} samples valid; two runs byte-identical"))
}

fn corpus_round_trip(ctx: &Ctx) -> Outcome {
    let reload = |ds: &Dataset| -> Result<Dataset, String> {
        let bytes = save_squad_to_vec(ds).map_err(|e| e.to_string())?;
        load_squad(bytes.as_slice()).map_err(|e| e.to_string())
    };
    let mut checked = 0;
    let mut edge = Dataset::new("edge");
    edge.add_passage(Passage::new("p", "T", "Paris in 1920, Paris again.").unwrap()).unwrap();
    edge.qa_pairs.push(QAPair {
        id: "u".into(),
        passage_id: "p".into(),
        question: "Why?".into(),
        answers: vec![],
        is_impossible: true,
        provenance: Provenance::Original,
    });
    let unanswerable_only = edge.clone();
    edge.qa_pairs.push(QAPair {
        id: "m".into(),
        passage_id: "p".into(),
        question: "Where?".into(),
        answers: vec![
            Answer { text: "Paris".into(), answer_start: 0 },
            Answer { text: "Paris".into(), answer_start: 15 },
        ],
        is_impossible: false,
        provenance: Provenance::Original,
    });
    let mut sets = vec![unanswerable_only, edge];
    for name in ["tiny_squad.json", "desk50.json"] {
        sets.push(load_squad_path(&fixture(name)).map_err(|e| e.to_string())?);
    }
    for ds in &sets {
        if !ds.semantically_eq(&reload(ds)?) {
            return Err(format!("{} changed across save/load", ds.name));
        }
        checked += 1;
    }
    let (out, _, _) = ctx.desk_run("desk_a");
    let mut attack_pairs = 0;
    for (name, impossible) in [("retriever_attack.json", false), ("reader_attack.json", true)] {
        let ds = load_squad_path(&out.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if let Some(q) = ds.qa_pairs.iter().find(|q| q.is_impossible != impossible) {
            return Err(format!("{name}: {} has is_impossible={}", q.id, q.is_impossible));
        }
        attack_pairs += ds.qa_pairs.len();
    }
    Ok(format!("{checked} datasets round-trip; {attack_pairs} attack pairs reload"))
}

fn report_layout(_: &Ctx) -> Outcome {
    let gold = load_squad_path(&fixture("tiny_squad.json")).map_err(|e| e.to_string())?;
    let preds: HashMap<String, String> =
        serde_json::from_slice(&fs::read(fixture("tiny_predictions.json")).unwrap()).unwrap();
    let report = dataset_report("tiny", &gold, Some(&preds)).map_err(|e| e.to_string())?;
    let text = render_text(&[report]);
    let golden = fs::read_to_string(fixture("tiny_report.txt")).unwrap();
    if text != golden {
        return Err(format!("rendered report differs from golden file:\n{text}"));
    }
    // the golden numbers themselves, from the oracles
    let questions: Vec<String> = gold.qa_pairs.iter().map(|q| q.question.clone()).collect();
    let f1: Vec<f64> = gold
        .qa_pairs
        .iter()
        .map(|q| {
            let golds: Vec<&str> = if q.is_impossible { vec![] } else { q.answers.iter().map(|a| a.text.as_str()).collect() };
            f1_oracle(&preds[&q.id], &golds)
        })
        .collect();
    let cells = |line: &str| -> Vec<String> { line.split('|').map(|c| c.trim().to_owned()).collect() };
    let lines: Vec<&str> = golden.lines().collect();
    let want_gen = vec![
        "tiny".to_owned(),
        "-".into(),
        format!("{:.2}", avg_len_oracle(&questions)),
        format!("{:.2}", ent_oracle(&questions, 4)),
        "-".into(),
    ];
    let mean_f1 = format!("{:.2}", 100.0 * f1.iter().sum::<f64>() / f1.len() as f64);
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    if header.join(" ") != "Generation model | Semantic | |U| | Ent-4 | Perp" {
        return Err(format!("unexpected header {:?}", lines[0]));
    }
    if cells(lines[2]) != want_gen || cells(lines[6]).get(1) != Some(&mean_f1) {
        return Err(format!("golden file disagrees with oracle values {want_gen:?} / F1 {mean_f1}"));
    }
    Ok("golden layout and values match".into())
}

fn main() {
    let ctx = Ctx { dir: tempfile::tempdir().unwrap(), runs: RefCell::default() };
    let criteria: [Criterion; 7] = [
        ("tfidf-oracle-equivalence", tfidf_oracle),
        ("metric-oracles", metric_oracles),
        ("desk-scale-attack", desk_attack),
        ("filter-properties", filter_properties),
        ("sampling-validity-and-reproducibility", sampling_validity),
        ("corpus-round-trip", corpus_round_trip),
        ("report-layout-golden", report_layout),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&ctx)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
