mod common;

use std::collections::{BTreeMap, HashMap};

use advqa_core::corpus::{Answer, Dataset, Passage, Provenance, QAPair};
use advqa_core::metrics::{
    avg_len, dataset_report, ent_n, ent_n_base, exact_match, generation_metrics, render_text, split_report, token_f1,
    MetricReport, MetricsError,
};
use common::{avg_len_oracle, em_oracle, ent_oracle, f1_oracle, random_text};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

#[test]
fn answer_metrics_match_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let pred = random_text(&mut rng, 8);
        let golds: Vec<String> = (0..rng.gen_range(0..4)).map(|_| random_text(&mut rng, 8)).collect();
        let refs: Vec<&str> = golds.iter().map(String::as_str).collect();
        assert!((token_f1(&pred, &golds) - f1_oracle(&pred, &refs)).abs() <= TOL, "{pred:?} {golds:?}");
        assert_eq!(exact_match(&pred, &golds), em_oracle(&pred, &refs), "{pred:?} {golds:?}");
    }
}

#[test]
fn question_metrics_match_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let qs: Vec<String> = (0..rng.gen_range(1..12)).map(|_| random_text(&mut rng, 10)).collect();
        for n in 1..=4 {
            assert!((ent_n(&qs, n).unwrap() - ent_oracle(&qs, n)).abs() <= TOL, "{qs:?} n={n}");
        }
        assert!((avg_len(&qs).unwrap() - avg_len_oracle(&qs)).abs() <= TOL);
    }
}

#[test]
fn hand_computed_values() {
    assert!((token_f1("the cat sat", &["cat sat on mat"]) - 2.0 / 3.0).abs() <= TOL);
    assert_eq!(exact_match("The Cat!", &["cat"]), 1.0);
    assert_eq!(token_f1("", &[] as &[&str]), 1.0);
    assert_eq!(token_f1("anything", &[] as &[&str]), 0.0);
    let qs = ["a b c d e", "a b c d f"];
    // two 4-grams, each once: one bit
    assert!((ent_n(&qs, 4).unwrap() - 1.0).abs() <= TOL);
    assert!((ent_n_base(&qs, 4, std::f64::consts::E).unwrap() - 2f64.ln()).abs() <= TOL);
    assert_eq!(ent_n(&["short"], 4).unwrap(), 0.0);
    assert_eq!(ent_n(&qs, 0), Err(MetricsError::ZeroN));
    assert_eq!(avg_len(&[] as &[&str]), Err(MetricsError::EmptyQuestions));
}

fn dataset_from(entries: &[(Vec<String>, String)]) -> (Dataset, HashMap<String, String>) {
    let mut ds = Dataset::new("d");
    let text = "the cat sat on the mat the red dog 1920";
    ds.add_passage(Passage::new("p", "", text).unwrap()).unwrap();
    let mut preds = HashMap::new();
    for (i, (golds, pred)) in entries.iter().enumerate() {
        ds.qa_pairs.push(QAPair {
            id: format!("q{i}"),
            passage_id: "p".into(),
            question: "what?".into(),
            answers: golds.iter().map(|g| Answer { text: g.clone(), answer_start: 0 }).collect(),
            is_impossible: golds.is_empty(),
            provenance: Provenance::Original,
        });
        preds.insert(format!("q{i}"), pred.clone());
    }
    (ds, preds)
}

proptest! {
    #[test]
    fn f1_symmetric_for_single_gold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_text(&mut rng, 8), random_text(&mut rng, 8));
        prop_assert!((token_f1(&a, &[&b]) - token_f1(&b, &[&a])).abs() <= TOL);
    }

    #[test]
    fn em_implies_full_f1_and_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_text(&mut rng, 6);
        let golds: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_text(&mut rng, 6)).collect();
        let f1 = token_f1(&pred, &golds);
        let em = exact_match(&pred, &golds);
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!(em == 0.0 || em == 1.0);
        if em == 1.0 {
            prop_assert_eq!(f1, 1.0);
        }
    }

    #[test]
    fn entropy_permutation_and_duplication_invariant(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qs: Vec<String> = (0..rng.gen_range(1..10)).map(|_| random_text(&mut rng, 10)).collect();
        let h = ent_n(&qs, n).unwrap();
        let mut shuffled = qs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert!((ent_n(&shuffled, n).unwrap() - h).abs() <= 1e-9);
        let doubled: Vec<String> = qs.iter().chain(&qs).cloned().collect();
        prop_assert!((ent_n(&doubled, n).unwrap() - h).abs() <= 1e-9);
        // bounded by log2 of the number of distinct n-grams
        let grams: usize = qs.iter().map(|q| common::norm_tokens(q).len().saturating_sub(n - 1)).sum();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (grams.max(1) as f64).log2() + 1e-9);
    }

    #[test]
    fn split_overall_is_weighted_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(Vec<String>, String)> = (0..rng.gen_range(1..15))
            .map(|_| {
                let golds = (0..rng.gen_range(0..3)).map(|_| random_text(&mut rng, 5)).filter(|g| !common::norm_tokens(g).is_empty()).collect();
                (golds, random_text(&mut rng, 5))
            })
            .collect();
        let (ds, preds) = dataset_from(&entries);
        let r = split_report(&preds, &ds).unwrap();
        prop_assert_eq!(r.answerable_count + r.unanswerable_count, r.count);
        let weighted = r.f1_answerable.unwrap_or(0.0) * r.answerable_count as f64
            + r.f1_unanswerable.unwrap_or(0.0) * r.unanswerable_count as f64;
        prop_assert!((weighted / r.count as f64 - r.f1).abs() <= 1e-9);
        prop_assert!(r.em <= r.f1 + 1e-9);
        // independent recomputation
        let mut f1 = 0.0;
        for (golds, pred) in &entries {
            let refs: Vec<&str> = golds.iter().map(String::as_str).collect();
            f1 += f1_oracle(pred, &refs);
        }
        prop_assert!((100.0 * f1 / entries.len() as f64 - r.f1).abs() <= 1e-9);
    }
}

#[test]
fn split_report_requires_every_prediction() {
    let (ds, mut preds) = dataset_from(&[(vec!["cat".into()], "cat".into()), (vec![], "".into())]);
    preds.remove("q1");
    assert_eq!(split_report(&preds, &ds), Err(MetricsError::MissingPredictions(vec!["q1".into()])));
}

#[test]
fn generation_perplexity_mean_needs_every_value() {
    let qs = ["who wrote it", "when was it"];
    let all = generation_metrics(&qs, &[0.5, 1.0], &[Some(2.0), Some(4.0)]).unwrap();
    assert_eq!(all.mean_perplexity, Some(3.0));
    assert_eq!(all.mean_semantic, Some(0.75));
    let partial = generation_metrics(&qs, &[], &[Some(2.0), None]).unwrap();
    assert_eq!(partial.mean_perplexity, None);
    assert_eq!(partial.mean_semantic, None);
}

#[test]
fn rendered_report_layout() {
    let (mut ds, preds) = dataset_from(&[
        (vec!["the cat".into()], "cat".into()),
        (vec!["red dog".into()], "dog".into()),
        (vec![], "".into()),
    ]);
    ds.qa_pairs[0].question = "who sat on the mat".into();
    ds.qa_pairs[1].question = "what sat on the mat".into();
    ds.qa_pairs[2].question = "when was the red dog born".into();
    let mut row = dataset_report("original", &ds, Some(&preds)).unwrap();
    row.top1_accuracy = Some(100.0);
    let mut generated = MetricReport::new("mock");
    generated.generation = Some(generation_metrics(&["who is it"], &[0.9], &[Some(12.5)]).unwrap());
    generated.bucket_counts = BTreeMap::from([("standard".into(), 1)]);
    let text = render_text(&[row, generated]);
    let golden = "\
Generation model | Semantic |  |U| | Ent-4 |  Perp
-----------------+----------+------+-------+------
original         |        - | 4.33 |  2.00 |     -
mock             |     0.90 | 3.00 |  0.00 | 12.50

Train    |    F1 |    EM |   ans |  unans
---------+-------+-------+-------+-------
original | 88.89 | 66.67 | 83.33 | 100.00

Questions | Top-1 ACC
----------+----------
original  |    100.00
";
    assert_eq!(text, golden, "\n{text}");
}
