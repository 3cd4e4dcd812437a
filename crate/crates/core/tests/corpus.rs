//! Synthetic corpus structure and file round trips.

use std::collections::HashSet;

use contrastive_core::corpus::{
    generate, generate_eval, read_corpus, read_embeddings, write_corpus, write_embeddings,
};
use contrastive_core::matrix::dot;
use contrastive_core::train::{corpus_false_neg_pct, planted_recall};
use contrastive_core::{CorpusSpec, MinerConfig, TeacherConfig, TeacherEncoder};

fn spec() -> CorpusSpec {
    CorpusSpec {
        n_groups: 12,
        items_per_group: 24,
        eval_groups: 12,
        eval_queries_per_group: 4,
        ..Default::default()
    }
}

fn teacher(spec: &CorpusSpec) -> TeacherEncoder {
    let config = TeacherConfig {
        visible_dims: Some(spec.signal_dim()),
        ..Default::default()
    };
    TeacherEncoder::new(&config, spec.input_dim).unwrap()
}

#[test]
fn planted_copy_is_nearest_same_group_candidate_to_its_positive() {
    let spec = spec();
    let corpus = generate(&spec).unwrap();
    let e = teacher(&spec).encode(&corpus.items).unwrap();
    let planted: HashSet<&str> = corpus
        .pairs
        .iter()
        .filter_map(|p| p.false_negative.as_deref())
        .collect();
    let mut checked = 0;
    for pair in corpus.pairs.iter().filter(|p| p.is_false_negative_planted) {
        let pos = e.position(&pair.positive).unwrap();
        let fnr = e.position(pair.false_negative.as_deref().unwrap()).unwrap();
        let group = corpus.items[pos].group.as_deref();
        let to_copy = dot(e.row(pos), e.row(fnr));
        for (j, item) in corpus.items.iter().enumerate() {
            if j == pos || item.group.as_deref() != group || planted.contains(item.id.as_str()) {
                continue;
            }
            assert!(
                to_copy >= dot(e.row(pos), e.row(j)),
                "{} vs {}",
                pair.positive,
                item.id
            );
        }
        checked += 1;
    }
    assert_eq!(checked, corpus.planted_count());
    assert_eq!(checked, (0.2 * 288f64).round() as usize);
}

#[test]
fn generation_is_seed_deterministic() {
    let a = generate(&spec()).unwrap();
    assert_eq!(a, generate(&spec()).unwrap());
    let b = generate(&CorpusSpec { seed: 43, ..spec() }).unwrap();
    assert_ne!(a, b);
    assert_eq!(generate_eval(&spec()).unwrap(), generate_eval(&spec()).unwrap());
}

#[test]
fn eval_task_shape() {
    let eval = generate_eval(&spec()).unwrap();
    assert_eq!(eval.candidates.len(), 12);
    assert_eq!(eval.queries.len(), 48);
    let ids: HashSet<&str> = eval.candidates.iter().map(|c| c.id.as_str()).collect();
    for q in &eval.queries {
        let rel = &eval.relevance[&q.id];
        assert_eq!(rel.len(), 1);
        assert!(rel.iter().all(|r| ids.contains(r.as_str())));
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&spec()).unwrap();
    let path = dir.path().join("nested/corpus.jsonl");
    write_corpus(&path, &corpus).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), corpus);

    let e = teacher(&spec()).encode(&corpus.items[..20]).unwrap();
    let epath = dir.path().join("teacher.jsonl");
    write_embeddings(&epath, &e).unwrap();
    let back = read_embeddings(&epath).unwrap();
    assert_eq!(back.ids(), e.ids());
    assert_eq!(back.matrix().max_abs_diff(e.matrix()), 0.0);
}

#[test]
fn teacher_space_filter_catches_planted_copies() {
    let spec = spec();
    let corpus = generate(&spec).unwrap();
    let t = teacher(&spec);
    let embed = |items: &[contrastive_core::ItemRecord]| t.encode(items);
    let at_zero = planted_recall(&corpus, &embed, 0.0).unwrap();
    assert_eq!(at_zero.planted, corpus.planted_count());
    assert!(at_zero.fraction() >= 0.95, "{at_zero:?}");
    assert_eq!(planted_recall(&corpus, &embed, 2.0).unwrap().filtered, 0);

    let mut last = f64::INFINITY;
    for beta in [-0.1, 0.0, 0.1, 0.2, 0.3] {
        let miner = MinerConfig {
            beta,
            ..Default::default()
        };
        let pct = corpus_false_neg_pct(&corpus, &embed, 64, &miner).unwrap();
        assert!(pct <= last, "beta {beta}: {pct} > {last}");
        last = pct;
    }
}
