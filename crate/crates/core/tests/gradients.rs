//! Analytic gradients of the training losses against central differences.

mod common;

use common::{rng, uniform, unit_rows};
use contrastive_core::autodiff::finite_difference_check;
use contrastive_core::distill::kl_distillation_loss;
use contrastive_core::gradcache::{full_batch_step, BatchObjective};
use contrastive_core::infonce::{batched_infonce, infonce_hard_loss};
use contrastive_core::train::{contrastive_batch, ContrastiveObjective, DistillObjective};
use contrastive_core::{
    corpus, Encoder, EncoderConfig, KlNumerator, Matrix, MinerConfig, NegativeMode, ParamStore, Tape,
};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;
// At smaller temperatures some softmax weights fall near e^-40 and their
// gradients drop below what a central difference can resolve in f64.
const TAUS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

#[test]
fn kl_gradient_on_four_by_eight_batches() {
    for seed in 0..24 {
        let mut r = rng(seed);
        let tau = TAUS[seed as usize % TAUS.len()];
        let teacher = unit_rows(&mut r, 4, 8);
        for numerator in [KlNumerator::Pairwise, KlNumerator::Diagonal] {
            let mut store = ParamStore::new();
            let s = store.add("student", unit_rows(&mut r, 4, 8), true);
            let report = finite_difference_check(
                |tape, st| {
                    let e = tape.param(st, s);
                    kl_distillation_loss(tape, e, &teacher, tau, numerator)
                },
                &store,
                STEP,
                TOL,
            )
            .unwrap();
            assert!(
                report.passed,
                "seed {seed} {numerator:?}: {}",
                report.max_relative_error
            );
        }
    }
}

#[test]
fn kl_gradient_through_normalization() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let n = 2 + seed as usize % 7;
        let d = 2 + (seed as usize * 5) % 15;
        let teacher = unit_rows(&mut r, n, d);
        let mut store = ParamStore::new();
        let x = store.add("raw", uniform(&mut r, n, d, -2.0, 2.0), true);
        let report = finite_difference_check(
            |tape, st| {
                let v = tape.param(st, x);
                let e = tape.row_l2_normalize(v)?;
                kl_distillation_loss(tape, e, &teacher, 0.1, KlNumerator::Pairwise)
            },
            &store,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn infonce_gradient_one_query_eight_negatives() {
    for seed in 0..24 {
        let mut r = rng(200 + seed);
        let tau = TAUS[seed as usize % TAUS.len()];
        let d = 2 + seed as usize % 15;
        let mut store = ParamStore::new();
        let q = store.add("query", unit_rows(&mut r, 1, d), true);
        let p = store.add("positive", unit_rows(&mut r, 1, d), true);
        let n = store.add("negatives", unit_rows(&mut r, 8, d), true);
        let report = finite_difference_check(
            |tape, st| {
                let (q, p, n) = (tape.param(st, q), tape.param(st, p), tape.param(st, n));
                infonce_hard_loss(tape, q, p, n, tau)
            },
            &store,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn batched_infonce_gradient_with_shared_rows() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let mut store = ParamStore::new();
        let e = store.add("emb", uniform(&mut r, 8, 6, -2.0, 2.0), true);
        // rows 0..3 are queries, 3..8 candidates; negatives repeat rows
        let queries = [0, 1, 2];
        let positives = [3, 4, 5];
        let negatives = vec![vec![4, 5, 6, 7], vec![3, 3, 6, 7], vec![7, 6, 4, 1]];
        let report = finite_difference_check(
            |tape, st| {
                let v = tape.param(st, e);
                let u = tape.row_l2_normalize(v)?;
                batched_infonce(tape, u, &queries, &positives, &negatives, 0.2)
            },
            &store,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_relative_error);
    }
}

fn small_encoder(seed: u64, input_dim: usize) -> (Encoder, ParamStore) {
    let config = EncoderConfig {
        input_dim,
        hidden_dim: 6,
        embed_dim: 5,
        depth: 2,
        seed,
    };
    let mut store = ParamStore::new();
    let enc = Encoder::init(config, &mut store).unwrap();
    (enc, store)
}

fn small_corpus(seed: u64) -> contrastive_core::Corpus {
    corpus::generate(&contrastive_core::CorpusSpec {
        seed,
        n_groups: 3,
        items_per_group: 3,
        input_dim: 6,
        distractor_dim: 2,
        eval_groups: 3,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn encoder_distillation_gradient() {
    for seed in 0..20 {
        let c = small_corpus(seed);
        let items: Vec<_> = c.text_items().into_iter().take(6).collect();
        let mut r = rng(400 + seed);
        let teacher = unit_rows(&mut r, items.len(), 7);
        let (enc, store) = small_encoder(seed, 6);
        let objective = DistillObjective {
            teacher: &teacher,
            tau: 0.1,
            numerator: KlNumerator::Pairwise,
        };
        let report = finite_difference_check(
            |tape, st| {
                let e = enc.forward(tape, st, &items)?;
                objective.loss(tape, e, &())
            },
            &store,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn encoder_contrastive_gradient_with_fixed_mining() {
    let miner = MinerConfig {
        k: 3,
        tau: 0.2,
        ..Default::default()
    };
    for seed in 0..20 {
        let c = small_corpus(seed);
        let (batch, layout) = contrastive_batch(&c, &[0, 1, 2, 3, 4]).unwrap();
        let (enc, store) = small_encoder(seed, 6);
        let objective = ContrastiveObjective {
            layout: &layout,
            miner: &miner,
            mode: NegativeMode::Hard,
            seed,
        };
        // mining is discrete; freeze it at the unperturbed point
        let e = enc.encode(&store, &batch.items).unwrap();
        let plan = objective.plan(e.matrix()).unwrap();
        let report = finite_difference_check(
            |tape, st| {
                let e = enc.forward(tape, st, &batch.items)?;
                objective.loss(tape, e, &plan)
            },
            &store,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_relative_error);

        let mut via_step = store.clone();
        via_step.zero_grad();
        full_batch_step(&enc, &mut via_step, &batch, &objective).unwrap();
        let mut direct = store.clone();
        direct.zero_grad();
        let mut tape = Tape::new();
        let e = enc.forward(&mut tape, &direct, &batch.items).unwrap();
        let loss = objective.loss(&mut tape, e, &plan).unwrap();
        tape.backward(loss, &mut direct).unwrap();
        assert_eq!(via_step.max_grad_diff(&direct), 0.0);
    }
}

#[test]
fn teacher_side_is_constant() {
    let mut r = rng(9);
    let teacher: Matrix = unit_rows(&mut r, 4, 3);
    let mut store = ParamStore::new();
    let s = store.add("s", unit_rows(&mut r, 4, 3), true);
    let mut tape = Tape::new();
    let e = tape.param(&store, s);
    let loss = kl_distillation_loss(&mut tape, e, &teacher, 0.5, KlNumerator::Pairwise).unwrap();
    let grads = tape.backward(loss, &mut store).unwrap();
    assert!(grads.get(e).is_some());
    assert!(store.iter().all(|p| p.name == "s"));
}
