use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use contrastive_bench::Fixture;
use contrastive_core::distill::kl_distillation_loss;
use contrastive_core::gradcache::{cached_step, full_batch_step};
use contrastive_core::negatives::mine_with_mode;
use contrastive_core::train::{ContrastiveObjective, DistillObjective};
use contrastive_core::{CachePlan, KlNumerator, MinerConfig, NegativeMode, ParamStore, StepBatch, Tape};

fn encoder_forward(c: &mut Criterion) {
    let f = Fixture::new();
    let items = f.texts(64);
    c.bench_function("encode_64", |b| {
        b.iter(|| f.encoder.encode(&f.store, black_box(&items)).unwrap())
    });
}

fn kl_loss(c: &mut Criterion) {
    let f = Fixture::new();
    let items = f.texts(64);
    let teacher = f.teacher_rows(&items);
    let mut store = ParamStore::new();
    let student = store.add(
        "student",
        f.encoder.encode(&f.store, &items).unwrap().into_parts().1,
        true,
    );
    c.bench_function("kl_forward_backward_64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let e = tape.param(&store, student);
            let loss = kl_distillation_loss(&mut tape, e, &teacher, 0.05, KlNumerator::Pairwise).unwrap();
            black_box(tape.backward(loss, &mut store).unwrap())
        })
    });
}

fn mining(c: &mut Criterion) {
    let f = Fixture::new();
    let (batch, layout) = f.contrastive(64);
    let e = f.encoder.encode(&f.store, &batch.items).unwrap().into_parts().1;
    let q = e.select_rows(&layout.query_rows);
    let cands = e.select_rows(&layout.candidate_rows);
    let miner = MinerConfig::default();
    let mut group = c.benchmark_group("mine_64_queries");
    for mode in NegativeMode::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(mode), &mode, |b, &mode| {
            b.iter(|| mine_with_mode(&q, &cands, &layout.positives, &miner, mode, 7).unwrap())
        });
    }
    group.finish();
}

fn gradcache(c: &mut Criterion) {
    let f = Fixture::new();
    let items = f.texts(64);
    let teacher = f.teacher_rows(&items);
    let obj = DistillObjective {
        teacher: &teacher,
        tau: 0.05,
        numerator: KlNumerator::Pairwise,
    };
    let batch = StepBatch::singletons(items);
    let mut group = c.benchmark_group("distill_step_64");
    group.bench_function("full", |b| {
        b.iter(|| {
            let mut s = f.store.clone();
            full_batch_step(&f.encoder, &mut s, &batch, &obj).unwrap().loss
        })
    });
    for sub in [8, 32] {
        let plan = CachePlan::new(64, sub).unwrap();
        group.bench_with_input(BenchmarkId::new("cached", sub), &plan, |b, plan| {
            b.iter(|| {
                let mut s = f.store.clone();
                cached_step(&f.encoder, &mut s, &batch, &obj, plan).unwrap().loss
            })
        });
    }
    group.finish();

    let (batch, layout) = f.contrastive(64);
    let miner = MinerConfig::default();
    let obj = ContrastiveObjective {
        layout: &layout,
        miner: &miner,
        mode: NegativeMode::Hard,
        seed: 0,
    };
    c.bench_function("contrastive_step_64_cached_8", |b| {
        let plan = CachePlan::new(64, 8).unwrap();
        b.iter(|| {
            let mut s = f.store.clone();
            cached_step(&f.encoder, &mut s, &batch, &obj, &plan).unwrap().loss
        })
    });
}

criterion_group!(benches, encoder_forward, kl_loss, mining, gradcache);
criterion_main!(benches);
