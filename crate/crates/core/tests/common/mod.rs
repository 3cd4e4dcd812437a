#![allow(dead_code)]

use contrastive_core::{EmbeddingBatch, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let row = m.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..n * d).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(n, d, data).unwrap()
}

pub fn batch(m: Matrix) -> EmbeddingBatch {
    let ids = (0..m.rows()).map(|i| format!("e{i}")).collect();
    EmbeddingBatch::new(ids, m).unwrap()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}
