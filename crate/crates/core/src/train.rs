//! Training loops for both stages.
//!
//! Stage 1 distils the teacher's in-batch similarity distributions into the
//! student on text items. Stage 2 trains on query/positive pairs with in-batch
//! negatives mined on the current embeddings. Both loops record one
//! [`StepRecord`] per step and can run through gradient caching.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::corpus::Corpus;
use crate::distill::{kl_distillation_loss, DistillConfig, KlNumerator};
use crate::encoder::{EmbeddingBatch, Encoder, ItemRecord, TeacherEncoder};
use crate::error::{Error, Result};
use crate::gradcache::{cached_step, full_batch_step, BatchObjective, CachePlan, StepBatch, StepOutput};
use crate::infonce::batched_infonce;
use crate::matrix::Matrix;
use crate::negatives::{mine_for_training, MinedBatch, MinerConfig, NegativeMode};
use crate::optim::{Optimizer, OptimizerConfig};

const STAGE1_STREAM: u64 = 11;
const STAGE2_STREAM: u64 = 12;

/// One metrics line. Mining fields are `None` for distillation steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Global gradient L2 norm before clipping.
    pub grad_norm: f64,
    pub false_neg_pct: Option<f64>,
    pub hard_neg_pct: Option<f64>,
    pub duplication_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Examples per gradient-cache sub-batch; `None` trains on the whole
    /// batch graph at once.
    pub sub_batch: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            sub_batch: None,
        }
    }
}

/// Source of frozen teacher embeddings.
pub trait TeacherSource {
    fn teacher_embeddings(&self, items: &[ItemRecord]) -> Result<EmbeddingBatch>;
}

impl TeacherSource for TeacherEncoder {
    fn teacher_embeddings(&self, items: &[ItemRecord]) -> Result<EmbeddingBatch> {
        self.encode(items)
    }
}

/// Precomputed teacher rows looked up by item id.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(batch: &EmbeddingBatch) -> Self {
        let rows = batch
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), batch.row(i).to_vec()))
            .collect();
        Self {
            dim: batch.dim(),
            rows,
        }
    }
}

impl TeacherSource for EmbeddingTable {
    fn teacher_embeddings(&self, items: &[ItemRecord]) -> Result<EmbeddingBatch> {
        let mut data = Vec::with_capacity(items.len() * self.dim);
        for it in items {
            let row = self
                .rows
                .get(&it.id)
                .ok_or_else(|| Error::MissingEmbedding(it.id.clone()))?;
            data.extend_from_slice(row);
        }
        let ids = items.iter().map(|i| i.id.clone()).collect();
        EmbeddingBatch::new(ids, Matrix::from_vec(items.len(), self.dim, data)?)
    }
}

pub struct DistillObjective<'a> {
    pub teacher: &'a Matrix,
    pub tau: f64,
    pub numerator: KlNumerator,
}

impl BatchObjective for DistillObjective<'_> {
    type Plan = ();

    fn plan(&self, _: &Matrix) -> Result<()> {
        Ok(())
    }

    fn loss(&self, tape: &mut Tape, embeddings: Var, _: &()) -> Result<Var> {
        kl_distillation_loss(tape, embeddings, self.teacher, self.tau, self.numerator)
    }
}

/// Row layout of a stage-2 batch: which rows are queries and which are the
/// shared candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastiveLayout {
    pub query_rows: Vec<usize>,
    pub candidate_rows: Vec<usize>,
    /// Index into `candidate_rows` of each query's positive.
    pub positives: Vec<usize>,
}

pub struct ContrastiveObjective<'a> {
    pub layout: &'a ContrastiveLayout,
    pub miner: &'a MinerConfig,
    pub mode: NegativeMode,
    pub seed: u64,
}

impl BatchObjective for ContrastiveObjective<'_> {
    type Plan = MinedBatch;

    fn plan(&self, e: &Matrix) -> Result<MinedBatch> {
        let q = e.select_rows(&self.layout.query_rows);
        let c = e.select_rows(&self.layout.candidate_rows);
        mine_for_training(&q, &c, &self.layout.positives, self.miner, self.mode, self.seed)
    }

    /// Mean InfoNCE over the queries that received negatives. Zero when none
    /// did.
    fn loss(&self, tape: &mut Tape, embeddings: Var, mined: &MinedBatch) -> Result<Var> {
        let rows = &self.layout.candidate_rows;
        let mut queries = Vec::with_capacity(mined.queries.len());
        let mut pos = Vec::with_capacity(mined.queries.len());
        let mut negs = Vec::with_capacity(mined.queries.len());
        for (m, &q) in mined.queries.iter().zip(&self.layout.query_rows) {
            if m.skipped {
                continue;
            }
            queries.push(q);
            pos.push(rows[m.positive]);
            negs.push(m.negatives.iter().map(|&j| rows[j]).collect());
        }
        if queries.is_empty() {
            return Ok(tape.constant(Matrix::scalar(0.0)));
        }
        batched_infonce(tape, embeddings, &queries, &pos, &negs, self.miner.tau)
    }
}

/// Runs one step on `batch`, through the gradient cache when `sub_batch` is
/// set.
pub fn run_step<O: BatchObjective>(
    encoder: &Encoder,
    store: &mut ParamStore,
    batch: &StepBatch,
    objective: &O,
    sub_batch: Option<usize>,
) -> Result<StepOutput<O::Plan>> {
    match sub_batch {
        Some(sub) => {
            let plan = CachePlan::new(batch.examples(), sub.min(batch.examples()))?;
            cached_step(encoder, store, batch, objective, &plan)
        }
        None => full_batch_step(encoder, store, batch, objective),
    }
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, batch.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

pub fn stage1_train(
    encoder: &Encoder,
    store: &mut ParamStore,
    corpus: &Corpus,
    teacher: &dyn TeacherSource,
    config: &DistillConfig,
    settings: &TrainSettings,
) -> Result<Vec<StepRecord>> {
    config.validate()?;
    let texts = corpus.text_items();
    if texts.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let teacher_rows = teacher.teacher_embeddings(&texts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(STAGE1_STREAM);
    let mut opt = Optimizer::new(settings.optimizer.clone(), store)?;
    let mut trace = Vec::with_capacity(settings.steps);
    for step in 1..=settings.steps {
        let idx = sample_indices(&mut rng, texts.len(), config.batch_size);
        let items: Vec<ItemRecord> = idx.iter().map(|&i| texts[i].clone()).collect();
        let t = teacher_rows.matrix().select_rows(&idx);
        let objective = DistillObjective {
            teacher: &t,
            tau: config.tau,
            numerator: config.kl_numerator,
        };
        store.zero_grad();
        let out = run_step(
            encoder,
            store,
            &StepBatch::singletons(items),
            &objective,
            settings.sub_batch,
        )?;
        let grad_norm = opt.step(store);
        trace.push(StepRecord {
            step,
            loss: out.loss,
            grad_norm,
            false_neg_pct: None,
            hard_neg_pct: None,
            duplication_rate: None,
        });
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    /// Query/positive pairs per step.
    pub batch_size: usize,
    pub miner: MinerConfig,
    pub mode: NegativeMode,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            batch_size: 64,
            miner: MinerConfig::default(),
            mode: NegativeMode::Hard,
        }
    }
}

/// Items and layout for the given pairs: each pair contributes its query,
/// its positive and its planted false negative when present.
pub fn contrastive_batch(corpus: &Corpus, pair_indices: &[usize]) -> Result<(StepBatch, ContrastiveLayout)> {
    let index = corpus.index();
    let lookup = |id: &str, query: &str| {
        index
            .get(id)
            .map(|&i| corpus.items[i].clone())
            .ok_or_else(|| Error::MissingPositive {
                query: query.to_string(),
                positive: id.to_string(),
            })
    };
    let mut items = Vec::new();
    let mut spans = Vec::with_capacity(pair_indices.len());
    let mut layout = ContrastiveLayout {
        query_rows: Vec::new(),
        candidate_rows: Vec::new(),
        positives: Vec::new(),
    };
    for &p in pair_indices {
        let pair = &corpus.pairs[p];
        let start = items.len();
        layout.query_rows.push(items.len());
        items.push(pair.query.clone());
        layout.positives.push(layout.candidate_rows.len());
        layout.candidate_rows.push(items.len());
        items.push(lookup(&pair.positive, &pair.query.id)?);
        if let Some(fnid) = &pair.false_negative {
            layout.candidate_rows.push(items.len());
            items.push(lookup(fnid, &pair.query.id)?);
        }
        spans.push(start..items.len());
    }
    Ok((StepBatch { items, spans }, layout))
}

fn mining_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step as u64
}

pub fn stage2_train(
    encoder: &Encoder,
    store: &mut ParamStore,
    corpus: &Corpus,
    config: &Stage2Config,
    settings: &TrainSettings,
) -> Result<Vec<StepRecord>> {
    config.miner.validate()?;
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("stage-2 batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(STAGE2_STREAM);
    let mut opt = Optimizer::new(settings.optimizer.clone(), store)?;
    let mut trace = Vec::with_capacity(settings.steps);
    for step in 1..=settings.steps {
        let idx = sample_indices(&mut rng, corpus.pairs.len(), config.batch_size);
        let (batch, layout) = contrastive_batch(corpus, &idx)?;
        let objective = ContrastiveObjective {
            layout: &layout,
            miner: &config.miner,
            mode: config.mode,
            seed: mining_seed(settings.seed, step),
        };
        store.zero_grad();
        let out = run_step(encoder, store, &batch, &objective, settings.sub_batch)?;
        let grad_norm = opt.step(store);
        let stats = &out.plan.stats;
        trace.push(StepRecord {
            step,
            loss: out.loss,
            grad_norm,
            false_neg_pct: Some(stats.false_neg_pct),
            hard_neg_pct: Some(stats.hard_neg_pct),
            duplication_rate: Some(stats.duplication_rate),
        });
    }
    Ok(trace)
}

/// Planted false negatives caught by the filter at margin `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRecall {
    pub planted: usize,
    pub filtered: usize,
}

impl PlantedRecall {
    pub fn fraction(&self) -> f64 {
        if self.planted == 0 {
            0.0
        } else {
            self.filtered as f64 / self.planted as f64
        }
    }
}

/// For every pair with a planted copy, checks whether the filter built from
/// the query-positive similarity removes the copy. `embed` maps items to unit
/// embeddings.
pub fn planted_recall(
    corpus: &Corpus,
    embed: &dyn Fn(&[ItemRecord]) -> Result<EmbeddingBatch>,
    beta: f64,
) -> Result<PlantedRecall> {
    let planted: Vec<usize> = (0..corpus.pairs.len())
        .filter(|&i| corpus.pairs[i].false_negative.is_some())
        .collect();
    let mut recall = PlantedRecall {
        planted: planted.len(),
        filtered: 0,
    };
    if planted.is_empty() {
        return Ok(recall);
    }
    let (batch, layout) = contrastive_batch(corpus, &planted)?;
    let e = embed(&batch.items)?;
    let miner = MinerConfig {
        beta,
        k: 1,
        ..MinerConfig::default()
    };
    for (q, &pos) in layout.query_rows.iter().zip(&layout.positives) {
        let rows = [layout.candidate_rows[pos], layout.candidate_rows[pos + 1]];
        let cands = e.matrix().select_rows(&rows);
        let query = e.matrix().select_rows(&[*q]);
        let mined = mine_for_training(&query, &cands, &[0], &miner, NegativeMode::Hard, 0)?;
        recall.filtered += usize::from(mined.queries[0].filtered.contains(&1));
    }
    Ok(recall)
}

/// FalseNeg% of in-batch mining over the corpus pairs taken in order, in
/// consecutive batches of `batch_size` pairs.
pub fn corpus_false_neg_pct(
    corpus: &Corpus,
    embed: &dyn Fn(&[ItemRecord]) -> Result<EmbeddingBatch>,
    batch_size: usize,
    miner: &MinerConfig,
) -> Result<f64> {
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    let all: Vec<usize> = (0..corpus.pairs.len()).collect();
    for chunk in all.chunks(batch_size) {
        let (batch, layout) = contrastive_batch(corpus, chunk)?;
        let e = embed(&batch.items)?;
        let q = e.matrix().select_rows(&layout.query_rows);
        let c = e.matrix().select_rows(&layout.candidate_rows);
        let mined = mine_for_training(&q, &c, &layout.positives, miner, NegativeMode::Hard, 0)?;
        hit += mined.queries.iter().filter(|m| !m.filtered.is_empty()).count();
        total += mined.queries.len();
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// Trailing moving average of the loss with the given window; entry `i`
/// averages steps `max(0, i + 1 - window)..=i`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn losses(trace: &[StepRecord]) -> Vec<f64> {
    trace.iter().map(|r| r.loss).collect()
}

/// Mean pre-clip gradient norm over the 1-based step range `from..=to`.
pub fn mean_grad_norm(trace: &[StepRecord], from: usize, to: usize) -> f64 {
    let sel: Vec<f64> = trace
        .iter()
        .filter(|r| r.step >= from && r.step <= to)
        .map(|r| r.grad_norm)
        .collect();
    sel.iter().sum::<f64>() / sel.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_window() {
        let ma = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn records_serialize_with_nulls() {
        let r = StepRecord {
            step: 1,
            loss: 0.5,
            grad_norm: 2.0,
            false_neg_pct: None,
            hard_neg_pct: Some(12.5),
            duplication_rate: None,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"step":1,"loss":0.5,"grad_norm":2.0,"false_neg_pct":null,"hard_neg_pct":12.5,"duplication_rate":null}"#
        );
    }
}
