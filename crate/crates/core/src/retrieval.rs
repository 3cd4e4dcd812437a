//! Exhaustive cosine ranking and Precision@k / Recall@k.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::corpus::EvalCorpus;
use crate::encoder::{EmbeddingBatch, Encoder};
use crate::error::{Error, Result};
use crate::matrix::dot;

/// Candidate indices by descending cosine, ties by ascending index.
pub fn rank_candidates(query: &[f64], candidates: &EmbeddingBatch) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if query.len() != candidates.dim() {
        return Err(Error::dim(candidates.dim(), query.len(), "query dimension"));
    }
    let sims: Vec<f64> = candidates.matrix().iter_rows().map(|c| dot(query, c)).collect();
    Ok(rank_scores(&sims))
}

pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTask {
    pub queries: EmbeddingBatch,
    pub candidates: EmbeddingBatch,
    pub relevance: BTreeMap<String, BTreeSet<String>>,
}

impl RetrievalTask {
    pub fn new(
        queries: EmbeddingBatch,
        candidates: EmbeddingBatch,
        relevance: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let present: BTreeSet<&str> = candidates.ids().iter().map(String::as_str).collect();
        for q in queries.ids() {
            let rel = relevance.get(q).ok_or_else(|| Error::MissingPositive {
                query: q.clone(),
                positive: String::new(),
            })?;
            if !rel.iter().any(|r| present.contains(r.as_str())) {
                return Err(Error::MissingPositive {
                    query: q.clone(),
                    positive: rel.iter().next().cloned().unwrap_or_default(),
                });
            }
        }
        Ok(Self {
            queries,
            candidates,
            relevance,
        })
    }

    /// Ranked candidate indices for every query.
    pub fn rankings(&self) -> Result<Vec<Vec<usize>>> {
        (0..self.queries.len())
            .map(|i| rank_candidates(self.queries.row(i), &self.candidates))
            .collect()
    }

    fn hits(&self, rankings: &[Vec<usize>], k: usize) -> Result<Vec<(usize, usize)>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if k > self.candidates.len() {
            return Err(Error::KExceedsCandidates {
                k,
                candidates: self.candidates.len(),
            });
        }
        Ok(rankings
            .iter()
            .zip(self.queries.ids())
            .map(|(ranked, q)| {
                let rel = &self.relevance[q];
                let hit = ranked[..k]
                    .iter()
                    .filter(|&&c| rel.contains(&self.candidates.ids()[c]))
                    .count();
                (hit, rel.len())
            })
            .collect())
    }

    pub fn precision_at_k(&self, rankings: &[Vec<usize>], k: usize) -> Result<f64> {
        let hits = self.hits(rankings, k)?;
        Ok(mean(hits.iter().map(|&(h, _)| h as f64 / k as f64)))
    }

    pub fn recall_at_k(&self, rankings: &[Vec<usize>], k: usize) -> Result<f64> {
        let hits = self.hits(rankings, k)?;
        Ok(mean(hits.iter().map(|&(h, r)| h as f64 / r as f64)))
    }

    pub fn report(&self, ks: &[usize]) -> Result<RetrievalReport> {
        let rankings = self.rankings()?;
        let mut precision_at = BTreeMap::new();
        let mut recall_at = BTreeMap::new();
        for &k in ks {
            precision_at.insert(k, self.precision_at_k(&rankings, k)?);
            recall_at.insert(k, self.recall_at_k(&rankings, k)?);
        }
        let ranked = self
            .queries
            .ids()
            .iter()
            .zip(&rankings)
            .map(|(q, r)| {
                let ids = r.iter().map(|&c| self.candidates.ids()[c].clone()).collect();
                (q.clone(), ids)
            })
            .collect();
        Ok(RetrievalReport {
            queries: self.queries.len(),
            candidates: self.candidates.len(),
            ranked,
            precision_at,
            recall_at,
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalReport {
    pub queries: usize,
    pub candidates: usize,
    /// Candidate ids per query id, best first.
    pub ranked: BTreeMap<String, Vec<String>>,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
}

impl RetrievalReport {
    pub fn precision_at_1(&self) -> f64 {
        self.precision_at.get(&1).copied().unwrap_or(f64::NAN)
    }
}

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Encodes the held-out task with the given parameters and scores it. Fused
/// candidates are encoded per segment and combined by normalized summation.
pub fn evaluate_checkpoint(
    encoder: &Encoder,
    store: &ParamStore,
    eval: &EvalCorpus,
    ks: &[usize],
) -> Result<RetrievalReport> {
    let queries = encoder.encode(store, &eval.queries)?;
    let candidates = encoder.encode(store, &eval.candidates)?;
    let task = RetrievalTask::new(queries, candidates, eval.relevance.clone())?;
    let ks: Vec<usize> = ks
        .iter()
        .copied()
        .filter(|&k| k <= task.candidates.len())
        .collect();
    task.report(&ks)
}

/// Standard deviation of a binomial proportion `p` estimated from `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
