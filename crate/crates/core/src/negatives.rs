//! False-negative filtering and in-batch negative selection.

use std::cmp::Ordering;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::check_tau;
use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinerConfig {
    /// Margin added to the query-positive cosine to form the filter threshold.
    pub beta: f64,
    /// Negatives per query.
    pub k: usize,
    pub tau: f64,
    /// Whether the positives of other queries in the batch may serve as
    /// negatives.
    pub other_positives_eligible: bool,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            k: 8,
            tau: 0.05,
            other_positives_eligible: true,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("miner k must be >= 1".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        check_tau(self.tau)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    /// Most similar eligible candidates.
    #[default]
    Hard,
    /// Least similar eligible candidates.
    Easy,
    /// Uniform draw without replacement from the eligible candidates.
    Random,
}

impl NegativeMode {
    pub const ALL: [NegativeMode; 3] = [NegativeMode::Easy, NegativeMode::Random, NegativeMode::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeMode::Hard => "hard",
            NegativeMode::Easy => "easy",
            NegativeMode::Random => "random",
        }
    }
}

impl FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(NegativeMode::Hard),
            "easy" => Ok(NegativeMode::Easy),
            "random" => Ok(NegativeMode::Random),
            other => Err(Error::ModeUnknown(other.to_string())),
        }
    }
}

impl std::fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn false_negative_threshold(sim_q_pos: f64, beta: f64) -> f64 {
    sim_q_pos + beta
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    Ok(())
}

/// Every non-positive index whose similarity strictly exceeds `alpha`, in
/// ascending order.
pub fn filter_false_negatives(sims: &[f64], positive_idx: usize, alpha: f64) -> Result<Vec<usize>> {
    check_index(positive_idx, sims.len())?;
    Ok(sims
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != positive_idx && s > alpha)
        .map(|(j, _)| j)
        .collect())
}

/// Descending similarity, ascending index on ties.
fn by_rank(sims: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b))
}

/// Repeats `ranked` cyclically until it has `k` entries.
fn fill_cyclic(ranked: &[usize], k: usize) -> Vec<usize> {
    ranked.iter().copied().cycle().take(k).collect()
}

fn eligible(n: usize, excluded: &[bool]) -> Vec<usize> {
    (0..n).filter(|&j| !excluded[j]).collect()
}

fn exclusion_mask(n: usize, positive_idx: usize, filtered: &[usize]) -> Result<Vec<bool>> {
    check_index(positive_idx, n)?;
    let mut mask = vec![false; n];
    mask[positive_idx] = true;
    for &j in filtered {
        check_index(j, n)?;
        mask[j] = true;
    }
    Ok(mask)
}

/// The `k` most similar eligible candidates, descending, ties by ascending
/// index. When fewer than `k` are eligible the ranked list is repeated
/// cyclically up to length `k`.
pub fn sample_hard_negatives(
    sims: &[f64],
    positive_idx: usize,
    filtered: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    let mask = exclusion_mask(sims.len(), positive_idx, filtered)?;
    let pool = eligible(sims.len(), &mask);
    if pool.is_empty() {
        return Err(Error::NoEligibleNegatives { query: 0 });
    }
    Ok(select(sims, pool, k, NegativeMode::Hard, None))
}

fn select(
    sims: &[f64],
    mut pool: Vec<usize>,
    k: usize,
    mode: NegativeMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<usize> {
    match mode {
        NegativeMode::Hard => {
            let cmp = by_rank(sims);
            if pool.len() > k {
                pool.select_nth_unstable_by(k - 1, &cmp);
                pool.truncate(k);
            }
            pool.sort_unstable_by(&cmp);
        }
        NegativeMode::Easy => {
            let cmp = |a: &usize, b: &usize| sims[*a].total_cmp(&sims[*b]).then(a.cmp(b));
            if pool.len() > k {
                pool.select_nth_unstable_by(k - 1, cmp);
                pool.truncate(k);
            }
            pool.sort_unstable_by(cmp);
        }
        NegativeMode::Random => {
            let rng = rng.expect("random mode needs an rng");
            let take = k.min(pool.len());
            pool.partial_shuffle(rng, take);
            pool.truncate(take);
        }
    }
    fill_cyclic(&pool, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedQuery {
    pub positive: usize,
    pub alpha: f64,
    /// Filtered false-negative candidates, ascending.
    pub filtered: Vec<usize>,
    /// Exactly `k` negatives.
    pub negatives: Vec<usize>,
    pub duplication_count: usize,
    /// Set by [`mine_for_training`] when nothing was eligible; `negatives` is
    /// then empty.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerStats {
    pub queries: usize,
    pub candidates: usize,
    /// Percent of queries with at least one filtered candidate.
    pub false_neg_pct: f64,
    /// `100 * k / candidates`.
    pub hard_neg_pct: f64,
    /// Fraction of selected negatives that are duplicates.
    pub duplication_rate: f64,
    /// Queries left without any eligible negative.
    pub skipped_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedBatch {
    pub queries: Vec<MinedQuery>,
    pub stats: MinerStats,
}

pub fn hard_neg_pct(k: usize, candidates: usize) -> Result<f64> {
    if candidates == 0 {
        return Err(Error::EmptyCandidates);
    }
    Ok((100 * k) as f64 / candidates as f64)
}

/// Hard-mode mining over shared in-batch candidates.
pub fn mine_batch(
    queries: &EmbeddingBatch,
    candidates: &EmbeddingBatch,
    positives: &[usize],
    config: &MinerConfig,
) -> Result<MinedBatch> {
    mine_with_mode(
        queries.matrix(),
        candidates.matrix(),
        positives,
        config,
        NegativeMode::Hard,
        0,
    )
}

/// Mines negatives for every query row of `queries` against the rows of
/// `candidates`. `positives[i]` is the candidate row of query `i`'s positive.
/// `seed` drives the random mode only.
pub fn mine_with_mode(
    queries: &Matrix,
    candidates: &Matrix,
    positives: &[usize],
    config: &MinerConfig,
    mode: NegativeMode,
    seed: u64,
) -> Result<MinedBatch> {
    mine_impl(queries, candidates, positives, config, mode, seed, false)
}

/// Like [`mine_with_mode`], but a query whose candidates are all excluded is
/// marked `skipped` instead of failing the batch.
pub fn mine_for_training(
    queries: &Matrix,
    candidates: &Matrix,
    positives: &[usize],
    config: &MinerConfig,
    mode: NegativeMode,
    seed: u64,
) -> Result<MinedBatch> {
    mine_impl(queries, candidates, positives, config, mode, seed, true)
}

fn mine_impl(
    queries: &Matrix,
    candidates: &Matrix,
    positives: &[usize],
    config: &MinerConfig,
    mode: NegativeMode,
    seed: u64,
    skip_unminable: bool,
) -> Result<MinedBatch> {
    config.validate()?;
    let m = candidates.rows();
    if m == 0 {
        return Err(Error::EmptyCandidates);
    }
    if queries.rows() != positives.len() {
        return Err(Error::dim(queries.rows(), positives.len(), "positive index map"));
    }
    if queries.cols() != candidates.cols() {
        return Err(Error::dim(
            queries.cols(),
            candidates.cols(),
            "candidate dimension",
        ));
    }
    for &p in positives {
        check_index(p, m)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len());
    let mut with_filtered = 0usize;
    let mut duplicated = 0usize;
    let mut skipped = 0usize;
    let mut sims = vec![0.0; m];
    for (qi, &pos) in positives.iter().enumerate() {
        let q = queries.row(qi);
        for (j, s) in sims.iter_mut().enumerate() {
            *s = dot(q, candidates.row(j));
        }
        let alpha = false_negative_threshold(sims[pos], config.beta);
        let filtered = filter_false_negatives(&sims, pos, alpha)?;
        let mut mask = exclusion_mask(m, pos, &filtered)?;
        if !config.other_positives_eligible {
            for &p in positives {
                mask[p] = true;
            }
        }
        let pool = eligible(m, &mask);
        with_filtered += usize::from(!filtered.is_empty());
        if pool.is_empty() {
            if !skip_unminable {
                return Err(Error::NoEligibleNegatives { query: qi });
            }
            skipped += 1;
            out.push(MinedQuery {
                positive: pos,
                alpha,
                filtered,
                negatives: Vec::new(),
                duplication_count: 0,
                skipped: true,
            });
            continue;
        }
        let duplication_count = config.k.saturating_sub(pool.len());
        let negatives = select(&sims, pool, config.k, mode, Some(&mut rng));
        duplicated += duplication_count;
        out.push(MinedQuery {
            positive: pos,
            alpha,
            filtered,
            negatives,
            duplication_count,
            skipped: false,
        });
    }

    let nq = positives.len();
    let stats = MinerStats {
        queries: nq,
        candidates: m,
        false_neg_pct: if nq == 0 {
            0.0
        } else {
            100.0 * with_filtered as f64 / nq as f64
        },
        hard_neg_pct: hard_neg_pct(config.k, m)?,
        duplication_rate: if nq == skipped {
            0.0
        } else {
            duplicated as f64 / ((nq - skipped) * config.k) as f64
        },
        skipped_queries: skipped,
    };
    Ok(MinedBatch { queries: out, stats })
}
