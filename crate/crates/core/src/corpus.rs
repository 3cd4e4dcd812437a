//! Synthetic clustered corpora and their line-delimited file formats.
//!
//! Every group has a text centroid and an image centroid in the leading
//! `input_dim - distractor_dim` feature dimensions. The image centroid
//! shares a `modality_overlap` fraction of its variance with the text one.
//! Each position of an item is its centroid plus Gaussian noise; the trailing
//! `distractor_dim` dimensions carry only noise, amplified by
//! `distractor_scale`, which swamps the group signal for an untrained
//! encoder.
//!
//! Each pair is a text query and a positive candidate (image or fused) from
//! the same group. A planted false negative copies its pair's positive and
//! moves it a tenth of the positive's noise back toward the centroid, so it
//! sits `noise_scale / 10` away from the positive on the side of its group.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingBatch, ItemRecord, Modality};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance for the unit-norm check applied to embedding files on read.
pub const FILE_UNIT_NORM_TOL: f64 = 1e-6;

const CENTROID_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_groups: usize,
    /// Training pairs per group.
    pub items_per_group: usize,
    pub input_dim: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub noise_scale: f64,
    /// Fraction of pairs that get a planted false negative.
    pub false_negative_rate: f64,
    /// Fraction of positive candidates that are fused text+image items; the
    /// rest are image-only.
    pub fused_fraction: f64,
    pub distractor_dim: usize,
    pub distractor_scale: f64,
    pub modality_overlap: f64,
    /// Groups represented in the retrieval task, one candidate each.
    pub eval_groups: usize,
    /// Held-out text queries per group for the retrieval task.
    pub eval_queries_per_group: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_groups: 64,
            items_per_group: 128,
            input_dim: 64,
            seq_len_min: 1,
            seq_len_max: 4,
            noise_scale: 0.8,
            false_negative_rate: 0.2,
            fused_fraction: 0.5,
            distractor_dim: 16,
            distractor_scale: 8.0,
            modality_overlap: 0.8,
            eval_groups: 64,
            eval_queries_per_group: 32,
        }
    }
}

impl CorpusSpec {
    pub fn signal_dim(&self) -> usize {
        self.input_dim.saturating_sub(self.distractor_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_groups == 0 || self.items_per_group == 0 {
            return bad("n_groups and items_per_group must be >= 1".into());
        }
        if self.eval_groups > self.n_groups {
            return bad(format!(
                "eval_groups {} exceeds n_groups {}",
                self.eval_groups, self.n_groups
            ));
        }
        if self.input_dim == 0 || self.distractor_dim >= self.input_dim {
            return bad(format!(
                "need input_dim >= 1 and distractor_dim < input_dim, got {} and {}",
                self.input_dim, self.distractor_dim
            ));
        }
        if self.seq_len_min == 0 || self.seq_len_min > self.seq_len_max {
            return bad(format!(
                "sequence length range {}..={} is empty or starts at 0",
                self.seq_len_min, self.seq_len_max
            ));
        }
        for (name, v) in [
            ("false_negative_rate", self.false_negative_rate),
            ("fused_fraction", self.fused_fraction),
            ("modality_overlap", self.modality_overlap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("distractor_scale", self.distractor_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub query: ItemRecord,
    pub positive: String,
    pub is_false_negative_planted: bool,
    /// Id of the planted false-negative item, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_negative: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    /// Candidate items: positives and planted false negatives.
    pub items: Vec<ItemRecord>,
    pub pairs: Vec<PairRecord>,
}

impl Corpus {
    pub fn new(items: Vec<ItemRecord>, pairs: Vec<PairRecord>) -> Result<Self> {
        let corpus = Self { items, pairs };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        for pair in &self.pairs {
            for referenced in std::iter::once(&pair.positive).chain(&pair.false_negative) {
                if !ids.contains(referenced.as_str()) {
                    return Err(Error::MissingPositive {
                        query: pair.query.id.clone(),
                        positive: referenced.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.as_str(), i))
            .collect()
    }

    /// Text items used for distillation: every pair's query.
    pub fn text_items(&self) -> Vec<ItemRecord> {
        self.pairs
            .iter()
            .map(|p| p.query.clone())
            .filter(|q| q.modality == Modality::Text)
            .collect()
    }

    pub fn planted_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_false_negative_planted).count()
    }
}

/// Held-out retrieval task: queries, a shared candidate pool and the relevant
/// candidates of every query.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCorpus {
    pub queries: Vec<ItemRecord>,
    pub candidates: Vec<ItemRecord>,
    pub relevance: BTreeMap<String, BTreeSet<String>>,
}

impl EvalCorpus {
    /// Pair queries against all corpus items, each relevant to its positive.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let relevance = corpus
            .pairs
            .iter()
            .map(|p| (p.query.id.clone(), BTreeSet::from([p.positive.clone()])))
            .collect();
        Self {
            queries: corpus.pairs.iter().map(|p| p.query.clone()).collect(),
            candidates: corpus.items.clone(),
            relevance,
        }
    }
}

struct Centroids {
    text: Vec<Vec<f64>>,
    image: Vec<Vec<f64>>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn centroids(spec: &CorpusSpec) -> Centroids {
    let mut rng = rng_for(spec.seed, CENTROID_STREAM);
    let s = spec.signal_dim();
    let (a, b) = (spec.modality_overlap.sqrt(), (1.0 - spec.modality_overlap).sqrt());
    let mut text = Vec::with_capacity(spec.n_groups);
    let mut image = Vec::with_capacity(spec.n_groups);
    for _ in 0..spec.n_groups {
        let t = gaussian(&mut rng, s);
        let u = gaussian(&mut rng, s);
        image.push(t.iter().zip(&u).map(|(t, u)| a * t + b * u).collect());
        text.push(t);
    }
    Centroids { text, image }
}

struct Sampler<'a> {
    spec: &'a CorpusSpec,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn seq_len(&mut self) -> usize {
        self.rng
            .random_range(self.spec.seq_len_min..=self.spec.seq_len_max)
    }

    fn position(&mut self, centroid: &[f64]) -> Vec<f64> {
        let noise = self.spec.noise_scale;
        let mut v: Vec<f64> = centroid
            .iter()
            .map(|c| c + noise * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dn = noise * self.spec.distractor_scale;
        v.extend((0..self.spec.distractor_dim).map(|_| dn * self.rng.sample::<f64, _>(StandardNormal)));
        v
    }

    fn segment(&mut self, centroid: &[f64]) -> Vec<Vec<f64>> {
        let len = self.seq_len();
        (0..len).map(|_| self.position(centroid)).collect()
    }

    fn text(&mut self, id: String, group: &str, c: &Centroids, g: usize) -> ItemRecord {
        ItemRecord::new(id, Modality::Text, self.segment(&c.text[g])).with_group(group)
    }

    fn candidate(&mut self, id: String, group: &str, c: &Centroids, g: usize) -> ItemRecord {
        if self.rng.random_bool(self.spec.fused_fraction) {
            let mut features = self.segment(&c.text[g]);
            let split = features.len();
            features.extend(self.segment(&c.image[g]));
            ItemRecord::new(id, Modality::Fused, features)
                .with_group(group)
                .with_split(split)
        } else {
            ItemRecord::new(id, Modality::Image, self.segment(&c.image[g])).with_group(group)
        }
    }
}

/// Moves every position a tenth of its noise toward the segment centroid.
fn near_copy(positive: &ItemRecord, id: String, c: &Centroids, g: usize) -> ItemRecord {
    let segments = positive.segments();
    let mut features = positive.features.clone();
    for (s, range) in segments.iter().enumerate() {
        let centroid = match (positive.modality, s) {
            (Modality::Fused, 0) | (Modality::Text, _) => &c.text[g],
            _ => &c.image[g],
        };
        for f in &mut features[range.clone()] {
            for (j, x) in f.iter_mut().enumerate() {
                let base = centroid.get(j).copied().unwrap_or(0.0);
                *x -= 0.1 * (*x - base);
            }
        }
    }
    ItemRecord {
        id,
        features,
        ..positive.clone()
    }
}

fn group_label(g: usize) -> String {
    format!("g{g}")
}

/// Deterministic training corpus for `spec`.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let c = centroids(spec);
    let mut s = Sampler {
        spec,
        rng: rng_for(spec.seed, TRAIN_STREAM),
    };

    let n_pairs = spec.n_groups * spec.items_per_group;
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut s.rng);
    let quota = (spec.false_negative_rate * n_pairs as f64).round() as usize;
    let mut planted = vec![false; n_pairs];
    for &p in &order[..quota] {
        planted[p] = true;
    }

    let mut items = Vec::with_capacity(n_pairs + quota);
    let mut pairs = Vec::with_capacity(n_pairs);
    for g in 0..spec.n_groups {
        let group = group_label(g);
        for j in 0..spec.items_per_group {
            let p = g * spec.items_per_group + j;
            let query = s.text(format!("q{g}-{j}"), &group, &c, g);
            let positive = s.candidate(format!("c{g}-{j}"), &group, &c, g);
            let false_negative = planted[p].then(|| {
                let fnr = near_copy(&positive, format!("fn{g}-{j}"), &c, g);
                let id = fnr.id.clone();
                (fnr, id)
            });
            pairs.push(PairRecord {
                query,
                positive: positive.id.clone(),
                is_false_negative_planted: planted[p],
                false_negative: false_negative.as_ref().map(|(_, id)| id.clone()),
            });
            items.push(positive);
            if let Some((fnr, _)) = false_negative {
                items.push(fnr);
            }
        }
    }
    Corpus::new(items, pairs)
}

/// Held-out retrieval task over the first `eval_groups` groups: one fresh
/// candidate per group and `eval_queries_per_group` fresh text queries per
/// group.
pub fn generate_eval(spec: &CorpusSpec) -> Result<EvalCorpus> {
    spec.validate()?;
    let c = centroids(spec);
    let mut s = Sampler {
        spec,
        rng: rng_for(spec.seed, EVAL_STREAM),
    };
    let mut queries = Vec::new();
    let mut candidates = Vec::new();
    let mut relevance = BTreeMap::new();
    for g in 0..spec.eval_groups {
        let group = group_label(g);
        let cand = s.candidate(format!("eval-c{g}"), &group, &c, g);
        for j in 0..spec.eval_queries_per_group {
            let q = s.text(format!("eval-q{g}-{j}"), &group, &c, g);
            relevance.insert(q.id.clone(), BTreeSet::from([cand.id.clone()]));
            queries.push(q);
        }
        candidates.push(cand);
    }
    Ok(EvalCorpus {
        queries,
        candidates,
        relevance,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Item(ItemRecord),
    Pair(PairRecord),
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Items first, then pairs, one JSON record per line.
pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut emit = |line: &Line| -> Result<()> {
        serde_json::to_writer(&mut w, line).expect("corpus records serialize");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    for item in &corpus.items {
        emit(&Line::Item(item.clone()))?;
    }
    for pair in &corpus.pairs {
        emit(&Line::Pair(pair.clone()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut items = Vec::new();
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Line = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        match record {
            Line::Item(it) => items.push(it),
            Line::Pair(p) => pairs.push(p),
        }
    }
    Corpus::new(items, pairs)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    n: usize,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
}

/// Header line, then one row per line of space-separated values printed
/// with 17 significant digits.
pub fn write_embeddings(path: impl AsRef<Path>, batch: &EmbeddingBatch) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let header = EmbeddingHeader {
        n: batch.len(),
        d: batch.dim(),
        ids: Some(batch.ids().to_vec()),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header).expect("header serializes");
    w.write_all(b"\n").map_err(io)?;
    for row in batch.matrix().iter_rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    let path = path.as_ref();
    let mut lines = open(path)?.lines();
    let malformed = |line: usize, message: String| Error::MalformedRecord { line, message };
    let header_line = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: EmbeddingHeader =
        serde_json::from_str(&header_line).map_err(|e| malformed(1, e.to_string()))?;

    let mut data = Vec::with_capacity(header.n * header.d);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(i + 2, e.to_string()))?;
        if values.len() != header.d {
            return Err(Error::dim(
                header.d,
                values.len(),
                format!("values on line {}", i + 2),
            ));
        }
        data.extend(values);
        rows += 1;
    }
    if rows != header.n {
        return Err(Error::dim(header.n, rows, "embedding rows"));
    }
    let ids = match header.ids {
        Some(ids) if ids.len() == header.n => ids,
        Some(ids) => return Err(Error::dim(header.n, ids.len(), "embedding ids")),
        None => (0..header.n).map(|i| i.to_string()).collect(),
    };
    let matrix = Matrix::from_vec(header.n, header.d, data)?;
    EmbeddingBatch::with_tolerance(ids, matrix, FILE_UNIT_NORM_TOL)
}
