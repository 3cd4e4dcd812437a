//! Toy student encoders and the frozen teacher surrogate.
//!
//! An item is a sequence of feature vectors. The encoder applies the same
//! stack of `tanh(x W + b)` layers at every position, takes the hidden state
//! of the final position, projects it to the embedding dimension and
//! L2-normalizes it. Fused (interleaved) items are encoded one segment at a
//! time and the segment embeddings are summed and re-normalized.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var, MIN_ROW_NORM};
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

/// Tolerance for the unit-norm invariant of [`EmbeddingBatch`].
pub const UNIT_NORM_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("encoder {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dim: 64,
            embed_dim: 32,
            depth: 1,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub modality: Modality,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Fused items only: the first `split` positions are the first segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
}

impl ItemRecord {
    pub fn new(id: impl Into<String>, modality: Modality, features: Vec<Vec<f64>>) -> Self {
        Self {
            id: id.into(),
            modality,
            features,
            group: None,
            split: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn with_split(mut self, split: usize) -> Self {
        self.split = Some(split);
        self
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidItem {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks the record invariants against an expected input dimension.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.features.is_empty() {
            return Err(self.invalid("feature sequence is empty"));
        }
        for f in &self.features {
            if f.len() != input_dim {
                return Err(Error::dim(
                    input_dim,
                    f.len(),
                    format!("feature vector of item {:?}", self.id),
                ));
            }
        }
        match (self.modality, self.split) {
            (Modality::Fused, Some(s)) if s >= 1 && s < self.features.len() => Ok(()),
            (Modality::Fused, _) => {
                Err(self.invalid("fused items need a split strictly inside the feature sequence"))
            }
            (_, Some(_)) => Err(self.invalid("only fused items carry a split")),
            (_, None) => Ok(()),
        }
    }

    /// The position ranges encoded independently: one for unimodal items,
    /// two for fused items.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        match self.split {
            Some(s) if self.modality == Modality::Fused => {
                vec![0..s, s..self.features.len()]
            }
            _ => std::iter::once(0..self.features.len()).collect(),
        }
    }
}

/// Row-normalized embeddings with their item ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    ids: Vec<String>,
    matrix: Matrix,
}

impl EmbeddingBatch {
    pub fn new(ids: Vec<String>, matrix: Matrix) -> Result<Self> {
        Self::with_tolerance(ids, matrix, UNIT_NORM_TOL)
    }

    pub(crate) fn with_tolerance(ids: Vec<String>, matrix: Matrix, tol: f64) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::dim(matrix.rows(), ids.len(), "embedding ids"));
        }
        for (row, n) in matrix.row_norms().into_iter().enumerate() {
            if !((n - 1.0).abs() <= tol) {
                return Err(Error::NonUnitRow { row, norm: n });
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, matrix })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(ids, self.matrix.select_rows(indices))
    }

    pub fn into_parts(self) -> (Vec<String>, Matrix) {
        (self.ids, self.matrix)
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

/// Student encoder: a handle onto parameters held in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<Affine>,
    projection: Affine,
}

impl Encoder {
    /// Registers freshly initialized parameters in `store`. Weights are drawn
    /// uniformly from `±1/sqrt(fan_in)` with the config seed; biases start at
    /// zero.
    pub fn init(config: EncoderConfig, store: &mut ParamStore) -> Result<Self> {
        Self::init_with(config, store, true)
    }

    fn init_with(config: EncoderConfig, store: &mut ParamStore, trainable: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut affine = |name: String, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let weight = store.add(
                format!("{name}.weight"),
                Matrix::from_vec(fan_in, fan_out, w).expect("weight shape"),
                trainable,
            );
            let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out), trainable);
            Affine { weight, bias }
        };
        let mut layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let fan_in = if i == 0 {
                config.input_dim
            } else {
                config.hidden_dim
            };
            layers.push(affine(format!("layer{i}"), fan_in, config.hidden_dim));
        }
        let projection = affine("projection".into(), config.hidden_dim, config.embed_dim);
        Ok(Self {
            config,
            layers,
            projection,
        })
    }

    /// Re-attaches an encoder to an existing store, e.g. one read from a
    /// checkpoint. Parameters are looked up by name and shape-checked.
    pub fn attach(config: EncoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let lookup = |name: &str, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::InvalidCheckpoint(format!("missing parameter {name}")))?;
            let shape = store.get(id).value.shape();
            if shape != (rows, cols) {
                return Err(Error::InvalidCheckpoint(format!(
                    "parameter {name} has shape {shape:?}, expected {:?}",
                    (rows, cols)
                )));
            }
            Ok(id)
        };
        let mut layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let fan_in = if i == 0 {
                config.input_dim
            } else {
                config.hidden_dim
            };
            layers.push(Affine {
                weight: lookup(&format!("layer{i}.weight"), fan_in, config.hidden_dim)?,
                bias: lookup(&format!("layer{i}.bias"), 1, config.hidden_dim)?,
            });
        }
        let projection = Affine {
            weight: lookup("projection.weight", config.hidden_dim, config.embed_dim)?,
            bias: lookup("projection.bias", 1, config.embed_dim)?,
        };
        Ok(Self {
            config,
            layers,
            projection,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.projection))
            .flat_map(|a| [a.weight, a.bias])
            .collect()
    }

    /// Records the forward pass on `tape` and returns the n x d embedding
    /// matrix, one unit row per item.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, items: &[ItemRecord]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut positions: Vec<f64> = Vec::new();
        let mut n_positions = 0;
        let mut last_positions = Vec::new();
        let mut groups = Vec::with_capacity(items.len());
        for item in items {
            item.validate(self.config.input_dim)?;
            let mut group = Vec::with_capacity(2);
            for seg in item.segments() {
                for f in &item.features[seg.clone()] {
                    positions.extend_from_slice(f);
                }
                n_positions += seg.len();
                group.push(last_positions.len());
                last_positions.push(n_positions - 1);
            }
            groups.push(group);
        }

        let x = Matrix::from_vec(n_positions, self.config.input_dim, positions)?;
        let mut h = tape.constant(x);
        for layer in &self.layers {
            h = affine(tape, store, *layer, h);
            h = tape.tanh(h);
        }
        let last = tape.gather_rows(h, &last_positions);
        let z = affine(tape, store, self.projection, last);
        let segment_embeddings = tape.row_l2_normalize(z)?;
        let summed = tape.sum_row_groups(segment_embeddings, &groups);
        tape.row_l2_normalize(summed).map_err(|e| match e {
            Error::ZeroRow { .. } => Error::ZeroSum,
            other => other,
        })
    }

    /// Gradient-free encoding.
    pub fn encode(&self, store: &ParamStore, items: &[ItemRecord]) -> Result<EmbeddingBatch> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, store, items)?;
        let ids = items.iter().map(|i| i.id.clone()).collect();
        EmbeddingBatch::new(ids, tape.value(out).clone())
    }
}

fn affine(tape: &mut Tape, store: &ParamStore, a: Affine, x: Var) -> Var {
    let w = tape.param(store, a.weight);
    let b = tape.param(store, a.bias);
    let xw = tape.matmul(x, w);
    tape.add_row_broadcast(xw, b)
}

/// Element-wise sum of two unit embeddings, re-normalized to unit length.
pub fn fuse_multimodal(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len(), "fused embedding dimension"));
    }
    for (row, v) in [a, b].into_iter().enumerate() {
        let n = norm(v);
        if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NonUnitRow { row, norm: n });
        }
    }
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    let n = norm(&sum);
    if n < MIN_ROW_NORM {
        return Err(Error::ZeroSum);
    }
    Ok(sum.into_iter().map(|x| x / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub seed: u64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    /// Length of the per-group offset added to the unit base embedding.
    pub group_offset: f64,
    /// Number of leading feature dimensions the base network reads; `None`
    /// reads all of them.
    #[serde(default)]
    pub visible_dims: Option<usize>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            hidden_dim: 128,
            embed_dim: 128,
            depth: 1,
            group_offset: 2.0,
            visible_dims: None,
        }
    }
}

/// Frozen teacher surrogate: a seeded random encoder whose unit output is
/// shifted by a group-dependent direction and re-normalized. Items without a
/// group label get no offset. With `visible_dims` set, the base network only
/// reads the leading feature dimensions. Its parameters are never trainable.
#[derive(Clone, Debug)]
pub struct TeacherEncoder {
    encoder: Encoder,
    store: ParamStore,
    config: TeacherConfig,
    input_dim: usize,
}

impl TeacherEncoder {
    pub fn new(config: &TeacherConfig, input_dim: usize) -> Result<Self> {
        let visible = config.visible_dims.unwrap_or(input_dim);
        if visible == 0 || visible > input_dim {
            return Err(Error::InvalidConfig(format!(
                "teacher visible_dims must lie in 1..={input_dim}, got {visible}"
            )));
        }
        let enc_config = EncoderConfig {
            input_dim: visible,
            hidden_dim: config.hidden_dim,
            embed_dim: config.embed_dim,
            depth: config.depth,
            seed: config.seed,
        };
        let mut store = ParamStore::new();
        let encoder = Encoder::init_with(enc_config, &mut store, false)?;
        Ok(Self {
            encoder,
            store,
            config: config.clone(),
            input_dim,
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    /// The frozen random base network, for comparisons against students.
    pub fn base(&self) -> (&Encoder, &ParamStore) {
        (&self.encoder, &self.store)
    }

    pub fn group_direction(&self, group: &str) -> Vec<f64> {
        let seed = self.config.seed ^ fnv1a(group.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.encoder.config().embed_dim;
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    pub fn encode(&self, items: &[ItemRecord]) -> Result<EmbeddingBatch> {
        let visible = self.encoder.config().input_dim;
        let base = if visible == self.input_dim {
            self.encoder.encode(&self.store, items)?
        } else {
            let mut cropped = Vec::with_capacity(items.len());
            for item in items {
                item.validate(self.input_dim)?;
                let mut c = item.clone();
                c.features.iter_mut().for_each(|f| f.truncate(visible));
                cropped.push(c);
            }
            self.encoder.encode(&self.store, &cropped)?
        };
        if self.config.group_offset == 0.0 {
            return Ok(base);
        }
        let (ids, mut m) = base.into_parts();
        for (i, item) in items.iter().enumerate() {
            let Some(group) = &item.group else { continue };
            let dir = self.group_direction(group);
            let row = m.row_mut(i);
            for (x, g) in row.iter_mut().zip(&dir) {
                *x += self.config.group_offset * g;
            }
            let n = norm(row);
            if n < MIN_ROW_NORM {
                return Err(Error::ZeroRow { row: i, norm: n });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        EmbeddingBatch::new(ids, m)
    }
}

/// One-shot teacher encoding of `items`.
pub fn teacher_encode(
    config: &TeacherConfig,
    input_dim: usize,
    items: &[ItemRecord],
) -> Result<EmbeddingBatch> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    TeacherEncoder::new(config, input_dim)?.encode(items)
}

/// 64-bit FNV-1a, stable across platforms and toolchains.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;

    fn cfg(input: usize, hidden: usize, embed: usize, depth: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim: input,
            hidden_dim: hidden,
            embed_dim: embed,
            depth,
            seed: 3,
        }
    }

    fn item(id: &str, features: Vec<Vec<f64>>) -> ItemRecord {
        ItemRecord::new(id, Modality::Text, features)
    }

    #[test]
    fn identity_layer_gives_normalized_projection() {
        let config = cfg(2, 2, 2, 1);
        let mut store = ParamStore::new();
        let enc = Encoder::init(config, &mut store).unwrap();
        let ids = enc.param_ids();
        store.get_mut(ids[0]).value = Matrix::identity(2);
        let proj = Matrix::from_rows(&[[2.0, 1.0], [0.5, -1.0]]).unwrap();
        store.get_mut(ids[2]).value = proj.clone();

        let x = [0.3, -0.8];
        let out = enc.encode(&store, &[item("a", vec![x.to_vec()])]).unwrap();
        let h: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        let z = [
            h[0] * proj[(0, 0)] + h[1] * proj[(1, 0)],
            h[0] * proj[(0, 1)] + h[1] * proj[(1, 1)],
        ];
        let n = norm(&z);
        for (a, b) in out.row(0).iter().zip(z) {
            assert!((a - b / n).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_items_identical_rows() {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg(3, 5, 4, 2), &mut store).unwrap();
        let f = vec![vec![0.1, 0.2, 0.3], vec![-0.4, 0.5, 0.0]];
        let out = enc.encode(&store, &[item("a", f.clone()), item("b", f)]).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn output_depends_only_on_final_position() {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg(3, 6, 4, 2), &mut store).unwrap();
        let (p1, p2, p3) = (vec![0.1, 0.9, -0.3], vec![0.7, -0.2, 0.4], vec![-0.5, 0.3, 0.8]);
        let out = enc
            .encode(
                &store,
                &[
                    item("a", vec![p1.clone(), p2.clone(), p3.clone()]),
                    item("b", vec![p2, p1, p3.clone()]),
                    item("c", vec![p3]),
                ],
            )
            .unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(0), out.row(2));
    }

    #[test]
    fn batch_permutation_permutes_rows() {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg(2, 4, 3, 1), &mut store).unwrap();
        let items: Vec<_> = (0..4)
            .map(|i| item(&format!("i{i}"), vec![vec![i as f64 * 0.3 - 0.4, 0.2 * i as f64]]))
            .collect();
        let a = enc.encode(&store, &items).unwrap();
        let perm = [2, 0, 3, 1];
        let shuffled: Vec<_> = perm.iter().map(|&i| items[i].clone()).collect();
        let b = enc.encode(&store, &shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.row(k), a.row(i));
        }
    }

    #[test]
    fn encode_errors() {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg(2, 4, 3, 1), &mut store).unwrap();
        assert!(matches!(enc.encode(&store, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            enc.encode(&store, &[item("a", vec![vec![1.0, 2.0, 3.0]])]),
            Err(Error::DimMismatch { .. })
        ));
        let fused = ItemRecord::new("f", Modality::Fused, vec![vec![1.0, 0.0]]);
        assert!(matches!(
            enc.encode(&store, &[fused]),
            Err(Error::InvalidItem { .. })
        ));
    }

    #[test]
    fn fused_item_matches_fuse_of_segments() {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg(2, 4, 3, 1), &mut store).unwrap();
        let text = vec![vec![0.4, -0.1], vec![0.2, 0.6]];
        let image = vec![vec![-0.7, 0.3]];
        let fused =
            ItemRecord::new("f", Modality::Fused, text.iter().chain(&image).cloned().collect()).with_split(2);
        let parts = enc
            .encode(
                &store,
                &[item("t", text), ItemRecord::new("i", Modality::Image, image)],
            )
            .unwrap();
        let whole = enc.encode(&store, &[fused]).unwrap();
        let expected = fuse_multimodal(parts.row(0), parts.row(1)).unwrap();
        for (a, b) in whole.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_closed_forms() {
        let u = [1.0, 0.0, 0.0];
        let v = [0.0, 1.0, 0.0];
        assert_eq!(fuse_multimodal(&u, &u).unwrap(), u.to_vec());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let f = fuse_multimodal(&u, &v).unwrap();
        assert!((f[0] - s).abs() < 1e-15 && (f[1] - s).abs() < 1e-15 && f[2] == 0.0);
        assert_eq!(fuse_multimodal(&u, &v).unwrap(), fuse_multimodal(&v, &u).unwrap());
        assert!(matches!(
            fuse_multimodal(&u, &[-1.0, 0.0, 0.0]),
            Err(Error::ZeroSum)
        ));
    }

    #[test]
    fn embedding_batch_invariants() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.6, 0.8]]).unwrap();
        assert!(EmbeddingBatch::new(vec!["a".into(), "b".into()], m.clone()).is_ok());
        assert!(matches!(
            EmbeddingBatch::new(vec!["a".into(), "a".into()], m),
            Err(Error::DuplicateId(_))
        ));
        let bad = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(matches!(
            EmbeddingBatch::new(vec!["a".into()], bad),
            Err(Error::NonUnitRow { .. })
        ));
    }

    #[test]
    fn teacher_is_frozen_and_deterministic() {
        let config = TeacherConfig {
            embed_dim: 5,
            ..TeacherConfig::default()
        };
        let items: Vec<_> = (0..4)
            .map(|i| {
                item(&format!("x{i}"), vec![vec![0.1 * i as f64, -0.2, 0.3]]).with_group(if i < 2 {
                    "g0"
                } else {
                    "g1"
                })
            })
            .collect();
        let a = teacher_encode(&config, 3, &items).unwrap();
        let b = teacher_encode(&config, 3, &items).unwrap();
        assert_eq!(a, b);

        let teacher = TeacherEncoder::new(&config, 3).unwrap();
        assert!(teacher.base().1.iter().all(|p| !p.trainable));

        let mut tape = Tape::new();
        let t = tape.constant(a.matrix().clone());
        let s = tape.sum_all(t);
        let mut scratch = ParamStore::new();
        let grads = tape.backward(s, &mut scratch).unwrap();
        assert!(grads.get(t).is_none());

        let same = dot(a.row(0), a.row(1));
        let cross = dot(a.row(0), a.row(2));
        assert!(same > cross, "{same} <= {cross}");
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
