//! Two-pass gradient caching.
//!
//! Pass 1 encodes every sub-batch without a graph and assembles the full
//! embedding matrix. The batch-level objective (including any negative
//! mining) then runs once on that matrix as a leaf, giving the loss and its
//! gradient with respect to every embedding row. Pass 2 re-encodes each
//! sub-batch with a graph and pushes the cached row gradients into the
//! parameters. Only one sub-batch graph is alive at a time.

use std::ops::Range;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::encoder::{Encoder, ItemRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A loss over the embeddings of a whole batch.
pub trait BatchObjective {
    /// Data derived from the full embedding matrix before the loss is
    /// recorded, e.g. mined negatives.
    type Plan;

    fn plan(&self, embeddings: &Matrix) -> Result<Self::Plan>;

    fn loss(&self, tape: &mut Tape, embeddings: Var, plan: &Self::Plan) -> Result<Var>;
}

/// Items of one optimization step, grouped into examples. Example `i` owns
/// the contiguous item rows `spans[i]`.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub items: Vec<ItemRecord>,
    pub spans: Vec<Range<usize>>,
}

impl StepBatch {
    /// One item per example.
    pub fn singletons(items: Vec<ItemRecord>) -> Self {
        let spans = (0..items.len()).map(|i| i..i + 1).collect();
        Self { items, spans }
    }

    pub fn examples(&self) -> usize {
        self.spans.len()
    }

    fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, s) in self.spans.iter().enumerate() {
            if s.start != next || s.end <= s.start {
                return Err(Error::PlanMismatch(format!(
                    "example {i} spans rows {s:?}, expected a nonempty range starting at {next}"
                )));
            }
            next = s.end;
        }
        if next != self.items.len() {
            return Err(Error::PlanMismatch(format!(
                "examples cover {next} rows of {}",
                self.items.len()
            )));
        }
        Ok(())
    }

    fn rows(&self, examples: &Range<usize>) -> Range<usize> {
        self.spans[examples.start].start..self.spans[examples.end - 1].end
    }
}

/// Partition of a batch's examples into sub-batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CachePlan {
    effective_batch: usize,
    sub_batch: usize,
    ranges: Vec<Range<usize>>,
}

impl CachePlan {
    /// Consecutive chunks of `sub_batch` examples; the last may be shorter.
    pub fn new(effective_batch: usize, sub_batch: usize) -> Result<Self> {
        if sub_batch == 0 || sub_batch > effective_batch {
            return Err(Error::PlanMismatch(format!(
                "sub_batch {sub_batch} must lie in 1..={effective_batch}"
            )));
        }
        let ranges = (0..effective_batch)
            .step_by(sub_batch)
            .map(|s| s..(s + sub_batch).min(effective_batch))
            .collect();
        Ok(Self {
            effective_batch,
            sub_batch,
            ranges,
        })
    }

    /// Accepts explicit ranges, which must tile `[0, effective_batch)` in
    /// order.
    pub fn from_ranges(effective_batch: usize, ranges: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        let mut widest = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::PlanMismatch(format!(
                    "range {r:?} does not continue the partition at {next}"
                )));
            }
            widest = widest.max(r.len());
            next = r.end;
        }
        if next != effective_batch {
            return Err(Error::PlanMismatch(format!(
                "ranges cover {next} of {effective_batch} examples"
            )));
        }
        Ok(Self {
            effective_batch,
            sub_batch: widest,
            ranges,
        })
    }

    pub fn effective_batch(&self) -> usize {
        self.effective_batch
    }

    pub fn sub_batch(&self) -> usize {
        self.sub_batch
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput<P> {
    pub loss: f64,
    pub plan: P,
    /// Largest number of live activation values held by any encoder graph
    /// during the step.
    pub peak_activations: usize,
}

/// Encodes the whole batch on one graph and backpropagates directly. Adds
/// into the gradients already held by `store`.
pub fn full_batch_step<O: BatchObjective>(
    encoder: &Encoder,
    store: &mut ParamStore,
    batch: &StepBatch,
    objective: &O,
) -> Result<StepOutput<O::Plan>> {
    batch.validate()?;
    let mut tape = Tape::new();
    let emb = encoder.forward(&mut tape, store, &batch.items)?;
    let plan = objective.plan(tape.value(emb))?;
    let peak = tape.live_activations();
    let loss = objective.loss(&mut tape, emb, &plan)?;
    tape.backward(loss, store)?;
    Ok(StepOutput {
        loss: tape.value(loss).item(),
        plan,
        peak_activations: peak,
    })
}

/// Gradient-cached equivalent of [`full_batch_step`].
pub fn cached_step<O: BatchObjective>(
    encoder: &Encoder,
    store: &mut ParamStore,
    batch: &StepBatch,
    objective: &O,
    plan: &CachePlan,
) -> Result<StepOutput<O::Plan>> {
    batch.validate()?;
    if plan.effective_batch != batch.examples() {
        return Err(Error::PlanMismatch(format!(
            "plan covers {} examples, batch has {}",
            plan.effective_batch,
            batch.examples()
        )));
    }

    let d = encoder.config().embed_dim;
    let mut full = Vec::with_capacity(batch.items.len() * d);
    for r in &plan.ranges {
        let rows = batch.rows(r);
        let mut tape = Tape::no_grad();
        let e = encoder.forward(&mut tape, store, &batch.items[rows])?;
        full.extend_from_slice(tape.value(e).as_slice());
    }
    let full = Matrix::from_vec(batch.items.len(), d, full)?;

    let mined = objective.plan(&full)?;
    let mut loss_tape = Tape::new();
    let emb = loss_tape.variable(full);
    let loss = objective.loss(&mut loss_tape, emb, &mined)?;
    let loss_value = loss_tape.value(loss).item();
    let mut scratch = ParamStore::new();
    let grads = loss_tape.backward(loss, &mut scratch)?;
    let cached = grads
        .get(emb)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(batch.items.len(), d));
    drop(loss_tape);

    let mut peak = 0;
    for r in &plan.ranges {
        let rows = batch.rows(r);
        let mut tape = Tape::new();
        let e = encoder.forward(&mut tape, store, &batch.items[rows.clone()])?;
        peak = peak.max(tape.live_activations());
        let idx: Vec<usize> = rows.collect();
        tape.backward_from(&[(e, cached.select_rows(&idx))], store)?;
    }

    Ok(StepOutput {
        loss: loss_value,
        plan: mined,
        peak_activations: peak,
    })
}
