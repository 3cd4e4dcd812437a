//! Shared inputs for the benchmarks in `benches/`.

use contrastive_core::train::contrastive_batch;
use contrastive_core::train::ContrastiveLayout;
use contrastive_core::{
    corpus, Corpus, CorpusSpec, Encoder, EncoderConfig, ItemRecord, Matrix, ParamStore, StepBatch,
    TeacherConfig, TeacherEncoder,
};

/// A default-shaped encoder over a corpus large enough for 64-pair batches.
pub struct Fixture {
    pub corpus: Corpus,
    pub encoder: Encoder,
    pub store: ParamStore,
}

impl Fixture {
    pub fn new() -> Self {
        let spec = CorpusSpec {
            n_groups: 16,
            items_per_group: 16,
            eval_groups: 16,
            ..Default::default()
        };
        let corpus = corpus::generate(&spec).expect("corpus");
        let mut store = ParamStore::new();
        let encoder = Encoder::init(EncoderConfig::default(), &mut store).expect("encoder");
        Self {
            corpus,
            encoder,
            store,
        }
    }

    /// The first `n` text items.
    pub fn texts(&self, n: usize) -> Vec<ItemRecord> {
        self.corpus.text_items().into_iter().take(n).collect()
    }

    pub fn teacher_rows(&self, items: &[ItemRecord]) -> Matrix {
        let teacher = TeacherEncoder::new(&TeacherConfig::default(), EncoderConfig::default().input_dim)
            .expect("teacher");
        teacher.encode(items).expect("teacher rows").into_parts().1
    }

    /// A stage-2 batch built from the first `pairs` query/positive pairs.
    pub fn contrastive(&self, pairs: usize) -> (StepBatch, ContrastiveLayout) {
        contrastive_batch(&self.corpus, &(0..pairs).collect::<Vec<_>>()).expect("batch")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
