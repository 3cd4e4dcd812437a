//! Contrastive embedding training: tape autodiff, toy encoders, similarity
//! distillation, hard-negative InfoNCE with false-negative filtering,
//! gradient caching and retrieval evaluation.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod gradcache;
pub mod infonce;
pub mod matrix;
pub mod negatives;
pub mod optim;
pub mod retrieval;
pub mod train;

pub use autodiff::{ParamId, ParamStore, Parameter, Tape, Var};
pub use checkpoint::Checkpoint;
pub use corpus::{Corpus, CorpusSpec, EvalCorpus, PairRecord};
pub use distill::{DistillConfig, KlNumerator};
pub use encoder::{
    EmbeddingBatch, Encoder, EncoderConfig, ItemRecord, Modality, TeacherConfig, TeacherEncoder,
};
pub use error::{Error, Result};
pub use gradcache::{BatchObjective, CachePlan, StepBatch};
pub use infonce::ContrastiveTriple;
pub use matrix::Matrix;
pub use negatives::{MinedBatch, MinerConfig, MinerStats, NegativeMode};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use retrieval::{RetrievalReport, RetrievalTask};
pub use train::{PlantedRecall, Stage2Config, StepRecord, TrainSettings};
