//! The five run commands. Each is a function of the resolved configuration
//! and its explicit inputs; all files go through one [`OutputWriter`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contrastive_core::corpus::{generate, generate_eval, read_corpus, read_embeddings};
use contrastive_core::negatives::hard_neg_pct;
use contrastive_core::retrieval::evaluate_checkpoint;
use contrastive_core::train::{
    corpus_false_neg_pct, losses, mean_grad_norm, moving_average, stage1_train, stage2_train, EmbeddingTable,
    TeacherSource,
};
use contrastive_core::{
    Checkpoint, Corpus, EmbeddingBatch, Encoder, EvalCorpus, ItemRecord, NegativeMode, ParamStore,
    RetrievalReport, StepRecord, TeacherConfig, TeacherEncoder,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{trace_lines, OutputWriter, ABLATION_FILE, CHECKPOINT_FILE, REPORT_FILE, TRACE_FILE};

/// Invalid command-line usage, reported with the usage exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    match &config.corpus.path {
        Some(p) => read_corpus(p).with_context(|| format!("loading corpus {}", p.display())),
        None => Ok(generate(&config.corpus.spec)?),
    }
}

pub fn load_eval(config: &RunConfig) -> Result<EvalCorpus> {
    match &config.corpus.eval_path {
        Some(p) => {
            let c = read_corpus(p).with_context(|| format!("loading evaluation corpus {}", p.display()))?;
            Ok(EvalCorpus::from_corpus(&c))
        }
        None => Ok(generate_eval(&config.corpus.spec)?),
    }
}

fn corpus_input_dim(corpus: &Corpus) -> usize {
    corpus
        .items
        .first()
        .and_then(|i| i.features.first())
        .map_or(0, Vec::len)
}

pub fn load_teacher(config: &RunConfig, corpus: &Corpus) -> Result<Box<dyn TeacherSource>> {
    if let Some(p) = &config.teacher.embeddings {
        let batch =
            read_embeddings(p).with_context(|| format!("loading teacher embeddings {}", p.display()))?;
        return Ok(Box::new(EmbeddingTable::new(&batch)));
    }
    let mut oracle: TeacherConfig = config.teacher.oracle.clone();
    if oracle.visible_dims.is_none() && config.corpus.path.is_none() {
        oracle.visible_dims = Some(config.corpus.spec.signal_dim());
    }
    Ok(Box::new(TeacherEncoder::new(&oracle, corpus_input_dim(corpus))?))
}

/// Parameters from a checkpoint, or a fresh initialization from the config.
pub fn start_params(config: &RunConfig, checkpoint: Option<&Path>) -> Result<(Encoder, ParamStore)> {
    match checkpoint {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            let encoder = ckpt.encoder()?;
            if encoder.config().input_dim != config.encoder.input_dim {
                bail!(
                    "checkpoint {} reads {} input dims, config expects {}",
                    p.display(),
                    encoder.config().input_dim,
                    config.encoder.input_dim
                );
            }
            Ok((encoder, ckpt.store))
        }
        None => {
            let mut store = ParamStore::new();
            let encoder = Encoder::init(config.encoder.clone(), &mut store)?;
            Ok((encoder, store))
        }
    }
}

fn check_items(corpus: &Corpus, encoder: &Encoder) -> Result<()> {
    let dim = corpus_input_dim(corpus);
    if dim != encoder.config().input_dim {
        bail!(
            "corpus items have {dim} features, encoder reads {}",
            encoder.config().input_dim
        );
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: Vec<StepRecord>,
    pub checkpoint: Checkpoint,
    pub files: Vec<PathBuf>,
}

pub fn cmd_stage1(config: &RunConfig, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    let corpus = load_corpus(config)?;
    let teacher = load_teacher(config, &corpus)?;
    let (encoder, mut store) = start_params(config, checkpoint)?;
    check_items(&corpus, &encoder)?;
    let settings = config.stage1.settings(config.stage1_seed());
    let trace = stage1_train(
        &encoder,
        &mut store,
        &corpus,
        teacher.as_ref(),
        &config.distill,
        &settings,
    )?;
    let ckpt = Checkpoint::new(encoder.config().clone(), store);
    let mut out = OutputWriter::create(&config.output_dir)?;
    out.write_trace(TRACE_FILE, &trace_lines(None, &trace))?;
    out.write_checkpoint(CHECKPOINT_FILE, &ckpt)?;
    let files = out.finish("stage1", config.seed)?;
    Ok(TrainOutcome {
        trace,
        checkpoint: ckpt,
        files,
    })
}

pub fn cmd_stage2(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    mode: Option<NegativeMode>,
) -> Result<TrainOutcome> {
    let corpus = load_corpus(config)?;
    let (encoder, mut store) = start_params(config, checkpoint)?;
    check_items(&corpus, &encoder)?;
    let mut stage2 = config.stage2.stage2_config();
    if let Some(m) = mode {
        stage2.mode = m;
    }
    let settings = config.stage2.phase().settings(config.stage2_seed());
    let trace = stage2_train(&encoder, &mut store, &corpus, &stage2, &settings)?;
    let ckpt = Checkpoint::new(encoder.config().clone(), store);
    let mut out = OutputWriter::create(&config.output_dir)?;
    out.write_trace(TRACE_FILE, &trace_lines(Some(stage2.mode.as_str()), &trace))?;
    out.write_checkpoint(CHECKPOINT_FILE, &ckpt)?;
    let files = out.finish("stage2", config.seed)?;
    Ok(TrainOutcome {
        trace,
        checkpoint: ckpt,
        files,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: RetrievalReport,
    pub files: Vec<PathBuf>,
}

pub fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalOutcome> {
    let eval = load_eval(config)?;
    let (encoder, store) = start_params(config, checkpoint)?;
    let report = evaluate_checkpoint(&encoder, &store, &eval, &config.eval.ks)?;
    let mut out = OutputWriter::create(&config.output_dir)?;
    out.write_json(REPORT_FILE, &report)?;
    let files = out.finish("eval", config.seed)?;
    Ok(EvalOutcome { report, files })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    Beta(Vec<f64>),
    K(Vec<usize>),
}

impl Sweep {
    fn len(&self) -> usize {
        match self {
            Sweep::Beta(v) => v.len(),
            Sweep::K(v) => v.len(),
        }
    }
}

/// One row of the ablation table. `filter_pct` is FalseNeg% for a beta sweep
/// and HardNeg% for a k sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub filter_pct: f64,
    pub precision_at_1: f64,
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub files: Vec<PathBuf>,
}

/// Sweeps beta or k from a fixed starting checkpoint. Every value trains its
/// own stage-2 run of `ablation.steps` steps and is scored on the retrieval
/// task. For beta, FalseNeg% is measured on the starting checkpoint so the
/// column compares filters on identical embeddings; for k, HardNeg% is
/// `100 k / ablation.candidates`.
pub fn cmd_ablate(config: &RunConfig, checkpoint: Option<&Path>, sweep: &Sweep) -> Result<AblationOutcome> {
    if sweep.len() == 0 {
        return Err(UsageError("the sweep list is empty".into()).into());
    }
    let corpus = load_corpus(config)?;
    let eval = load_eval(config)?;
    let (encoder, start) = start_params(config, checkpoint)?;
    check_items(&corpus, &encoder)?;
    let embed =
        |items: &[ItemRecord]| -> contrastive_core::Result<EmbeddingBatch> { encoder.encode(&start, items) };

    let mut rows = Vec::with_capacity(sweep.len());
    let mut lines = Vec::new();
    let values: Vec<f64> = match sweep {
        Sweep::Beta(v) => v.clone(),
        Sweep::K(v) => v.iter().map(|&k| k as f64).collect(),
    };
    for (i, &value) in values.iter().enumerate() {
        let mut stage2 = config.stage2.stage2_config();
        let (label, filter_pct) = match sweep {
            Sweep::Beta(b) => {
                stage2.miner.beta = b[i];
                let pct = corpus_false_neg_pct(&corpus, &embed, stage2.batch_size, &stage2.miner)?;
                (format!("beta={}", b[i]), pct)
            }
            Sweep::K(k) => {
                stage2.miner.k = k[i];
                (
                    format!("k={}", k[i]),
                    hard_neg_pct(k[i], config.ablation.candidates)?,
                )
            }
        };
        let mut phase = config.stage2.phase();
        phase.steps = config.ablation.steps;
        let mut store = start.clone();
        let trace = stage2_train(
            &encoder,
            &mut store,
            &corpus,
            &stage2,
            &phase.settings(config.stage2_seed()),
        )?;
        let report = evaluate_checkpoint(&encoder, &store, &eval, &[1])?;
        lines.extend(trace_lines(Some(&label), &trace));
        rows.push(AblationRow {
            value,
            filter_pct,
            precision_at_1: report.precision_at_1(),
        });
    }

    let header = match sweep {
        Sweep::Beta(_) => ["beta", "false_neg_pct", "precision_at_1"],
        Sweep::K(_) => ["k", "hard_neg_pct", "precision_at_1"],
    };
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.value.to_string(),
                r.filter_pct.to_string(),
                r.precision_at_1.to_string(),
            ]
        })
        .collect();
    let mut out = OutputWriter::create(&config.output_dir)?;
    out.write_csv(ABLATION_FILE, &header, &table)?;
    out.write_trace(TRACE_FILE, &lines)?;
    let files = out.finish("ablate", config.seed)?;
    Ok(AblationOutcome { rows, files })
}

/// Per-mode summary of a gradient trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub steps: usize,
    /// Moving-average loss at the last step.
    pub terminal_loss: f64,
    /// First step whose moving-average loss is below 0.05.
    pub first_step_below_0_05: Option<usize>,
    /// Mean pre-clip gradient norm over the configured step range.
    pub mean_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TraceGradOutcome {
    pub traces: Vec<(NegativeMode, Vec<StepRecord>)>,
    pub summary: BTreeMap<String, ModeSummary>,
    pub files: Vec<PathBuf>,
}

pub const TRACEGRAD_SUMMARY_FILE: &str = "tracegrad_summary.json";

pub fn trace_file(mode: NegativeMode) -> String {
    format!("trace_{}.jsonl", mode.as_str())
}

/// Trains stage 2 once per negative mode from the same start and the same
/// batch sequence.
pub fn cmd_tracegrad(config: &RunConfig, checkpoint: Option<&Path>) -> Result<TraceGradOutcome> {
    let corpus = load_corpus(config)?;
    let (encoder, start) = start_params(config, checkpoint)?;
    check_items(&corpus, &encoder)?;
    let tg = &config.tracegrad;
    let mut phase = config.stage2.phase();
    phase.steps = tg.steps;
    let settings = phase.settings(config.stage2_seed());
    let mut out = OutputWriter::create(&config.output_dir)?;
    let mut traces = Vec::with_capacity(3);
    let mut summary = BTreeMap::new();
    for mode in NegativeMode::ALL {
        let mut stage2 = config.stage2.stage2_config();
        stage2.mode = mode;
        let mut store = start.clone();
        let trace = stage2_train(&encoder, &mut store, &corpus, &stage2, &settings)?;
        let ma = moving_average(&losses(&trace), tg.window);
        summary.insert(
            mode.as_str().to_string(),
            ModeSummary {
                steps: trace.len(),
                terminal_loss: ma.last().copied().unwrap_or(f64::NAN),
                first_step_below_0_05: ma.iter().position(|&l| l < 0.05).map(|i| i + 1),
                mean_grad_norm: mean_grad_norm(&trace, tg.grad_norm_from, tg.grad_norm_to),
            },
        );
        out.write_trace(&trace_file(mode), &trace_lines(Some(mode.as_str()), &trace))?;
        traces.push((mode, trace));
    }
    out.write_json(TRACEGRAD_SUMMARY_FILE, &summary)?;
    let files = out.finish("tracegrad", config.seed)?;
    Ok(TraceGradOutcome {
        traces,
        summary,
        files,
    })
}
