//! Run configuration: one TOML document per run.
//!
//! Every section is optional and falls back to the desk-scale defaults. The
//! environment variables `CTR_SEED` and `CTR_OUTPUT_DIR` override `seed` and
//! `output_dir`; command-line flags override both.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contrastive_core::{
    CorpusSpec, DistillConfig, EncoderConfig, MinerConfig, NegativeMode, OptimizerConfig, Stage2Config,
    TeacherConfig, TrainSettings,
};
use serde::{Deserialize, Serialize};

pub const SEED_VAR: &str = "CTR_SEED";
pub const OUTPUT_DIR_VAR: &str = "CTR_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusSource,
    pub encoder: EncoderConfig,
    pub teacher: TeacherSource,
    pub distill: DistillConfig,
    pub stage1: PhaseConfig,
    pub stage2: Stage2Settings,
    pub eval: EvalSettings,
    pub ablation: AblationSettings,
    pub tracegrad: TraceGradSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            corpus: CorpusSource::default(),
            encoder: EncoderConfig::default(),
            teacher: TeacherSource::default(),
            distill: DistillConfig::default(),
            stage1: PhaseConfig::default(),
            stage2: Stage2Settings::default(),
            eval: EvalSettings::default(),
            ablation: AblationSettings::default(),
            tracegrad: TraceGradSettings::default(),
        }
    }
}

/// Training corpus read from `path` or generated from `spec`. The retrieval
/// task is read from `eval_path` (every pair becomes a query) or generated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSource {
    pub path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub spec: CorpusSpec,
}

/// Teacher embeddings read from `embeddings` or produced by the frozen
/// oracle encoder. When the oracle's `visible_dims` is unset and the corpus is
/// generated, it defaults to the corpus signal dimensions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSource {
    pub embeddings: Option<PathBuf>,
    pub oracle: TeacherConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub steps: usize,
    /// Gradient-cache sub-batch; unset trains each batch in one graph.
    pub sub_batch: Option<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            sub_batch: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl PhaseConfig {
    pub fn settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            seed,
            optimizer: self.optimizer.clone(),
            sub_batch: self.sub_batch,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        self.optimizer
            .validate()
            .with_context(|| format!("[{name}.optimizer]"))?;
        if self.sub_batch == Some(0) {
            bail!("[{name}] sub_batch must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Settings {
    pub steps: usize,
    pub sub_batch: Option<usize>,
    pub optimizer: OptimizerConfig,
    /// Query/positive pairs per step.
    pub batch_size: usize,
    pub mode: NegativeMode,
    pub miner: MinerConfig,
}

impl Default for Stage2Settings {
    fn default() -> Self {
        Self {
            steps: 50,
            sub_batch: None,
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            mode: NegativeMode::Hard,
            miner: MinerConfig::default(),
        }
    }
}

impl Stage2Settings {
    pub fn phase(&self) -> PhaseConfig {
        PhaseConfig {
            steps: self.steps,
            sub_batch: self.sub_batch,
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn stage2_config(&self) -> Stage2Config {
        Stage2Config {
            batch_size: self.batch_size,
            miner: self.miner.clone(),
            mode: self.mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10] }
    }
}

/// Sweep lists used when the command line gives none, plus the stage-2
/// budget spent on every sweep value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub beta: Vec<f64>,
    pub k: Vec<usize>,
    pub steps: usize,
    /// In-batch candidate count behind the HardNeg% column of a k sweep.
    pub candidates: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            beta: Vec::new(),
            k: Vec::new(),
            steps: 50,
            candidates: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceGradSettings {
    pub steps: usize,
    /// Moving-average window for the summary.
    pub window: usize,
    /// 1-based step range averaged for the gradient-norm summary.
    pub grad_norm_from: usize,
    pub grad_norm_to: usize,
}

impl Default for TraceGradSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            window: 50,
            grad_norm_from: 100,
            grad_norm_to: 200,
        }
    }
}

impl RunConfig {
    /// Reads, applies environment overrides and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config =
            Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.apply_env()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Relative input paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus.path,
            &mut self.corpus.eval_path,
            &mut self.teacher.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_VAR) {
            self.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_VAR}={v:?} is not a u64"))?;
        }
        if let Ok(v) = std::env::var(OUTPUT_DIR_VAR) {
            self.output_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for p in [
            &self.corpus.path,
            &self.corpus.eval_path,
            &self.teacher.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        if self.corpus.path.is_none() {
            self.corpus.spec.validate().context("[corpus.spec]")?;
            if self.corpus.spec.input_dim != self.encoder.input_dim {
                bail!(
                    "encoder input_dim {} differs from corpus input_dim {}",
                    self.encoder.input_dim,
                    self.corpus.spec.input_dim
                );
            }
        }
        self.encoder.validate().context("[encoder]")?;
        self.distill.validate().context("[distill]")?;
        self.stage1.validate("stage1")?;
        self.stage2.phase().validate("stage2")?;
        self.stage2.miner.validate().context("[stage2.miner]")?;
        if self.stage2.batch_size == 0 {
            bail!("[stage2] batch_size must be >= 1");
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("[eval] ks must be a non-empty list of positive cut-offs");
        }
        if self.ablation.candidates == 0 {
            bail!("[ablation] candidates must be >= 1");
        }
        let t = &self.tracegrad;
        if t.window == 0 || t.grad_norm_from == 0 || t.grad_norm_from > t.grad_norm_to {
            bail!("[tracegrad] needs window >= 1 and 1 <= grad_norm_from <= grad_norm_to");
        }
        Ok(())
    }

    /// Seed of the stage-1 batch sampler.
    pub fn stage1_seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the stage-2 batch sampler and random-mode miner.
    pub fn stage2_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}
