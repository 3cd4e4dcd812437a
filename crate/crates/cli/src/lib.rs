//! Command-line surface for two-stage contrastive embedding training.
//!
//! `stage1` distils teacher similarities into a student, `stage2` trains it
//! contrastively with mined hard negatives, `eval` scores a checkpoint on the
//! held-out retrieval task, `ablate` sweeps the filter margin or the negative
//! count, and `tracegrad` records loss and gradient-norm traces for each
//! negative mode. Outputs are deterministic given the config file and seed;
//! timestamps live only in `run_info.json`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use contrastive_core::NegativeMode;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_stage1, cmd_stage2, cmd_tracegrad, AblationRow, Sweep, UsageError,
};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "contrastive",
    version,
    about = "Two-stage contrastive embedding training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config and CTR_OUTPUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed, overriding the config and CTR_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting parameters; a fresh initialization when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<NegativeMode, String> {
    s.parse().map_err(|e: contrastive_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distil teacher similarity distributions into the student.
    Stage1 {
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive training with mined negatives.
    Stage2 {
        #[command(flatten)]
        common: Common,
        /// Negative mode: hard, easy or random.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<NegativeMode>,
    },
    /// Score a checkpoint on the held-out retrieval task.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the filter margin or the negative count.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated beta values, e.g. "-0.1,0,0.1".
        #[arg(long, allow_hyphen_values = true, conflicts_with = "k")]
        beta: Option<String>,
        /// Comma-separated negative counts, e.g. "4,8,16".
        #[arg(long)]
        k: Option<String>,
    },
    /// Loss and gradient-norm traces for easy, random and hard negatives.
    Tracegrad {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Stage1 { common }
            | Command::Stage2 { common, .. }
            | Command::Eval { common }
            | Command::Ablate { common, .. }
            | Command::Tracegrad { common } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Stage1 { .. } => "stage1",
            Command::Stage2 { .. } => "stage2",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Tracegrad { .. } => "tracegrad",
        }
    }
}

/// Loads the configuration and applies environment and flag overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_env()?;
            c.validate()?;
            c
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| UsageError(format!("--{flag}: cannot parse {s:?}")).into())
        })
        .collect()
}

fn sweep(config: &RunConfig, beta: Option<&str>, k: Option<&str>) -> Result<Sweep> {
    let sweep = match (beta, k) {
        (Some(b), _) => Sweep::Beta(parse_list("beta", b)?),
        (None, Some(k)) => Sweep::K(parse_list("k", k)?),
        (None, None) if !config.ablation.beta.is_empty() => Sweep::Beta(config.ablation.beta.clone()),
        (None, None) if !config.ablation.k.is_empty() => Sweep::K(config.ablation.k.clone()),
        (None, None) => {
            return Err(UsageError("ablate needs --beta or --k (or a list in [ablation])".into()).into())
        }
    };
    Ok(sweep)
}

/// Runs one command and returns a one-line summary.
pub fn run(command: &Command) -> Result<String> {
    let common = command.common();
    let config = resolve_config(common)?;
    let ckpt = common.checkpoint.as_deref();
    let dir = config.output_dir.display().to_string();
    Ok(match command {
        Command::Stage1 { .. } => {
            let o = cmd_stage1(&config, ckpt)?;
            let last = o.trace.last().map_or(f64::NAN, |r| r.loss);
            format!(
                "stage1: {} steps, final loss {last:.6}, wrote {dir}",
                o.trace.len()
            )
        }
        Command::Stage2 { mode, .. } => {
            let o = cmd_stage2(&config, ckpt, *mode)?;
            let last = o.trace.last().map_or(f64::NAN, |r| r.loss);
            format!(
                "stage2: {} steps, final loss {last:.6}, wrote {dir}",
                o.trace.len()
            )
        }
        Command::Eval { .. } => {
            let o = cmd_eval(&config, ckpt)?;
            format!(
                "eval: precision@1 {:.4} over {} queries, wrote {dir}",
                o.report.precision_at_1(),
                o.report.queries
            )
        }
        Command::Ablate { beta, k, .. } => {
            let s = sweep(&config, beta.as_deref(), k.as_deref())?;
            let o = cmd_ablate(&config, ckpt, &s)?;
            format!("ablate: {} values, wrote {dir}", o.rows.len())
        }
        Command::Tracegrad { .. } => {
            let o = cmd_tracegrad(&config, ckpt)?;
            let parts: Vec<String> = o
                .summary
                .iter()
                .map(|(m, s)| format!("{m} {:.4}", s.terminal_loss))
                .collect();
            format!("tracegrad: terminal loss {}, wrote {dir}", parts.join(", "))
        }
    })
}
