//! End-to-end runs of the `contrastive` binary on a small corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contrastive_cli::output::{read_trace, RUN_INFO_FILE};
use contrastive_cli::{cmd_ablate, cmd_stage2, RunConfig, Sweep};
use contrastive_core::retrieval::binomial_sigma;
use contrastive_core::{Checkpoint, NegativeMode, RetrievalReport};

const SMALL: &str = r#"
seed = 5

[corpus.spec]
n_groups = 16
items_per_group = 16
eval_groups = 16
eval_queries_per_group = 16

[stage1]
steps = 60

[stage2]
steps = 40
batch_size = 32

[ablation]
steps = 10

[tracegrad]
steps = 40
window = 10
grad_norm_from = 10
grad_norm_to = 20
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contrastive"));
    c.env_remove("CTR_SEED").env_remove("CTR_OUTPUT_DIR");
    c
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::load(write_config(dir, "")).unwrap();
    c.output_dir = dir.join("lib_out");
    c
}

#[test]
fn stage1_is_deterministic_and_learns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["stage1", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["stage1", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["trace.jsonl", "checkpoint.bin"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(a.join(RUN_INFO_FILE).exists());
    let trace = read_trace(a.join("trace.jsonl")).unwrap();
    assert_eq!(trace.len(), 60);
    let first: f64 = trace[..10].iter().map(|l| l.record.loss).sum();
    let last: f64 = trace[50..].iter().map(|l| l.record.loss).sum();
    assert!(last < first, "{last} !< {first}");
    Checkpoint::load(a.join("checkpoint.bin")).unwrap();
}

#[test]
fn missing_corpus_path_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let cfg = write_config(dir.path(), &format!("[corpus]\npath = {:?}", s(&missing)));
    let out = run(&["stage1", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn unknown_mode_and_empty_sweep_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["stage2", "--config", s(&cfg), "--mode", "medium"]);
    assert_eq!(out.status.code(), Some(2));
    let o = dir.path().join("o");
    for args in [
        vec!["ablate", "--config", s(&cfg), "--out", s(&o), "--beta", ""],
        vec!["ablate", "--config", s(&cfg), "--out", s(&o), "--k", ","],
        vec!["ablate", "--config", s(&cfg), "--out", s(&o)],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn hard_negatives_keep_the_loss_higher() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let hard = cmd_stage2(&c, None, Some(NegativeMode::Hard)).unwrap();
    let easy = cmd_stage2(&c, None, Some(NegativeMode::Easy)).unwrap();
    assert_ne!(hard.trace, easy.trace);
    let tail = |t: &[contrastive_core::StepRecord]| t[30..].iter().map(|r| r.loss).sum::<f64>();
    assert!(tail(&hard.trace) > tail(&easy.trace));
}

#[test]
fn gradient_cache_leaves_training_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.stage2.steps = 10;
    let plain = cmd_stage2(&c, None, None).unwrap();
    c.stage2.sub_batch = Some(8);
    let cached = cmd_stage2(&c, None, None).unwrap();
    let diff = plain.checkpoint.store.max_value_diff(&cached.checkpoint.store);
    assert!(diff <= 1e-7, "{diff}");
}

#[test]
fn random_checkpoint_sits_near_chance_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = dir.path().join("o");
    ok(&["eval", "--config", s(&cfg), "--out", s(&o)]);
    let text = std::fs::read_to_string(o.join("report.json")).unwrap();
    let report: RetrievalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.queries, 256);
    assert_eq!(report.candidates, 16);
    let again = serde_json::to_string_pretty(&report).unwrap() + "\n";
    assert_eq!(again, text);

    // A random tanh projection keeps some input geometry, so an untrained
    // encoder lands a little above 1/16 but far below a trained one.
    let random = report.precision_at_1();
    assert!(random < 4.0 / 16.0, "{random}");
    let t = dir.path().join("t");
    ok(&["stage1", "--config", s(&cfg), "--out", s(&t)]);
    let e = dir.path().join("e");
    let ckpt = t.join("checkpoint.bin");
    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--out",
        s(&e),
        "--checkpoint",
        s(&ckpt),
    ]);
    let trained: RetrievalReport =
        serde_json::from_str(&std::fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    let n = report.queries;
    let band = 3.0
        * (binomial_sigma(random, n).powi(2) + binomial_sigma(trained.precision_at_1(), n).powi(2)).sqrt();
    assert!(
        trained.precision_at_1() - random > band,
        "{random} vs {}",
        trained.precision_at_1()
    );
}

#[test]
fn ablation_tables() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let stage1 = contrastive_cli::cmd_stage1(&c, None).unwrap();
    let ckpt = dir.path().join("lib_out/checkpoint.bin");
    assert!(stage1.files.contains(&ckpt));
    let betas = Sweep::Beta(vec![-0.1, 0.0, 0.1, 0.2, 0.3]);
    let rows = cmd_ablate(&c, Some(&ckpt), &betas).unwrap().rows;
    for w in rows.windows(2) {
        assert!(w[1].filter_pct <= w[0].filter_pct, "{rows:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join("lib_out/ablation.csv")).unwrap();
    assert!(csv.starts_with("beta,false_neg_pct,precision_at_1\n"));
    assert_eq!(csv.lines().count(), 6);

    let rows = cmd_ablate(&c, Some(&ckpt), &Sweep::K(vec![4, 8, 16, 32, 64]))
        .unwrap()
        .rows;
    let pct: Vec<f64> = rows.iter().map(|r| r.filter_pct).collect();
    assert_eq!(pct, vec![0.4, 0.8, 1.6, 3.2, 6.4]);
}

#[test]
fn tracegrad_writes_one_trace_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = dir.path().join("o");
    ok(&["tracegrad", "--config", s(&cfg), "--out", s(&o)]);
    let mut lens = Vec::new();
    for mode in ["easy", "random", "hard"] {
        let t = read_trace(o.join(format!("trace_{mode}.jsonl"))).unwrap();
        assert!(t
            .iter()
            .all(|l| l.run.as_deref() == Some(mode) && l.record.false_neg_pct.is_some()));
        lens.push(t.len());
    }
    assert_eq!(lens, vec![40, 40, 40]);
    assert!(o.join("tracegrad_summary.json").exists());
}

#[test]
fn environment_overrides_seed_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let env_out = dir.path().join("from_env");
    let out = bin()
        .args(["stage1", "--config", s(&cfg)])
        .env("CTR_SEED", "9")
        .env("CTR_OUTPUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_out.join(RUN_INFO_FILE)).unwrap()).unwrap();
    assert_eq!(info["seed"], 9);

    let flag_out = dir.path().join("from_flag");
    let out = bin()
        .args([
            "stage1",
            "--config",
            s(&cfg),
            "--seed",
            "9",
            "--out",
            s(&flag_out),
        ])
        .env("CTR_SEED", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(env_out.join("trace.jsonl")).unwrap(),
        std::fs::read(flag_out.join("trace.jsonl")).unwrap()
    );
}
