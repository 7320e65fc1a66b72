use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = "num_prompts = 3
answers_per_prompt = 100
max_score = 2
vocabulary_seed = 1
paraphrase_noise_rate = 0.1
distractor_rate = 0.3
";

const RUN: &str = "[pre_finetune]
epochs = 1
[finetune]
epochs = 2
[splits.pool]
train = 60
dev = 10
test = 0
[splits.target]
train = 40
dev = 10
test = 50
";

fn sas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sas"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("SAS_RESULTS_DIR")
        .args(args)
        .output()
        .expect("spawn sas")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sas(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    fs::write(dir.path().join("run.toml"), RUN).unwrap();
    ok(dir.path(), &["gen-synth", "--spec", "spec.toml", "--out", "data"]);
    dir
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--help"]);
    for cmd in ["gen-synth", "pre-finetune", "finetune", "evaluate", "zero-shot", "sweep", "plot"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn gen_synth_is_byte_identical_across_runs() {
    let dir = workspace();
    ok(dir.path(), &["gen-synth", "--spec", "spec.toml", "--out", "again"]);
    for f in ["prompts.jsonl", "answers.jsonl"] {
        let a = fs::read(dir.path().join("data").join(f)).unwrap();
        let b = fs::read(dir.path().join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), SPEC.replace("distractor_rate = 0.3", "distractor_rate = 1.5")).unwrap();
    let out = sas(dir.path(), &["gen-synth", "--spec", "bad.toml", "--out", "data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("data").exists());

    fs::write(dir.path().join("typo.toml"), "[finetune]\nepoch = 3\n").unwrap();
    let out = sas(dir.path(), &["--config", "typo.toml", "gen-synth", "--spec", "bad.toml", "--out", "data"]);
    assert_eq!(out.status.code(), Some(2));

    let out = sas(dir.path(), &["finetune", "--data", "data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_from_pre_finetuning_to_zero_shot() {
    let dir = workspace();
    let d = dir.path();
    let cfg = ["--config", "run.toml"];
    let run = |args: &[&str]| ok(d, &[&cfg[..], args].concat());

    run(&["pre-finetune", "--data", "data", "--mode", "key-phrase", "--exclude", "synth_002", "--out", "pre.json"]);
    let metrics = fs::read_to_string(d.join("pre.metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,dev_qwk\n"));
    assert_eq!(metrics.lines().count(), 2);

    run(&[
        "finetune", "--data", "data", "--prompt", "synth_002", "--n-train", "20", "--mode", "key-phrase", "--base",
        "pre.json", "--out", "ft.json",
    ]);
    let printed = run(&["evaluate", "--data", "data", "--checkpoint", "ft.json", "--prompt", "synth_002", "--out", "preds.csv"]);
    let qwk: f64 = printed.trim().strip_prefix("QWK ").expect("QWK line").parse().unwrap();
    assert!((-1.0..=1.0).contains(&qwk));
    let preds = fs::read_to_string(d.join("preds.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 50);

    run(&[
        "zero-shot", "--data", "data", "--checkpoint", "pre.json", "--prompt", "synth_002", "--aggregation", "joined",
        "--out", "zs",
    ]);
    for f in ["predictions.csv", "distance.csv", "distance.json"] {
        assert!(d.join("zs").join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("zs/distance.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregation"], "joined_sequence");

    let out = sas(d, &[&cfg[..], &["zero-shot", "--data", "data", "--checkpoint", "pre.json", "--prompt", "synth_000", "--out", "zs2"]].concat());
    assert_eq!(out.status.code(), Some(1), "zero-shot on a pre-finetuning prompt must be refused");

    run(&["plot", "--kind", "scatter", "--input", "zs/distance.csv", "--out", "scatter.svg"]);
    assert!(fs::read_to_string(d.join("scatter.svg")).unwrap().contains("<svg"));
}

#[test]
fn sweep_resumes_and_writes_an_aggregate() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("run.toml"), format!("{RUN}[sweep]\nfinetune_sizes = [5]\n")).unwrap();
    let args = [
        "--config", "run.toml", "sweep", "--data", "data", "--targets", "synth_002", "--settings",
        "BASELINE,PRE_FINETUNE_KEY_PHRASE", "--seeds", "0", "--out", "res",
    ];
    let first = ok(d, &args);
    assert!(first.contains("2 cells"), "{first}");
    assert_eq!(fs::read_dir(d.join("res/cells")).unwrap().count(), 2);
    let agg = fs::read_to_string(d.join("res/aggregate.csv")).unwrap();
    assert!(agg.starts_with("setting,n_train,prompt_count,mean_qwk,std_qwk,n_seeds\n"));
    assert_eq!(agg.lines().count(), 3);
    let second = ok(d, &args);
    assert_eq!(first, second);
}

#[test]
fn line_plot_draws_one_series_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("setting,n_train,prompt_count,mean_qwk,std_qwk,n_seeds\n");
    for (i, s) in ["BASELINE", "KEY_PHRASE", "PRE_FINETUNE", "PRE_FINETUNE_KEY_PHRASE"].iter().enumerate() {
        for (j, n) in [10, 25, 50, 100, 200].iter().enumerate() {
            csv.push_str(&format!("{s},{n},,{},0.05,5\n", 0.4 + 0.1 * j as f64 + 0.02 * i as f64));
        }
    }
    fs::write(dir.path().join("agg.csv"), csv).unwrap();
    let printed = ok(dir.path(), &["plot", "--input", "agg.csv", "--out", "fig.svg", "--title", "QWK"]);
    assert!(printed.contains("4 series"), "{printed}");
    let svg = fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    for s in ["BASELINE", "KEY_PHRASE", "PRE_FINETUNE_KEY_PHRASE"] {
        assert!(svg.contains(s), "legend lacks {s}");
    }
}
