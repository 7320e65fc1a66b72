mod config;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sas_core::analysis::{distance_prediction_study, evaluation_answers, zero_shot_eval};
use sas_core::corpus::{
    generate_synthetic_corpus, load_dataset, make_splits, Dataset, Split, SyntheticSpec, ANSWERS_FILE, PROMPTS_FILE,
};
use sas_core::experiments::{
    aggregate_over_seeds, write_aggregate_csv, Experiment, ResultsStore, RunResult, Setting,
};
use sas_core::metrics::{evaluate_model, CueAggregation, Evaluation};
use sas_core::model::{load_checkpoint, save_checkpoint, Checkpoint, InputMode, Vocabulary};
use sas_core::training::{finetune, pre_finetune, write_history_csv, FinetuneBase, TrainedArtifact};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "sas", version, about = "Short answer scoring with rubric key phrases and cross-prompt pre-finetuning")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling and subsampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    KeyPhrase,
    PromptId,
}

impl From<ModeArg> for InputMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::KeyPhrase => InputMode::KeyPhrase,
            ModeArg::PromptId => InputMode::PromptId,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Min,
    Joined,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Settings x finetuning sizes x seeds x targets.
    Size,
    /// Pre-finetuning prompt counts under a fixed answer budget.
    Count,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Line,
    Scatter,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a TOML spec.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the pooled answers of every non-excluded prompt.
    PreFinetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Prompts held out of the pool (comma separated).
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        /// Checkpoint path; the epoch log goes next to it as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune on n answers of one prompt, from a checkpoint or from scratch.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        n_train: usize,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Pre-finetuned checkpoint to start from.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one prompt's answers with a checkpoint and print QWK.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Defaults to the mode stored in the checkpoint.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Predictions CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-shot evaluation and cue-distance study on a held-out prompt.
    ZeroShot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, default_value = "min")]
        aggregation: AggregationArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a resumable sweep; finished cells are skipped.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Target prompts (comma separated); every other prompt forms the pool.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        #[arg(long, value_enum, default_value = "size")]
        kind: SweepKind,
        /// Settings to run (defaults: all four for `size`, PRE_FINETUNE_KEY_PHRASE for `count`).
        #[arg(long, value_delimiter = ',')]
        settings: Vec<Setting>,
        /// Seeds to run (overrides the config's sweep seeds).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Results directory.
        #[arg(long, env = "SAS_RESULTS_DIR", default_value = "results")]
        out: PathBuf,
    },
    /// Render an aggregate CSV (line chart) or a cue-distance CSV (scatter) as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
        #[arg(long, value_enum)]
        x: Option<plot::XAxis>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

fn load_dir(dir: &Path) -> Result<Dataset> {
    Ok(load_dataset(&dir.join(PROMPTS_FILE), &dir.join(ANSWERS_FILE))?)
}

fn target_prompt(data: &Dataset, cfg: &RunConfig, prompt: &str) -> Result<Dataset> {
    if data.prompt(prompt).is_none() {
        bail!(sas_core::Error::Argument(format!("unknown prompt {prompt}")));
    }
    Ok(make_splits(&data.restrict(&[prompt])?, cfg.target_splits(), cfg.split_seed())?)
}

fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.csv")
}

fn save_artifact(out: &Path, artifact: &TrainedArtifact, metadata: BTreeMap<String, String>) -> Result<()> {
    save_checkpoint(
        out,
        &Checkpoint {
            model: artifact.model.clone(),
            mode: Some(artifact.mode),
            metadata,
        },
    )?;
    write_history_csv(&history_path(out), &artifact.history)?;
    Ok(())
}

fn write_predictions(path: &Path, eval: &Evaluation) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for p in &eval.predictions {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

fn checkpoint_artifact(path: &Path, mode: Option<ModeArg>) -> Result<TrainedArtifact> {
    let ck = load_checkpoint(path)?;
    let mode = match (mode, ck.mode) {
        (Some(m), _) => m.into(),
        (None, Some(m)) => m,
        (None, None) => bail!(sas_core::Error::Argument(format!(
            "{} records no input mode; pass --mode",
            path.display()
        ))),
    };
    let train_answer_ids = ck
        .metadata
        .get("train_answer_ids")
        .map(|ids| ids.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    Ok(TrainedArtifact {
        model: ck.model,
        history: Vec::new(),
        selected_epoch: ck.metadata.get("selected_epoch").and_then(|e| e.parse().ok()).unwrap_or(0),
        mode,
        train_answer_ids,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.seed(cli.seed);
    match cli.command {
        Command::GenSynth { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SyntheticSpec = toml::from_str(&text)
                .map_err(|e| sas_core::Error::Config(format!("{}: {e}", spec.display())))?;
            let ds = generate_synthetic_corpus(&spec)?;
            ds.write_jsonl(&out)?;
            println!(
                "wrote {} prompts and {} answers to {}",
                ds.num_prompts(),
                ds.answers().len(),
                out.display()
            );
        }
        Command::PreFinetune { data, mode, exclude, out } => {
            let all = load_dir(&data)?;
            if let Some(e) = exclude.iter().find(|e| all.prompt(e).is_none()) {
                bail!(sas_core::Error::Argument(format!("unknown prompt {e} in --exclude")));
            }
            let keep: Vec<&str> = all.prompt_ids().filter(|id| !exclude.iter().any(|e| e == id)).collect();
            if keep.is_empty() {
                bail!(sas_core::Error::Argument("no prompts left in the pool".into()));
            }
            let pool = make_splits(&all.restrict(&keep)?, cfg.pool_splits(), cfg.split_seed())?;
            let stages = cfg.stages();
            let vocab = Arc::new(Vocabulary::from_dataset(&all, &stages.encoder.key_phrase_delimiter));
            let config = stages.pre_finetune.with_seed(seed);
            let artifact = pre_finetune(&pool, vocab, &stages.encoder, &config, mode.into())?;
            let metadata = BTreeMap::from([
                ("stage".to_string(), "pre_finetune".to_string()),
                ("seed".to_string(), seed.to_string()),
                ("selected_epoch".to_string(), artifact.selected_epoch.to_string()),
                ("pool_prompts".to_string(), keep.join(",")),
                ("train_answer_ids".to_string(), artifact.train_answer_ids.join(",")),
            ]);
            save_artifact(&out, &artifact, metadata)?;
            let last = artifact.history.last().expect("at least one epoch");
            println!(
                "pre-finetuned on {} prompts / {} answers; epoch {} selected; final train loss {:.5}{}",
                keep.len(),
                artifact.train_answer_ids.len(),
                artifact.selected_epoch,
                last.train_loss,
                last.dev_qwk.map(|q| format!(", dev QWK {q:.4}")).unwrap_or_default()
            );
        }
        Command::Finetune { data, prompt, n_train, mode, base, out } => {
            let all = load_dir(&data)?;
            let target = target_prompt(&all, &cfg, &prompt)?;
            let stages = cfg.stages();
            let config = stages.finetune.with_seed(seed);
            let vocab = Arc::new(Vocabulary::from_dataset(&all, &stages.encoder.key_phrase_delimiter));
            let base_model = base.as_deref().map(load_checkpoint).transpose()?.map(|c| c.model);
            let start = match &base_model {
                Some(m) => FinetuneBase::PreFinetuned(m),
                None => FinetuneBase::Fresh {
                    encoder: &stages.encoder,
                    vocab: &vocab,
                },
            };
            let artifact = finetune(start, &target, &prompt, n_train, &config, mode.into())?;
            let metadata = BTreeMap::from([
                ("stage".to_string(), "finetune".to_string()),
                ("seed".to_string(), seed.to_string()),
                ("prompt_id".to_string(), prompt.clone()),
                ("n_train".to_string(), n_train.to_string()),
                ("selected_epoch".to_string(), artifact.selected_epoch.to_string()),
                ("train_answer_ids".to_string(), artifact.train_answer_ids.join(",")),
            ]);
            save_artifact(&out, &artifact, metadata)?;
            let sel = artifact.selected();
            println!(
                "finetuned {prompt} on {n_train} answers; epoch {} selected (dev QWK {:.4})",
                sel.epoch,
                sel.dev_qwk.unwrap_or(f64::NAN)
            );
        }
        Command::Evaluate { data, checkpoint, prompt, mode, split, out } => {
            let all = load_dir(&data)?;
            let target = target_prompt(&all, &cfg, &prompt)?;
            let artifact = checkpoint_artifact(&checkpoint, mode)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Dev => Split::Dev,
                SplitArg::Test => Split::Test,
            };
            let answers = target.prompt_answers_in(&prompt, split);
            let p = target.prompt(&prompt).expect("restricted to prompt");
            let eval = evaluate_model(&artifact.model, p, &answers, artifact.mode)?;
            write_predictions(&out, &eval)?;
            println!("QWK {:.6}", eval.qwk);
        }
        Command::ZeroShot { data, checkpoint, prompt, mode, aggregation, out } => {
            let all = load_dir(&data)?;
            let target = target_prompt(&all, &cfg, &prompt)?;
            let artifact = checkpoint_artifact(&checkpoint, mode)?;
            let aggregation = match aggregation {
                AggregationArg::Min => CueAggregation::MinOverPhrases,
                AggregationArg::Joined => CueAggregation::JoinedSequence,
            };
            fs::create_dir_all(&out)?;
            let eval = zero_shot_eval(&artifact, &target, &prompt, artifact.mode)?;
            write_predictions(&out.join("predictions.csv"), &eval)?;
            let study = distance_prediction_study(&artifact, &target, &prompt, artifact.mode, aggregation)?;
            study.write_csv(&out.join("distance.csv"))?;
            study.write_summary(&out.join("distance.json"))?;
            println!(
                "zero-shot QWK {:.6} on {} answers; r(distance, prediction) {:.4} over {} cue rows ({} without cue)",
                eval.qwk,
                evaluation_answers(&target, &prompt).len(),
                study.pearson_r,
                study.rows.len(),
                study.excluded
            );
        }
        Command::Sweep { data, targets, kind, settings, seeds, workers, out } => {
            let all = load_dir(&data)?;
            if let Some(t) = targets.iter().find(|t| all.prompt(t).is_none()) {
                bail!(sas_core::Error::Argument(format!("unknown target prompt {t}")));
            }
            let pool_ids: Vec<&str> = all.prompt_ids().filter(|id| !targets.iter().any(|t| t == id)).collect();
            let pool = make_splits(&all.restrict(&pool_ids)?, cfg.pool_splits(), cfg.split_seed())?;
            let target = make_splits(&all.restrict(&targets)?, cfg.target_splits(), cfg.split_seed())?;
            let mut sweep = cfg.sweep();
            if !seeds.is_empty() {
                sweep.seeds = seeds;
            }
            sweep.validate()?;
            let store = ResultsStore::open(&out)?;
            let exp = Experiment::new(pool, target, cfg.stages())?
                .with_store(store)
                .with_workers(workers);
            let results: Vec<RunResult> = match kind {
                SweepKind::Size => {
                    let settings = if settings.is_empty() { cfg.settings() } else { settings };
                    exp.sweep_finetune_size(&settings, &sweep.finetune_sizes, &sweep.seeds)?
                }
                SweepKind::Count => {
                    let setting = match settings.as_slice() {
                        [] => Setting::PreFinetuneKeyPhrase,
                        [s] => *s,
                        _ => bail!(sas_core::Error::Argument("count sweeps take one setting".into())),
                    };
                    exp.sweep_prompt_count(
                        setting,
                        &sweep.prompt_counts,
                        sweep.budget,
                        sweep.prompt_count_n_train,
                        &sweep.seeds,
                    )?
                }
            };
            let rows = aggregate_over_seeds(&results);
            let agg_path = out.join("aggregate.csv");
            write_aggregate_csv(&agg_path, &rows)?;
            info!("{} pre-finetuning runs trained", exp.pre_finetune_runs());
            for r in &rows {
                println!(
                    "{:<24} n_train={:<4} prompts={:<4} QWK {:.4} ± {:.4} ({} seeds)",
                    r.setting.map(|s| s.to_string()).unwrap_or_default(),
                    r.n_train.map(|n| n.to_string()).unwrap_or_default(),
                    r.prompt_count.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
                    r.mean_qwk,
                    r.std_qwk,
                    r.n
                );
            }
            println!("{} cells; aggregate written to {}", results.len(), agg_path.display());
        }
        Command::Plot { input, out, kind, x, title } => {
            let n = match kind {
                PlotKind::Line => plot::line_chart(&input, &out, x, &title)?,
                PlotKind::Scatter => plot::scatter(&input, &out, &title)?,
            };
            println!("wrote {} ({n} {})", out.display(), match kind {
                PlotKind::Line => "series",
                PlotKind::Scatter => "points",
            });
        }
    }
    Ok(())
}

/// 2 for invalid input (configs, specs, arguments, data files), 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use sas_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Validation { .. } | E::Range(_) | E::Parse { .. } | E::Argument(_) | E::Sizing { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
