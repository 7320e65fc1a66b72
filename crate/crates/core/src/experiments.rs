//! The four training settings, sweeps over finetuning size and
//! pre-finetuning prompt count, aggregation, and a resumable results store.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::evaluation_answers;
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::evaluate_model;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, EncoderConfig, InputMode, Vocabulary};
use crate::seed::rng_for;
use crate::training::{finetune, pre_finetune, FinetuneBase, TrainConfig, TrainedArtifact};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Setting {
    Baseline,
    KeyPhrase,
    PreFinetune,
    PreFinetuneKeyPhrase,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::Baseline,
        Setting::KeyPhrase,
        Setting::PreFinetune,
        Setting::PreFinetuneKeyPhrase,
    ];

    pub fn mode(self) -> InputMode {
        match self {
            Setting::Baseline | Setting::PreFinetune => InputMode::PromptId,
            Setting::KeyPhrase | Setting::PreFinetuneKeyPhrase => InputMode::KeyPhrase,
        }
    }

    pub fn pre_finetunes(self) -> bool {
        matches!(self, Setting::PreFinetune | Setting::PreFinetuneKeyPhrase)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Baseline => "BASELINE",
            Setting::KeyPhrase => "KEY_PHRASE",
            Setting::PreFinetune => "PRE_FINETUNE",
            Setting::PreFinetuneKeyPhrase => "PRE_FINETUNE_KEY_PHRASE",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown setting {s:?}")))
    }
}

/// Encoder and per-stage training configuration shared by every cell. The
/// run seed replaces the seeds stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfigs {
    pub encoder: EncoderConfig,
    pub pre_finetune: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::tiny_transformer(),
            pre_finetune: TrainConfig::pre_finetune_default(),
            finetune: TrainConfig::finetune_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub setting: Setting,
    pub prompt_id: String,
    pub n_train: usize,
    pub seed: u64,
    pub test_qwk: f64,
    /// Number of pool prompts used for pre-finetuning in prompt-count sweeps.
    #[serde(default)]
    pub prompt_count: Option<usize>,
    pub selected_epoch: usize,
    /// Content address of the pre-finetuned model, when one was used.
    #[serde(default)]
    pub pre_finetune_key: Option<String>,
    #[serde(default)]
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunResult {
    /// Identity of the cell this result fills.
    pub fn key(&self) -> String {
        cell_key(self.setting, &self.prompt_id, self.n_train, self.prompt_count, self.seed)
    }
}

fn cell_key(setting: Setting, prompt_id: &str, n_train: usize, prompt_count: Option<usize>, seed: u64) -> String {
    let count = prompt_count.map_or_else(|| "all".to_string(), |c| c.to_string());
    let prompt: String = prompt_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{setting}__{prompt}__n{n_train}__c{count}__s{seed}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sizes")]
    pub finetune_sizes: Vec<usize>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_counts")]
    pub prompt_counts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Finetuning size in prompt-count sweeps.
    #[serde(default = "default_count_n_train")]
    pub prompt_count_n_train: usize,
}

fn default_sizes() -> Vec<usize> {
    vec![10, 25, 50, 100, 200]
}
fn default_budget() -> usize {
    1600
}
fn default_counts() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64]
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_count_n_train() -> usize {
    50
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            finetune_sizes: default_sizes(),
            budget: default_budget(),
            prompt_counts: default_counts(),
            seeds: default_seeds(),
            prompt_count_n_train: default_count_n_train(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.finetune_sizes.contains(&0) || self.prompt_count_n_train == 0 {
            return Err(Error::Config("finetuning sizes must be positive".into()));
        }
        for &c in &self.prompt_counts {
            if c == 0 || self.budget % c != 0 {
                return Err(Error::Config(format!(
                    "budget {} is not divisible by prompt count {c}",
                    self.budget
                )));
            }
        }
        Ok(())
    }
}

/// One JSON file per cell under `<root>/cells`, pre-finetuned checkpoints
/// under `<root>/pre_finetune`.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    root: PathBuf,
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["cells", "pre_finetune"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn cell_path(&self, key: &str) -> PathBuf {
        self.root.join("cells").join(format!("{key}.json"))
    }

    pub fn checkpoint_path(&self, pre_finetune_key: &str) -> PathBuf {
        self.root.join("pre_finetune").join(format!("{pre_finetune_key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<RunResult>> {
        let path = self.cell_path(key);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes through a temporary file so readers never see a partial cell.
    pub fn put(&self, result: &RunResult) -> Result<()> {
        let path = self.cell_path(&result.key());
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(result)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Every stored result, ordered by cell key.
    pub fn load_all(&self) -> Result<Vec<RunResult>> {
        let dir = self.root.join("cells");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_slice(&bytes)?)
            })
            .collect()
    }
}

/// Pool and target datasets (both already split), stage configurations and
/// the shared vocabulary, plus caches of pre-finetuned models.
pub struct Experiment {
    pub pool: Dataset,
    pub target: Dataset,
    pub configs: StageConfigs,
    vocab: Arc<Vocabulary>,
    store: Option<ResultsStore>,
    workers: usize,
    cache: Mutex<HashMap<String, Arc<TrainedArtifact>>>,
    pre_finetune_runs: AtomicUsize,
}

impl Experiment {
    pub fn new(pool: Dataset, target: Dataset, configs: StageConfigs) -> Result<Self> {
        if let Some(id) = target.prompt_ids().find(|id| pool.prompt(id).is_some()) {
            return Err(Error::Argument(format!("target prompt {id} also appears in the pool")));
        }
        let vocab = Arc::new(Vocabulary::from_datasets(
            &[&pool, &target],
            &configs.encoder.key_phrase_delimiter,
        ));
        Ok(Self {
            pool,
            target,
            configs,
            vocab,
            store: None,
            workers: 1,
            cache: Mutex::new(HashMap::new()),
            pre_finetune_runs: AtomicUsize::new(0),
        })
    }

    /// Persists results and pre-finetuned checkpoints; cells already in the
    /// store are skipped by the sweeps.
    pub fn with_store(mut self, store: ResultsStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Pre-finetuning runs actually trained (cache and store hits excluded).
    pub fn pre_finetune_runs(&self) -> usize {
        self.pre_finetune_runs.load(Ordering::SeqCst)
    }

    fn stage_config(base: &TrainConfig, seed: u64) -> TrainConfig {
        base.clone().with_seed(seed)
    }

    /// Content address of a pre-finetuning run: hash of the pool subset
    /// (answer ids with their splits), mode, encoder, training config and seed.
    pub fn pre_finetune_key(&self, pool: &Dataset, mode: InputMode, seed: u64) -> Result<String> {
        let mut h = Sha256::new();
        for a in pool.answers() {
            if let Some(split) = pool.split_of(&a.answer_id) {
                h.update(format!("{}\t{}\t{:?}\t{}\n", a.prompt_id, a.answer_id, split, a.raw_score));
            }
        }
        h.update(mode.as_str());
        h.update(serde_json::to_vec(&self.configs.encoder)?);
        h.update(serde_json::to_vec(&Self::stage_config(&self.configs.pre_finetune, seed))?);
        h.update(self.vocab.len().to_le_bytes());
        Ok(hex::encode(&h.finalize()[..16]))
    }

    /// Pre-finetuned artifact for the full pool, trained on first use.
    pub fn pre_finetuned(&self, mode: InputMode, seed: u64) -> Result<Arc<TrainedArtifact>> {
        Ok(self.pre_finetuned_on(&self.pool, mode, seed)?.1)
    }

    fn pre_finetuned_on(&self, pool: &Dataset, mode: InputMode, seed: u64) -> Result<(String, Arc<TrainedArtifact>)> {
        let key = self.pre_finetune_key(pool, mode, seed)?;
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok((key, m.clone()));
        }
        let stored = self.store.as_ref().map(|s| s.checkpoint_path(&key));
        let artifact = match stored.as_deref().filter(|p| p.exists()) {
            Some(path) => {
                info!("reusing pre-finetuned checkpoint {}", path.display());
                let ck = load_checkpoint(path)?;
                TrainedArtifact {
                    model: ck.model,
                    history: Vec::new(),
                    selected_epoch: ck.metadata.get("selected_epoch").and_then(|e| e.parse().ok()).unwrap_or(0),
                    mode,
                    train_answer_ids: pool.answers_in(Split::Train).iter().map(|a| a.answer_id.clone()).collect(),
                }
            }
            None => {
                info!("pre-finetuning {key} ({} mode, seed {seed})", mode.as_str());
                let config = Self::stage_config(&self.configs.pre_finetune, seed);
                let artifact = pre_finetune(pool, self.vocab.clone(), &self.configs.encoder, &config, mode)?;
                self.pre_finetune_runs.fetch_add(1, Ordering::SeqCst);
                if let Some(path) = &stored {
                    let metadata = BTreeMap::from([
                        ("stage".to_string(), "pre_finetune".to_string()),
                        ("seed".to_string(), seed.to_string()),
                        ("selected_epoch".to_string(), artifact.selected_epoch.to_string()),
                    ]);
                    save_checkpoint(
                        path,
                        &Checkpoint {
                            model: artifact.model.clone(),
                            mode: Some(mode),
                            metadata,
                        },
                    )?;
                }
                artifact
            }
        };
        let artifact = Arc::new(artifact);
        self.cache.lock().expect("cache lock").insert(key.clone(), artifact.clone());
        Ok((key, artifact))
    }

    /// Optional pre-finetuning on `pool`, finetuning on `n_train` answers of
    /// the target prompt, then test-split evaluation.
    fn run_cell(
        &self,
        setting: Setting,
        pool: &Dataset,
        prompt_id: &str,
        n_train: usize,
        seed: u64,
    ) -> Result<RunResult> {
        let mode = setting.mode();
        let config = Self::stage_config(&self.configs.finetune, seed);
        let mut artifacts = BTreeMap::new();
        let (pre_key, base_model) = if setting.pre_finetunes() {
            let (key, model) = self.pre_finetuned_on(pool, mode, seed)?;
            if let Some(store) = &self.store {
                artifacts.insert("pre_finetune_checkpoint".to_string(), store.checkpoint_path(&key));
            }
            (Some(key), Some(model))
        } else {
            (None, None)
        };
        let base = match &base_model {
            Some(a) => FinetuneBase::PreFinetuned(&a.model),
            None => FinetuneBase::Fresh {
                encoder: &self.configs.encoder,
                vocab: &self.vocab,
            },
        };
        let artifact = finetune(base, &self.target, prompt_id, n_train, &config, mode)?;
        let prompt = self
            .target
            .prompt(prompt_id)
            .ok_or_else(|| Error::Argument(format!("unknown target prompt {prompt_id}")))?;
        let test = self.target.prompt_answers_in(prompt_id, Split::Test);
        let test = if test.is_empty() {
            evaluation_answers(&self.target, prompt_id)
        } else {
            test
        };
        let eval = evaluate_model(&artifact.model, prompt, &test, mode)?;
        Ok(RunResult {
            setting,
            prompt_id: prompt_id.to_string(),
            n_train,
            seed,
            test_qwk: eval.qwk,
            prompt_count: None,
            selected_epoch: artifact.selected_epoch,
            pre_finetune_key: pre_key,
            artifacts,
            warnings: Vec::new(),
        })
    }

    /// Runs one setting on one target prompt with every random choice
    /// derived from `seed`.
    pub fn run_setting(&self, setting: Setting, prompt_id: &str, n_train: usize, seed: u64) -> Result<RunResult> {
        self.run_cell(setting, &self.pool, prompt_id, n_train, seed)
    }

    fn in_pool<T: Send, R: Send>(&self, items: Vec<T>, f: impl Fn(T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
        if self.workers == 1 {
            return items.into_iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| items.into_par_iter().map(f).collect())
    }

    fn cached_or<F>(&self, key: &str, run: F) -> Result<RunResult>
    where
        F: FnOnce() -> Result<RunResult>,
    {
        if let Some(store) = &self.store {
            if let Some(done) = store.get(key)? {
                return Ok(done);
            }
        }
        let result = run()?;
        if let Some(store) = &self.store {
            store.put(&result)?;
        }
        Ok(result)
    }

    /// Cross product of settings × sizes × seeds × target prompts. Each
    /// pre-finetuning setting trains once per seed and is reused across
    /// sizes and targets.
    pub fn sweep_finetune_size(&self, settings: &[Setting], sizes: &[usize], seeds: &[u64]) -> Result<Vec<RunResult>> {
        let targets: Vec<String> = self.target.prompt_ids().map(String::from).collect();
        let mut cells = Vec::new();
        for &setting in settings {
            for &seed in seeds {
                for &n in sizes {
                    for t in &targets {
                        cells.push((setting, t.clone(), n, seed));
                    }
                }
            }
        }
        let pending_pre: BTreeSet<(InputMode, u64)> = cells
            .iter()
            .filter(|(s, t, n, seed)| s.pre_finetunes() && !self.is_stored(&cell_key(*s, t, *n, None, *seed)))
            .map(|(s, _, _, seed)| (s.mode(), *seed))
            .collect();
        self.in_pool(pending_pre.into_iter().collect(), |(mode, seed)| {
            self.pre_finetuned_on(&self.pool, mode, seed).map(|_| ())
        })?;
        self.in_pool(cells, |(setting, t, n, seed)| {
            self.cached_or(&cell_key(setting, &t, n, None, seed), || {
                self.run_cell(setting, &self.pool, &t, n, seed)
            })
        })
    }

    fn is_stored(&self, key: &str) -> bool {
        self.store.as_ref().is_some_and(|s| s.cell_path(key).exists())
    }

    /// Pre-finetuning pool made of `count` seeded prompts with
    /// `budget / count` training answers each (clipped to what the prompt
    /// has). Returns the subset and any clipping warnings.
    pub fn prompt_count_pool(&self, count: usize, budget: usize, seed: u64) -> Result<(Dataset, Vec<String>)> {
        if count == 0 || budget % count != 0 {
            return Err(Error::Config(format!("budget {budget} is not divisible by prompt count {count}")));
        }
        let mut ids: Vec<&str> = self.pool.prompt_ids().collect();
        if ids.len() < count {
            return Err(Error::sizing(
                "<pool>",
                format!("{count} prompts requested, pool has {}", ids.len()),
            ));
        }
        ids.shuffle(&mut rng_for(seed, &format!("prompt_count/{count}/prompts")));
        ids.truncate(count);
        ids.sort_unstable();
        let per_prompt = budget / count;
        let mut keep: Vec<&str> = Vec::new();
        let mut warnings = Vec::new();
        for id in &ids {
            let mut train = self.pool.prompt_answers_in(id, Split::Train);
            if train.len() < per_prompt {
                let msg = format!(
                    "prompt {id}: {per_prompt} answers requested, {} available; clipped",
                    train.len()
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            train.shuffle(&mut rng_for(seed, &format!("prompt_count/{count}/answers/{id}")));
            train.truncate(per_prompt);
            keep.extend(train.iter().map(|a| a.answer_id.as_str()));
            keep.extend(self.pool.prompt_answers_in(id, Split::Dev).iter().map(|a| a.answer_id.as_str()));
        }
        let subset = self.pool.restrict(&ids)?.with_answer_subset(&keep)?;
        Ok((subset, warnings))
    }

    /// For each prompt count and seed, pre-finetunes `setting` on a sampled
    /// pool subset, then finetunes on `n_train` answers of every target.
    pub fn sweep_prompt_count(
        &self,
        setting: Setting,
        counts: &[usize],
        budget: usize,
        n_train: usize,
        seeds: &[u64],
    ) -> Result<Vec<RunResult>> {
        if !setting.pre_finetunes() {
            return Err(Error::Argument(format!("{setting} has no pre-finetuning stage")));
        }
        let targets: Vec<String> = self.target.prompt_ids().map(String::from).collect();
        let mut groups = Vec::new();
        for &c in counts {
            for &seed in seeds {
                groups.push((c, seed));
            }
        }
        let nested = self.in_pool(groups, |(c, seed)| {
            let keys: Vec<String> = targets.iter().map(|t| cell_key(setting, t, n_train, Some(c), seed)).collect();
            if keys.iter().all(|k| self.is_stored(k)) {
                return keys
                    .iter()
                    .map(|k| self.store.as_ref().expect("store").get(k)?.ok_or_else(|| Error::Argument(k.clone())))
                    .collect::<Result<Vec<_>>>();
            }
            let (subset, warnings) = self.prompt_count_pool(c, budget, seed)?;
            targets
                .iter()
                .zip(&keys)
                .map(|(t, key)| {
                    self.cached_or(key, || {
                        let mut r = self.run_cell(setting, &subset, t, n_train, seed)?;
                        r.prompt_count = Some(c);
                        r.warnings = warnings.clone();
                        Ok(r)
                    })
                })
                .collect()
        })?;
        Ok(nested.into_iter().flatten().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Setting,
    PromptId,
    NTrain,
    PromptCount,
    Seed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: Option<Setting>,
    pub prompt_id: Option<String>,
    pub n_train: Option<usize>,
    pub prompt_count: Option<usize>,
    pub seed: Option<u64>,
    pub mean_qwk: f64,
    /// Population standard deviation.
    pub std_qwk: f64,
    pub n: usize,
}

type GroupKey = (Option<Setting>, Option<String>, Option<usize>, Option<usize>, Option<u64>);

fn group_key(r: &RunResult, by: &[GroupField]) -> GroupKey {
    let has = |f| by.contains(&f);
    (
        has(GroupField::Setting).then_some(r.setting),
        has(GroupField::PromptId).then(|| r.prompt_id.clone()),
        has(GroupField::NTrain).then_some(r.n_train),
        has(GroupField::PromptCount).then_some(r.prompt_count).flatten(),
        has(GroupField::Seed).then_some(r.seed),
    )
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of `test_qwk` per group, ordered
/// by group key.
pub fn aggregate(results: &[RunResult], group_by: &[GroupField]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in results {
        groups.entry(group_key(r, group_by)).or_default().push(r.test_qwk);
    }
    groups
        .into_iter()
        .map(|((setting, prompt_id, n_train, prompt_count, seed), qs)| {
            let (mean_qwk, std_qwk) = mean_std(&qs);
            AggregateRow {
                setting,
                prompt_id,
                n_train,
                prompt_count,
                seed,
                mean_qwk,
                std_qwk,
                n: qs.len(),
            }
        })
        .collect()
}

/// Per (setting, n_train, prompt_count): QWK averaged over target prompts
/// within each seed, then mean and standard deviation across seeds.
pub fn aggregate_over_seeds(results: &[RunResult]) -> Vec<AggregateRow> {
    use GroupField::*;
    let per_seed = aggregate(results, &[Setting, NTrain, PromptCount, Seed]);
    let as_results: Vec<RunResult> = per_seed
        .iter()
        .map(|row| RunResult {
            setting: row.setting.expect("grouped by setting"),
            prompt_id: String::new(),
            n_train: row.n_train.expect("grouped by n_train"),
            seed: row.seed.expect("grouped by seed"),
            test_qwk: row.mean_qwk,
            prompt_count: row.prompt_count,
            selected_epoch: 0,
            pre_finetune_key: None,
            artifacts: BTreeMap::new(),
            warnings: Vec::new(),
        })
        .collect();
    aggregate(&as_results, &[Setting, NTrain, PromptCount])
}

/// Writes `setting,n_train,prompt_count,mean_qwk,std_qwk,n_seeds`.
pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["setting", "n_train", "prompt_count", "mean_qwk", "std_qwk", "n_seeds"])?;
    for r in rows {
        w.write_record([
            r.setting.map(|s| s.to_string()).unwrap_or_default(),
            r.n_train.map(|n| n.to_string()).unwrap_or_default(),
            r.prompt_count.map(|c| c.to_string()).unwrap_or_default(),
            r.mean_qwk.to_string(),
            r.std_qwk.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
