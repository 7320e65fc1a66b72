//! Prompts, graded answers, score normalization and per-prompt splits.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

/// One analytic criterion: its own score range `0..=max_score` and the
/// ordered key phrases taken from its rubric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub max_score: u32,
    pub key_phrases: Vec<String>,
    #[serde(default)]
    pub question_text: Option<String>,
}

impl Prompt {
    fn validate(&self) -> Result<()> {
        if self.prompt_id.is_empty() {
            return Err(Error::validation("prompt <empty id>", "prompt_id is empty"));
        }
        let record = format!("prompt {}", self.prompt_id);
        if self.max_score < 1 {
            return Err(Error::validation(record, "max_score must be >= 1"));
        }
        if self.key_phrases.is_empty() {
            return Err(Error::validation(record, "at least one key phrase is required"));
        }
        if self.key_phrases.iter().any(|k| k.trim().is_empty()) {
            return Err(Error::validation(record, "key phrases must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub answer_id: String,
    pub prompt_id: String,
    pub text: String,
    #[serde(rename = "score")]
    pub raw_score: u32,
    #[serde(default)]
    pub justification_cue: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Requested number of answers per split for one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const fn new(train: usize, dev: usize, test: usize) -> Self {
        Self { train, dev, test }
    }

    /// Target-prompt split sizes used for the evaluation prompts.
    pub const fn target_default() -> Self {
        Self::new(200, 50, 250)
    }

    /// Per-criterion split of the pre-finetuning pool.
    pub const fn pool_default() -> Self {
        Self::new(480, 20, 0)
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// A validated, immutable collection of prompts, answers and (optionally)
/// split assignments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    prompts: BTreeMap<String, Prompt>,
    answers: Vec<Answer>,
    splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(prompts: Vec<Prompt>, answers: Vec<Answer>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in prompts {
            p.validate()?;
            if map.contains_key(&p.prompt_id) {
                return Err(Error::validation(
                    format!("prompt {}", p.prompt_id),
                    "duplicate prompt_id",
                ));
            }
            map.insert(p.prompt_id.clone(), p);
        }
        let mut seen = HashSet::new();
        for a in &answers {
            let record = format!("answer {}", a.answer_id);
            if !seen.insert(a.answer_id.as_str()) {
                return Err(Error::validation(record, "duplicate answer_id"));
            }
            let Some(prompt) = map.get(&a.prompt_id) else {
                return Err(Error::validation(
                    record,
                    format!("unknown prompt_id {:?}", a.prompt_id),
                ));
            };
            if a.raw_score > prompt.max_score {
                return Err(Error::validation(
                    record,
                    format!(
                        "score {} outside [0, {}] of prompt {}",
                        a.raw_score, prompt.max_score, prompt.prompt_id
                    ),
                ));
            }
            if matches!(&a.justification_cue, Some(c) if c.is_empty()) {
                return Err(Error::validation(record, "justification_cue present but empty"));
            }
        }
        Ok(Self {
            prompts: map,
            answers,
            splits: BTreeMap::new(),
        })
    }

    /// Attaches split assignments; every key must name an answer of this dataset.
    pub fn with_splits(mut self, splits: BTreeMap<String, Split>) -> Result<Self> {
        let ids: HashSet<&str> = self.answers.iter().map(|a| a.answer_id.as_str()).collect();
        if let Some(unknown) = splits.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::validation(
                format!("split entry {unknown}"),
                "no such answer",
            ));
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn prompts(&self) -> impl Iterator<Item = &Prompt> {
        self.prompts.values()
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.keys().map(String::as_str)
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<&Prompt> {
        self.prompts.get(prompt_id)
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn split_of(&self, answer_id: &str) -> Option<Split> {
        self.splits.get(answer_id).copied()
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn answers_for<'a>(&'a self, prompt_id: &'a str) -> impl Iterator<Item = &'a Answer> + 'a {
        self.answers.iter().filter(move |a| a.prompt_id == prompt_id)
    }

    /// Answers of one split in file order, across all prompts.
    pub fn answers_in(&self, split: Split) -> Vec<&Answer> {
        self.answers
            .iter()
            .filter(|a| self.split_of(&a.answer_id) == Some(split))
            .collect()
    }

    pub fn prompt_answers_in(&self, prompt_id: &str, split: Split) -> Vec<&Answer> {
        self.answers
            .iter()
            .filter(|a| a.prompt_id == prompt_id && self.split_of(&a.answer_id) == Some(split))
            .collect()
    }

    /// Keeps only the named prompts, their answers and split assignments.
    pub fn restrict<S: AsRef<str>>(&self, prompt_ids: &[S]) -> Result<Self> {
        let keep: BTreeSet<&str> = prompt_ids.iter().map(AsRef::as_ref).collect();
        if let Some(missing) = keep.iter().find(|id| !self.prompts.contains_key(**id)) {
            return Err(Error::Argument(format!("unknown prompt_id {missing:?}")));
        }
        let prompts = self
            .prompts
            .iter()
            .filter(|(id, _)| keep.contains(id.as_str()))
            .map(|(id, p)| (id.clone(), p.clone()))
            .collect();
        let answers: Vec<Answer> = self
            .answers
            .iter()
            .filter(|a| keep.contains(a.prompt_id.as_str()))
            .cloned()
            .collect();
        let splits = answers
            .iter()
            .filter_map(|a| self.split_of(&a.answer_id).map(|s| (a.answer_id.clone(), s)))
            .collect();
        Ok(Self {
            prompts,
            answers,
            splits,
        })
    }

    /// Replaces the answer list with a subset of this dataset's answers,
    /// keeping all prompts and carrying over split assignments.
    pub fn with_answer_subset(&self, answer_ids: &[&str]) -> Result<Self> {
        let keep: HashSet<&str> = answer_ids.iter().copied().collect();
        let answers: Vec<Answer> = self
            .answers
            .iter()
            .filter(|a| keep.contains(a.answer_id.as_str()))
            .cloned()
            .collect();
        if answers.len() != keep.len() {
            return Err(Error::Argument("answer subset names unknown answers".into()));
        }
        let splits = answers
            .iter()
            .filter_map(|a| self.split_of(&a.answer_id).map(|s| (a.answer_id.clone(), s)))
            .collect();
        Ok(Self {
            prompts: self.prompts.clone(),
            answers,
            splits,
        })
    }

    /// Writes `prompts.jsonl` and `answers.jsonl` into `dir`.
    pub fn write_jsonl(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join(PROMPTS_FILE), self.prompts.values())?;
        write_lines(&dir.join(ANSWERS_FILE), self.answers.iter())?;
        Ok(())
    }
}

pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";

fn write_lines<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Reads the prompts and answers JSON Lines files and validates them.
pub fn load_dataset(prompts_path: &Path, answers_path: &Path) -> Result<Dataset> {
    let prompts = read_lines(prompts_path)?;
    let answers = read_lines(answers_path)?;
    Dataset::new(prompts, answers)
}

/// `raw / max_score`.
pub fn normalize_score(raw: u32, max_score: u32) -> Result<f64> {
    if max_score < 1 {
        return Err(Error::Range(format!("max_score {max_score} < 1")));
    }
    if raw > max_score {
        return Err(Error::Range(format!("raw score {raw} > max_score {max_score}")));
    }
    Ok(f64::from(raw) / f64::from(max_score))
}

/// Maps a prediction in `[0, 1]` back to the integer range `0..=max_score`,
/// rounding half away from zero.
pub fn rescale_to_raw(predicted: f64, max_score: u32) -> Result<u32> {
    if !(0.0..=1.0).contains(&predicted) {
        return Err(Error::Range(format!("prediction {predicted} outside [0, 1]")));
    }
    let raw = (predicted * f64::from(max_score)).round();
    Ok((raw as u32).min(max_score))
}

/// Assigns `sizes` answers per prompt to train/dev/test by seeded uniform
/// sampling without replacement. Leftover answers stay unassigned.
pub fn make_splits(dataset: &Dataset, sizes: SplitSizes, seed: u64) -> Result<Dataset> {
    make_splits_by(dataset, |_| sizes, seed)
}

/// Like [`make_splits`] with sizes chosen per prompt.
pub fn make_splits_by(
    dataset: &Dataset,
    sizes_for: impl Fn(&Prompt) -> SplitSizes,
    seed: u64,
) -> Result<Dataset> {
    let mut splits = BTreeMap::new();
    for prompt in dataset.prompts() {
        let sizes = sizes_for(prompt);
        let mut ids: Vec<&str> = dataset
            .answers_for(&prompt.prompt_id)
            .map(|a| a.answer_id.as_str())
            .collect();
        if ids.len() < sizes.total() {
            return Err(Error::sizing(
                &prompt.prompt_id,
                format!(
                    "has {} answers, split needs {} ({}/{}/{})",
                    ids.len(),
                    sizes.total(),
                    sizes.train,
                    sizes.dev,
                    sizes.test
                ),
            ));
        }
        let mut rng = rng_for(seed, &format!("split/{}", prompt.prompt_id));
        ids.shuffle(&mut rng);
        let labels = std::iter::repeat_n(Split::Train, sizes.train)
            .chain(std::iter::repeat_n(Split::Dev, sizes.dev))
            .chain(std::iter::repeat_n(Split::Test, sizes.test));
        for (id, split) in ids.into_iter().zip(labels) {
            splits.insert(id.to_string(), split);
        }
    }
    dataset.clone().with_splits(splits)
}
