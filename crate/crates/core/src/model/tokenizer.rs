use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const UNK_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;

/// Reserved token standing in for a prompt when key phrases are not used.
pub fn prompt_token(prompt_id: &str) -> String {
    format!("[PROMPT_{prompt_id}]")
}

/// Splits text into word tokens. Runs of Latin-script alphanumerics form one
/// token; every other non-space character (punctuation, kana, kanji) is a
/// token of its own, since the scripts the scorer targets lack spaces.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let wordish = ch.is_alphanumeric() && (ch as u32) < 0x2E80 || ch == '_';
        if wordish {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Closed word-level vocabulary. Ids 0..3 are `[UNK]`, `[CLS]`, `[SEP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Self::from_tokens(r.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self { tokens: v.tokens }
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary from explicit word tokens plus the special tokens.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![UNK.to_string(), CLS.to_string(), SEP.to_string()];
        let specials: BTreeSet<String> = tokens.iter().cloned().collect();
        let rest: BTreeSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| !specials.contains(w))
            .collect();
        tokens.extend(rest);
        Self::from_tokens(tokens)
    }

    /// Every word of every key phrase and answer, the delimiter's tokens, and
    /// one reserved token per prompt. Sorted so construction is order-free.
    pub fn from_dataset(dataset: &Dataset, delimiter: &str) -> Self {
        Self::from_datasets(&[dataset], delimiter)
    }

    pub fn from_datasets(datasets: &[&Dataset], delimiter: &str) -> Self {
        let mut words: BTreeSet<String> = pre_tokenize(delimiter).into_iter().map(str::to_string).collect();
        for ds in datasets {
            for p in ds.prompts() {
                words.insert(prompt_token(&p.prompt_id));
                for kp in &p.key_phrases {
                    words.extend(pre_tokenize(kp).into_iter().map(str::to_string));
                }
            }
            for a in ds.answers() {
                words.extend(pre_tokenize(&a.text).into_iter().map(str::to_string));
            }
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text).into_iter().map(|t| self.id(t)).collect()
    }
}
