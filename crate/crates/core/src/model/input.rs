use serde::{Deserialize, Serialize};

use super::tokenizer::{prompt_token, Vocabulary, SEP_ID};
use crate::corpus::Prompt;
use crate::error::{Error, Result};

/// What conditions the answer: the rubric's key phrases, or only an opaque
/// per-prompt identifier token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    KeyPhrase,
    PromptId,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::KeyPhrase => "key_phrase",
            InputMode::PromptId => "prompt_id",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "key_phrase" | "key-phrase" => Ok(InputMode::KeyPhrase),
            "prompt_id" | "prompt-id" => Ok(InputMode::PromptId),
            other => Err(Error::Argument(format!("unknown input mode {other:?}"))),
        }
    }
}

/// Token ids of `conditioning ++ [SEP] ++ answer`. Positions up to and
/// including `separator` form the conditioning segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSequence {
    pub tokens: Vec<u32>,
    pub separator: usize,
    pub mode: InputMode,
    pub prompt_id: String,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn conditioning(&self) -> &[u32] {
        &self.tokens[..self.separator]
    }

    pub fn answer(&self) -> &[u32] {
        &self.tokens[self.separator + 1..]
    }
}

pub fn build_key_phrase_sequence(prompt: &Prompt, delimiter: &str) -> String {
    prompt.key_phrases.join(delimiter)
}

/// Builds model inputs against a fixed vocabulary and length budget.
#[derive(Debug, Clone, Copy)]
pub struct InputBuilder<'a> {
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub delimiter: &'a str,
}

impl InputBuilder<'_> {
    /// The answer tail is dropped first; the conditioning segment is never
    /// truncated.
    pub fn build(&self, prompt: &Prompt, answer_text: &str, mode: InputMode) -> Result<InputSequence> {
        let mut tokens = match mode {
            InputMode::KeyPhrase => self
                .vocab
                .encode(&build_key_phrase_sequence(prompt, self.delimiter)),
            InputMode::PromptId => vec![self.vocab.id(&prompt_token(&prompt.prompt_id))],
        };
        if tokens.len() + 1 > self.max_len {
            return Err(Error::Config(format!(
                "conditioning segment of prompt {} has {} tokens; max_sequence_length {} leaves no room",
                prompt.prompt_id,
                tokens.len(),
                self.max_len
            )));
        }
        let separator = tokens.len();
        tokens.push(SEP_ID);
        let room = self.max_len - tokens.len();
        tokens.extend(self.vocab.encode(answer_text).into_iter().take(room));
        Ok(InputSequence {
            tokens,
            separator,
            mode,
            prompt_id: prompt.prompt_id.clone(),
        })
    }
}
