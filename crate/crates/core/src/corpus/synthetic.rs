//! Synthetic corpora in which an answer's score is exactly the number of
//! rubric key phrases it contains.
//!
//! Every prompt draws `max_score` two-word key phrases from a shared pool of
//! pseudo-words. An answer has one slot per key phrase; a slot either holds
//! its key phrase (each word swapped for a fixed synonym with probability
//! `paraphrase_noise_rate`) or a filler phrase of unrelated content words.
//! Because every answer carries the same number of content words, the score
//! is only recoverable by relating the answer to the prompt's key phrases.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Answer, Dataset, Prompt};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const CONTENT_WORDS: usize = 128;
const PHRASE_LEN: usize = 2;
const MAX_SYNTHETIC_SCORE: u32 = 24;
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "of", "and", "is", "that", "it", "to", "in", "so", "because", "this", "was",
    "as", "with", "by",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_prompts: usize,
    pub answers_per_prompt: usize,
    pub max_score: u32,
    pub vocabulary_seed: u64,
    pub paraphrase_noise_rate: f64,
    pub distractor_rate: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts < 1 || self.answers_per_prompt < 1 {
            return Err(Error::Config("num_prompts and answers_per_prompt must be >= 1".into()));
        }
        if !(1..=MAX_SYNTHETIC_SCORE).contains(&self.max_score) {
            return Err(Error::Config(format!(
                "max_score must lie in [1, {MAX_SYNTHETIC_SCORE}], got {}",
                self.max_score
            )));
        }
        for (name, rate) in [
            ("paraphrase_noise_rate", self.paraphrase_noise_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        Ok(())
    }
}

struct Lexicon {
    content: Vec<String>,
    synonyms: Vec<String>,
}

impl Lexicon {
    fn generate(rng: &mut ChaCha8Rng) -> Self {
        let mut seen: HashSet<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        let mut words = Vec::with_capacity(2 * CONTENT_WORDS);
        while words.len() < 2 * CONTENT_WORDS {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let synonyms = words.split_off(CONTENT_WORDS);
        Self {
            content: words,
            synonyms,
        }
    }
}

/// Generates a corpus whose prompts are `synth_000`, `synth_001`, ... with
/// answers `<prompt>-0000`, ... Deterministic in `vocabulary_seed`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let seed = spec.vocabulary_seed;
    let lexicon = Lexicon::generate(&mut rng_for(seed, "synthetic/lexicon"));
    let phrases_per_prompt = spec.max_score as usize;

    let mut prompts = Vec::with_capacity(spec.num_prompts);
    let mut answers = Vec::with_capacity(spec.num_prompts * spec.answers_per_prompt);
    for k in 0..spec.num_prompts {
        let prompt_id = format!("synth_{k:03}");
        let mut rng = rng_for(seed, &format!("synthetic/prompt/{k}"));
        let mut indices: Vec<usize> = (0..CONTENT_WORDS).collect();
        indices.shuffle(&mut rng);
        let (kp_words, rest) = indices.split_at(phrases_per_prompt * PHRASE_LEN);
        let key_phrases: Vec<Vec<usize>> = kp_words.chunks(PHRASE_LEN).map(<[usize]>::to_vec).collect();
        let fillers: Vec<usize> = rest.to_vec();

        let prompt = Prompt {
            prompt_id: prompt_id.clone(),
            max_score: spec.max_score,
            key_phrases: key_phrases
                .iter()
                .map(|p| words(&lexicon.content, p))
                .collect(),
            question_text: Some(format!("Synthetic criterion {k}")),
        };

        let mut rng = rng_for(seed, &format!("synthetic/answers/{k}"));
        for i in 0..spec.answers_per_prompt {
            let (text, raw_score, cue) = synthesize_answer(&mut rng, spec, &lexicon, &key_phrases, &fillers);
            answers.push(Answer {
                answer_id: format!("{prompt_id}-{i:04}"),
                prompt_id: prompt_id.clone(),
                text,
                raw_score,
                justification_cue: cue,
            });
        }
        prompts.push(prompt);
    }
    Dataset::new(prompts, answers)
}

fn words(lexicon: &[String], indices: &[usize]) -> String {
    indices
        .iter()
        .map(|&i| lexicon[i].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn synthesize_answer(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    lexicon: &Lexicon,
    key_phrases: &[Vec<usize>],
    fillers: &[usize],
) -> (String, u32, Option<String>) {
    let n = key_phrases.len();
    let included_count = rng.gen_range(0..=n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let included: BTreeSet<usize> = order[..included_count].iter().copied().collect();

    let mut realized = vec![String::new(); n];
    let mut slots: Vec<String> = Vec::with_capacity(n);
    for (j, phrase) in key_phrases.iter().enumerate() {
        if included.contains(&j) {
            let text = phrase
                .iter()
                .map(|&w| {
                    if rng.gen_bool(spec.paraphrase_noise_rate) {
                        lexicon.synonyms[w].as_str()
                    } else {
                        lexicon.content[w].as_str()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            realized[j] = text.clone();
            slots.push(text);
        } else {
            let filler: Vec<usize> = fillers.choose_multiple(rng, PHRASE_LEN).copied().collect();
            slots.push(words(&lexicon.content, &filler));
        }
    }
    slots.shuffle(rng);

    let mut tokens: Vec<&str> = vec![FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())]];
    for (pos, slot) in slots.iter().enumerate() {
        tokens.push(slot);
        if rng.gen_bool(spec.distractor_rate) {
            tokens.push(&lexicon.content[fillers[rng.gen_range(0..fillers.len())]]);
        }
        if pos + 1 < slots.len() {
            tokens.push(FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())]);
        }
    }

    let cue = (included_count > 0).then(|| {
        included
            .iter()
            .map(|&j| realized[j].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    });
    (tokens.join(" "), included_count as u32, cue)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(max_score: u32, answers: usize, noise: f64, distractor: f64) -> SyntheticSpec {
        SyntheticSpec {
            num_prompts: 1,
            answers_per_prompt: answers,
            max_score,
            vocabulary_seed: 11,
            paraphrase_noise_rate: noise,
            distractor_rate: distractor,
        }
    }

    #[test]
    fn zero_noise_full_score_answers_contain_every_key_phrase() {
        let ds = generate_synthetic_corpus(&spec(2, 4, 0.0, 0.0)).unwrap();
        let prompt = ds.prompts().next().unwrap();
        assert_eq!(prompt.key_phrases.len(), 2);
        let mut checked = 0;
        for a in ds.answers().iter().filter(|a| a.raw_score == 2) {
            for kp in &prompt.key_phrases {
                assert!(a.text.contains(kp.as_str()), "{:?} lacks {kp:?}", a.text);
            }
            checked += 1;
        }
        // larger corpus so the check is never vacuous
        let ds = generate_synthetic_corpus(&spec(2, 200, 0.0, 0.7)).unwrap();
        let prompt = ds.prompts().next().unwrap();
        for a in ds.answers().iter().filter(|a| a.raw_score == 2) {
            for kp in &prompt.key_phrases {
                assert!(a.text.contains(kp.as_str()));
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SyntheticSpec {
            num_prompts: 3,
            ..spec(3, 50, 0.2, 0.3)
        };
        assert_eq!(generate_synthetic_corpus(&s).unwrap(), generate_synthetic_corpus(&s).unwrap());
        let other = SyntheticSpec {
            vocabulary_seed: 12,
            ..s.clone()
        };
        assert_ne!(generate_synthetic_corpus(&s).unwrap(), generate_synthetic_corpus(&other).unwrap());
    }

    #[test]
    fn raw_scores_are_uniform() {
        let ds = generate_synthetic_corpus(&spec(3, 10_000, 0.2, 0.3)).unwrap();
        let mut counts = [0usize; 4];
        for a in ds.answers() {
            counts[a.raw_score as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.25).abs() <= 0.02, "bin fraction {frac}");
        }
    }

    #[test]
    fn cue_present_iff_score_positive() {
        let ds = generate_synthetic_corpus(&spec(3, 300, 0.0, 0.3)).unwrap();
        let prompt = ds.prompts().next().unwrap();
        for a in ds.answers() {
            match &a.justification_cue {
                None => assert_eq!(a.raw_score, 0),
                Some(cue) => {
                    assert_eq!(cue.split(", ").count() as u32, a.raw_score);
                    for part in cue.split(", ") {
                        assert!(prompt.key_phrases.iter().any(|k| k == part));
                        assert!(a.text.contains(part));
                    }
                }
            }
        }
    }

    #[test]
    fn key_phrases_are_distinct() {
        let ds = generate_synthetic_corpus(&SyntheticSpec {
            num_prompts: 10,
            ..spec(6, 5, 0.0, 0.0)
        })
        .unwrap();
        for p in ds.prompts() {
            let set: HashSet<&String> = p.key_phrases.iter().collect();
            assert_eq!(set.len(), p.key_phrases.len());
        }
    }

    #[test]
    fn rejects_out_of_range_rates() {
        assert!(spec(3, 10, 0.2, 1.5).validate().is_err());
        assert!(spec(3, 10, -0.1, 0.0).validate().is_err());
        assert!(spec(0, 10, 0.0, 0.0).validate().is_err());
        assert!(SyntheticSpec {
            num_prompts: 0,
            ..spec(3, 10, 0.0, 0.0)
        }
        .validate()
        .is_err());
    }
}
