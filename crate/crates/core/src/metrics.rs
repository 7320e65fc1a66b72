//! Agreement, string-distance and correlation measures.

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_score, rescale_to_raw, Answer, Prompt};
use crate::error::{Error, Result};
use crate::model::{build_key_phrase_sequence, InputMode, ScoringModel};

/// Quadratic weighted kappa between two integer ratings over
/// `[min_score, max_score]`.
///
/// When the expected disagreement is zero (both raters constant and equal,
/// or a single category) the value is defined as 1.0 if the sequences are
/// identical and 0.0 otherwise.
pub fn qwk(gold: &[u32], pred: &[u32], min_score: u32, max_score: u32) -> Result<f64> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(Error::Argument(format!(
            "qwk needs equal non-empty lengths, got {} and {}",
            gold.len(),
            pred.len()
        )));
    }
    if max_score < min_score {
        return Err(Error::Argument(format!("score range [{min_score}, {max_score}] is empty")));
    }
    if let Some(v) = gold.iter().chain(pred).find(|&&v| v < min_score || v > max_score) {
        return Err(Error::Range(format!("rating {v} outside [{min_score}, {max_score}]")));
    }
    let k = (max_score - min_score + 1) as usize;
    let n = gold.len() as f64;
    let mut hist_gold = vec![0.0; k];
    let mut hist_pred = vec![0.0; k];
    let mut observed = 0.0;
    for (&g, &p) in gold.iter().zip(pred) {
        hist_gold[(g - min_score) as usize] += 1.0;
        hist_pred[(p - min_score) as usize] += 1.0;
        let d = f64::from(g) - f64::from(p);
        observed += d * d;
    }
    let mut expected = 0.0;
    for (i, hg) in hist_gold.iter().enumerate() {
        for (j, hp) in hist_pred.iter().enumerate() {
            let d = i as f64 - j as f64;
            expected += d * d * hg * hp;
        }
    }
    expected /= n;
    // the common 1/(K-1)^2 weight normalization cancels in the ratio
    if expected == 0.0 {
        return Ok(if gold == pred { 1.0 } else { 0.0 });
    }
    Ok(1.0 - observed / expected)
}

/// Character-level Levenshtein distance with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer string's length in
/// characters; 0.0 for two empty strings.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

/// How a justification cue is compared with a prompt's key phrases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueAggregation {
    /// Minimum distance over the individual key phrases.
    #[default]
    MinOverPhrases,
    /// Distance to the whole delimiter-joined key-phrase sequence.
    JoinedSequence,
}

/// Distance between an answer's justification cue and the prompt's key
/// phrases; `None` when the answer carries no cue.
pub fn cue_distance(
    answer: &Answer,
    prompt: &Prompt,
    aggregation: CueAggregation,
    delimiter: &str,
) -> Option<f64> {
    let cue = answer.justification_cue.as_deref()?;
    Some(match aggregation {
        CueAggregation::MinOverPhrases => prompt
            .key_phrases
            .iter()
            .map(|k| normalized_edit_distance(cue, k))
            .fold(f64::INFINITY, f64::min),
        CueAggregation::JoinedSequence => {
            normalized_edit_distance(cue, &build_key_phrase_sequence(prompt, delimiter))
        }
    })
}

/// Sample Pearson correlation, accumulated in one pass.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(format!(
            "pearson_r needs equal lengths >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_id: String,
    pub pred_norm: f64,
    pub pred_raw: u32,
    pub gold_raw: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub qwk: f64,
    pub predictions: Vec<Prediction>,
}

/// Scores every answer, rescales the predictions to `0..=max_score` and
/// computes QWK against the raw gold scores.
pub fn evaluate_model(
    model: &ScoringModel,
    prompt: &Prompt,
    answers: &[&Answer],
    mode: InputMode,
) -> Result<Evaluation> {
    if answers.is_empty() {
        return Err(Error::Argument(format!("no test answers for prompt {}", prompt.prompt_id)));
    }
    let mut predictions = Vec::with_capacity(answers.len());
    for a in answers {
        if a.prompt_id != prompt.prompt_id {
            return Err(Error::Argument(format!(
                "answer {} belongs to prompt {}, not {}",
                a.answer_id, a.prompt_id, prompt.prompt_id
            )));
        }
        let input = model.build_input(prompt, &a.text, mode)?;
        let pred_norm = model.predict_score(&input)?;
        predictions.push(Prediction {
            answer_id: a.answer_id.clone(),
            pred_norm,
            pred_raw: rescale_to_raw(pred_norm, prompt.max_score)?,
            gold_raw: a.raw_score,
        });
    }
    let gold: Vec<u32> = predictions.iter().map(|p| p.gold_raw).collect();
    let pred: Vec<u32> = predictions.iter().map(|p| p.pred_raw).collect();
    Ok(Evaluation {
        qwk: qwk(&gold, &pred, 0, prompt.max_score)?,
        predictions,
    })
}

/// Normalized gold score of an answer under its prompt.
pub fn gold_norm(answer: &Answer, prompt: &Prompt) -> Result<f64> {
    normalize_score(answer.raw_score, prompt.max_score)
}
