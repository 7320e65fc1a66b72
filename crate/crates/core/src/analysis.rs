//! Zero-shot evaluation of a pre-finetuned model and the study of how the
//! edit distance between justification cues and key phrases relates to the
//! predicted score.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Dataset, Prompt, Split};
use crate::error::{Error, Result};
use crate::metrics::{cue_distance, evaluate_model, gold_norm, pearson_r, CueAggregation, Evaluation};
use crate::model::InputMode;
use crate::training::TrainedArtifact;

/// Answers of `prompt_id` in the test split, or every answer of the prompt
/// when the dataset carries no split for it.
pub fn evaluation_answers<'a>(target: &'a Dataset, prompt_id: &str) -> Vec<&'a Answer> {
    let test = target.prompt_answers_in(prompt_id, Split::Test);
    if !test.is_empty() {
        return test;
    }
    target
        .answers()
        .iter()
        .filter(|a| a.prompt_id == prompt_id && target.split_of(&a.answer_id).is_none())
        .collect()
}

fn target_prompt<'a>(artifact: &TrainedArtifact, target: &'a Dataset, prompt_id: &str) -> Result<&'a Prompt> {
    let prompt = target
        .prompt(prompt_id)
        .ok_or_else(|| Error::Argument(format!("unknown target prompt {prompt_id}")))?;
    let seen: HashSet<&str> = artifact.train_answer_ids.iter().map(String::as_str).collect();
    if let Some(a) = target.answers_for(prompt_id).find(|a| seen.contains(a.answer_id.as_str())) {
        return Err(Error::Analysis(format!(
            "model was trained on answer {} of target prompt {prompt_id}",
            a.answer_id
        )));
    }
    Ok(prompt)
}

/// Scores the target prompt's evaluation answers with no finetuning.
pub fn zero_shot_eval(
    artifact: &TrainedArtifact,
    target: &Dataset,
    prompt_id: &str,
    mode: InputMode,
) -> Result<Evaluation> {
    let prompt = target_prompt(artifact, target, prompt_id)?;
    evaluate_model(&artifact.model, prompt, &evaluation_answers(target, prompt_id), mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub answer_id: String,
    pub cue_distance: f64,
    pub pred_norm: f64,
    pub gold_norm: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStudy {
    pub prompt_id: String,
    pub aggregation: CueAggregation,
    pub rows: Vec<DistanceRow>,
    /// Answers skipped because they carry no justification cue.
    pub excluded: usize,
    /// Correlation between cue distance and predicted score.
    pub pearson_r: f64,
}

/// Relates each cue-bearing answer's cue distance to the model's zero-shot
/// prediction.
pub fn distance_prediction_study(
    artifact: &TrainedArtifact,
    target: &Dataset,
    prompt_id: &str,
    mode: InputMode,
    aggregation: CueAggregation,
) -> Result<DistanceStudy> {
    let prompt = target_prompt(artifact, target, prompt_id)?;
    let model = &artifact.model;
    let delimiter = &model.config().key_phrase_delimiter;
    let mut rows = Vec::new();
    let mut excluded = 0;
    for a in evaluation_answers(target, prompt_id) {
        let Some(distance) = cue_distance(a, prompt, aggregation, delimiter) else {
            excluded += 1;
            continue;
        };
        let pred = model.predict_score(&model.build_input(prompt, &a.text, mode)?)?;
        let gold = gold_norm(a, prompt)?;
        rows.push(DistanceRow {
            answer_id: a.answer_id.clone(),
            cue_distance: distance,
            pred_norm: pred,
            gold_norm: gold,
            abs_error: (pred - gold).abs(),
        });
    }
    if rows.len() < 2 {
        return Err(Error::Analysis(format!(
            "prompt {prompt_id}: {} answers with a justification cue, need at least 2",
            rows.len()
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.cue_distance).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.pred_norm).collect();
    Ok(DistanceStudy {
        prompt_id: prompt_id.to_string(),
        aggregation,
        pearson_r: pearson_r(&xs, &ys)?,
        rows,
        excluded,
    })
}

#[derive(Serialize)]
struct StudySummary<'a> {
    prompt_id: &'a str,
    aggregation: CueAggregation,
    pearson_r: f64,
    rows: usize,
    excluded: usize,
}

impl DistanceStudy {
    /// Scatter-ready CSV, one row per answer.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Correlation and row counts as JSON.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let summary = StudySummary {
            prompt_id: &self.prompt_id,
            aggregation: self.aggregation,
            pearson_r: self.pearson_r,
            rows: self.rows.len(),
            excluded: self.excluded,
        };
        fs::write(path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{EncoderConfig, ScoringModel, Vocabulary};

    fn dataset(cues: &[(u32, Option<&str>)]) -> Dataset {
        let prompt = Prompt {
            prompt_id: "P".into(),
            max_score: 2,
            key_phrases: vec!["red fox".into(), "blue owl".into()],
            question_text: None,
        };
        let answers = cues
            .iter()
            .enumerate()
            .map(|(i, (score, cue))| Answer {
                answer_id: format!("a{i}"),
                prompt_id: "P".into(),
                text: cue.unwrap_or("nothing here").to_string(),
                raw_score: *score,
                justification_cue: cue.map(String::from),
            })
            .collect();
        Dataset::new(vec![prompt], answers).unwrap()
    }

    fn artifact(ds: &Dataset, trained_on: &[&str]) -> TrainedArtifact {
        let vocab = Arc::new(Vocabulary::from_dataset(ds, ", "));
        TrainedArtifact {
            model: ScoringModel::new(EncoderConfig::tiny_transformer(), vocab, 1).unwrap(),
            history: Vec::new(),
            selected_epoch: 1,
            mode: InputMode::KeyPhrase,
            train_answer_ids: trained_on.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rows_skip_cueless_answers() {
        let ds = dataset(&[(2, Some("red fox")), (0, None), (1, Some("blue owl")), (1, Some("red owl"))]);
        let study =
            distance_prediction_study(&artifact(&ds, &[]), &ds, "P", InputMode::KeyPhrase, CueAggregation::MinOverPhrases)
                .unwrap();
        assert_eq!(study.rows.len(), 3);
        assert_eq!(study.excluded, 1);
        assert_eq!(study.rows[0].cue_distance, 0.0);
        assert_eq!(study.rows[0].gold_norm, 1.0);
        for r in &study.rows {
            assert!((r.abs_error - (r.pred_norm - r.gold_norm).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn too_few_cues_is_an_error() {
        let ds = dataset(&[(2, Some("red fox")), (0, None)]);
        let res =
            distance_prediction_study(&artifact(&ds, &[]), &ds, "P", InputMode::KeyPhrase, CueAggregation::MinOverPhrases);
        assert!(matches!(res, Err(Error::Analysis(_))));
    }

    #[test]
    fn refuses_a_model_trained_on_the_target() {
        let ds = dataset(&[(2, Some("red fox")), (1, Some("blue owl"))]);
        assert!(zero_shot_eval(&artifact(&ds, &["a1"]), &ds, "P", InputMode::KeyPhrase).is_err());
        assert!(zero_shot_eval(&artifact(&ds, &["zzz"]), &ds, "P", InputMode::KeyPhrase).is_ok());
    }

    #[test]
    fn outputs_are_written() {
        let ds = dataset(&[(2, Some("red fox")), (1, Some("blue owl")), (0, None)]);
        let study =
            distance_prediction_study(&artifact(&ds, &[]), &ds, "P", InputMode::KeyPhrase, CueAggregation::JoinedSequence)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        study.write_csv(&dir.path().join("s.csv")).unwrap();
        study.write_summary(&dir.path().join("s.json")).unwrap();
        let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(csv.starts_with("answer_id,cue_distance,pred_norm,gold_norm,abs_error"));
        assert_eq!(csv.lines().count(), 3);
        let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("s.json")).unwrap()).unwrap();
        assert_eq!(json["excluded"], 1);
    }
}
