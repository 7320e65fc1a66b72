//! Single-file JSON checkpoints: encoder config, vocabulary, named parameter
//! tensors and a format version.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, InputMode, ScoringModel, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ScoringModel,
    /// Input mode the model was trained with, when known.
    pub mode: Option<InputMode>,
    /// Free-form provenance (stage, seed, selected epoch, ...).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    hidden_size: usize,
    encoder: EncoderConfig,
    #[serde(default)]
    mode: Option<InputMode>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    vocabulary: Vocabulary,
    tensors: Vec<Tensor>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let model = &checkpoint.model;
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        hidden_size: model.hidden_size(),
        encoder: model.config().clone(),
        mode: checkpoint.mode,
        metadata: checkpoint.metadata.clone(),
        vocabulary: (**model.vocab()).clone(),
        tensors: model
            .param_slots()
            .iter()
            .map(|(name, slot)| Tensor {
                name: name.clone(),
                rows: slot.rows,
                cols: slot.cols,
                values: model.params()[slot.range()].to_vec(),
            })
            .collect(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec(&file)?;
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            file.format_version
        )));
    }
    if file.hidden_size != file.encoder.hidden_size {
        return Err(Error::Checkpoint(format!(
            "{}: hidden size {} does not match encoder hidden size {}",
            path.display(),
            file.hidden_size,
            file.encoder.hidden_size
        )));
    }
    file.encoder.validate()?;
    let mut model = ScoringModel::zeroed(file.encoder, Arc::new(file.vocabulary));
    if model.head_weights().len() != file.hidden_size {
        return Err(Error::Checkpoint("head width differs from hidden size".into()));
    }
    let slots = model.param_slots().to_vec();
    if slots.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} tensors, found {}",
            path.display(),
            slots.len(),
            file.tensors.len()
        )));
    }
    for ((name, slot), t) in slots.iter().zip(&file.tensors) {
        if *name != t.name || slot.rows != t.rows || slot.cols != t.cols || t.values.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {} ({}x{}) does not match expected {} ({}x{})",
                path.display(),
                t.name,
                t.rows,
                t.cols,
                name,
                slot.rows,
                slot.cols
            )));
        }
        model.params_mut()[slot.range()].copy_from_slice(&t.values);
    }
    Ok(Checkpoint {
        model,
        mode: file.mode,
        metadata: file.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ScoringModel {
        let vocab = Arc::new(Vocabulary::new(["x", "y"]));
        ScoringModel::new(EncoderConfig::tiny_transformer(), vocab, 5).unwrap()
    }

    #[test]
    fn roundtrip_preserves_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ck = Checkpoint {
            model: model(),
            mode: Some(InputMode::KeyPhrase),
            metadata: [("stage".to_string(), "pre_finetune".to_string())].into(),
        };
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.model.config(), ck.model.config());
        assert_eq!(back.mode, Some(InputMode::KeyPhrase));
        assert_eq!(back.metadata["stage"], "pre_finetune");
    }

    #[test]
    fn mismatched_hidden_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(
            &path,
            &Checkpoint {
                model: model(),
                mode: None,
                metadata: BTreeMap::new(),
            },
        )
        .unwrap();
        let mut json: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        json["hidden_size"] = 16.into();
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        json["hidden_size"] = 16.into();
        json["encoder"]["hidden_size"] = 16.into();
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(
            &path,
            &Checkpoint {
                model: model(),
                mode: None,
                metadata: BTreeMap::new(),
            },
        )
        .unwrap();
        let mut json: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        json["format_version"] = 99.into();
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
