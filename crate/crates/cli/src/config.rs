//! Run configuration file (TOML). Every table is optional; flags given on
//! the command line override the file.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sas_core::corpus::SplitSizes;
use sas_core::experiments::{Setting, StageConfigs, SweepConfig};
use sas_core::model::EncoderConfig;
use sas_core::training::{CheckpointSelection, OptimizerKind, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub pre_finetune: StageTable,
    #[serde(default)]
    pub finetune: StageTable,
    #[serde(default)]
    pub splits: SplitsTable,
    #[serde(default)]
    pub sweep: SweepTable,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTable {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub checkpoint_selection: Option<CheckpointSelection>,
}

impl StageTable {
    fn apply(&self, mut base: TrainConfig) -> TrainConfig {
        if self.epochs.is_some() {
            base.epochs = self.epochs;
        }
        if let Some(b) = self.batch_size {
            base.batch_size = b;
        }
        if self.learning_rate.is_some() {
            base.learning_rate = self.learning_rate;
        }
        if let Some(o) = self.optimizer {
            base.optimizer = o;
        }
        if let Some(c) = self.checkpoint_selection {
            base.checkpoint_selection = c;
        }
        base
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsTable {
    /// Seed of the train/dev/test assignment, kept apart from the run seed
    /// so every command sees the same splits.
    pub seed: Option<u64>,
    pub pool: Option<SplitSizes>,
    pub target: Option<SplitSizes>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTable {
    pub finetune_sizes: Option<Vec<usize>>,
    pub budget: Option<usize>,
    pub prompt_counts: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub prompt_count_n_train: Option<usize>,
    pub settings: Option<Vec<Setting>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| sas_core::Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }

    pub fn encoder(&self) -> EncoderConfig {
        self.encoder.clone().unwrap_or_else(EncoderConfig::tiny_transformer)
    }

    pub fn stages(&self) -> StageConfigs {
        StageConfigs {
            encoder: self.encoder(),
            pre_finetune: self.pre_finetune.apply(TrainConfig::pre_finetune_default()),
            finetune: self.finetune.apply(TrainConfig::finetune_default()),
        }
    }

    pub fn pool_splits(&self) -> SplitSizes {
        self.splits.pool.unwrap_or(SplitSizes::pool_default())
    }

    pub fn target_splits(&self) -> SplitSizes {
        self.splits.target.unwrap_or(SplitSizes::target_default())
    }

    pub fn split_seed(&self) -> u64 {
        self.splits.seed.unwrap_or(0)
    }

    pub fn sweep(&self) -> SweepConfig {
        let d = SweepConfig::default();
        let s = &self.sweep;
        SweepConfig {
            finetune_sizes: s.finetune_sizes.clone().unwrap_or(d.finetune_sizes),
            budget: s.budget.unwrap_or(d.budget),
            prompt_counts: s.prompt_counts.clone().unwrap_or(d.prompt_counts),
            seeds: s.seeds.clone().unwrap_or(d.seeds),
            prompt_count_n_train: s.prompt_count_n_train.unwrap_or(d.prompt_count_n_train),
        }
    }

    pub fn settings(&self) -> Vec<Setting> {
        self.sweep.settings.clone().unwrap_or_else(|| Setting::ALL.to_vec())
    }
}
