//! The experiment configuration: a single JSON file; command-line
//! flags override fields one-for-one. Grid sweeps are expressed as
//! value lists expanded into sequential runs.

use std::path::{Path, PathBuf};

use gem_core::data::SelfTrainConfig;
use gem_core::model::TrainSpec;
use gem_core::prompt::TemplateKind;
use serde::{Deserialize, Serialize};

use crate::ingest::TableDescriptor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPaths {
    pub train_labeled: PathBuf,
    pub train_unlabeled: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Cloze scoring through the verbalizer (the default).
    Prompt,
    /// `[CLS]`-head classification; template and verbalizer are
    /// ignored.
    FinetuneBaseline,
}

impl Default for RunMode {
    fn default() -> Self {
        RunMode::Prompt
    }
}

fn default_template() -> TemplateKind {
    TemplateKind::ContinuousT2
}

fn default_max_len() -> usize {
    512
}

fn default_min_freq() -> usize {
    1
}

/// Model width knobs; the vocabulary size and prompt-token count are
/// derived from the data and template at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_blocks: usize,
    pub ffn_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { d_model: 64, n_blocks: 2, ffn_hidden: 128 }
    }
}

/// Grid sweep lists; empty axes fall back to the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub u_r: Vec<f64>,
    pub e_r: Vec<f64>,
    pub template: Vec<TemplateKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub left_table: TableDescriptor,
    pub right_table: TableDescriptor,
    pub splits: SplitPaths,
    #[serde(default = "default_template")]
    pub template: TemplateKind,
    /// Trainable prompt slots for continuous templates; defaults to
    /// the template's replaced word count.
    #[serde(default)]
    pub n_prompt_tokens: Option<usize>,
    /// Verbalizer file path; the built-in label words when absent.
    #[serde(default)]
    pub verbalizer: Option<PathBuf>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub selftrain: SelfTrainConfig,
    #[serde(default)]
    pub model: ModelDims,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("config path does not exist: {path}")]
    MissingPath { path: PathBuf },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let content = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&content)
            .map_err(|e| ConfigError::Parse { path: path.into(), detail: e.to_string() })
    }

    /// Command-line overrides: `--seed` sets both training and
    /// self-training seeds, `--out` replaces the output directory.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.train.seed = seed;
            self.selftrain.seed = seed;
        }
        if let Some(out) = out {
            self.out_dir = out;
        }
    }

    /// Referenced input paths must exist at run start.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let mut paths = vec![
            self.left_table.path.clone(),
            self.right_table.path.clone(),
            self.splits.train_labeled.clone(),
            self.splits.train_unlabeled.clone(),
            self.splits.valid.clone(),
            self.splits.test.clone(),
        ];
        if let Some(v) = &self.verbalizer {
            paths.push(v.clone());
        }
        for path in paths {
            if !path.exists() {
                return Err(ConfigError::MissingPath { path });
            }
        }
        Ok(())
    }

    /// Expands the grid into concrete configs (cross product over the
    /// non-empty axes, in axis order).
    pub fn expand_grid(&self) -> Vec<RunConfig> {
        let Some(grid) = &self.grid else {
            return vec![self.clone()];
        };
        let u_rs = if grid.u_r.is_empty() { vec![self.selftrain.u_r] } else { grid.u_r.clone() };
        let e_rs = if grid.e_r.is_empty() { vec![self.selftrain.e_r] } else { grid.e_r.clone() };
        let templates =
            if grid.template.is_empty() { vec![self.template] } else { grid.template.clone() };
        let mut runs = Vec::new();
        for &template in &templates {
            for &u_r in &u_rs {
                for &e_r in &e_rs {
                    let mut cfg = self.clone();
                    cfg.grid = None;
                    cfg.template = template;
                    cfg.selftrain.u_r = u_r;
                    cfg.selftrain.e_r = e_r;
                    runs.push(cfg);
                }
            }
        }
        runs
    }
}
