//! Declarative experiment configuration (JSON).

use std::path::{Path, PathBuf};

use kweave_core::mkl::{
    default_lambda_grid, DEFAULT_BATCH_SIZE, DEFAULT_VAL_FRACTION, LARGE_STEPS, SMALL_STEPS,
};
use kweave_core::svm::{DEFAULT_C_GRID, DEFAULT_FOLDS};
use kweave_core::{BankRecipe, DataFormat, WeightMethod};
use serde::{Deserialize, Serialize};

/// Training sets smaller than this get the short Pegasos preset.
pub const STEPS_PRESET_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default = "default_recipe")]
    pub recipe: BankRecipe,
    /// One or more weight-learning methods evaluated on the same splits.
    #[serde(alias = "method", deserialize_with = "one_or_many")]
    pub methods: Vec<WeightMethod>,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub mkl: MklSettings,
    #[serde(default)]
    pub svm: SvmSettings,
    #[serde(default)]
    pub drop_fraction: f64,
    /// Z-score features with training statistics before building kernels.
    #[serde(default = "yes")]
    pub zscore: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: DataFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_split_count")]
    pub count: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "yes")]
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            count: default_split_count(),
            train_fraction: default_train_fraction(),
            base_seed: 0,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MklSettings {
    /// Pegasos steps; `None` picks 10^3 or 10^5 from the training set size.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub tail_average: Option<f64>,
}

impl Default for MklSettings {
    fn default() -> Self {
        MklSettings {
            steps: None,
            batch_size: DEFAULT_BATCH_SIZE,
            lambda_grid: None,
            val_fraction: DEFAULT_VAL_FRACTION,
            tail_average: None,
        }
    }
}

impl MklSettings {
    pub fn steps_for(&self, n_train: usize) -> usize {
        self.steps.unwrap_or(if n_train < STEPS_PRESET_THRESHOLD {
            SMALL_STEPS
        } else {
            LARGE_STEPS
        })
    }

    pub fn grid(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSettings {
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings {
            c_grid: default_c_grid(),
            folds: default_folds(),
            tol: default_tol(),
        }
    }
}

fn yes() -> bool {
    true
}
fn default_recipe() -> BankRecipe {
    BankRecipe::UciFull
}
fn default_format() -> DataFormat {
    DataFormat::Csv
}
fn default_split_count() -> usize {
    10
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}
fn default_c_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_tol() -> f64 {
    1e-3
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<WeightMethod>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(WeightMethod),
        Many(Vec<WeightMethod>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.dataset.path.is_relative() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
            if let Some(out) = cfg.output_dir.as_mut().filter(|o| o.is_relative()) {
                *out = dir.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.splits.count >= 1, "split count must be >= 1");
        anyhow::ensure!(
            self.splits.train_fraction > 0.0 && self.splits.train_fraction < 1.0,
            "train fraction must lie in (0, 1)"
        );
        anyhow::ensure!(!self.methods.is_empty(), "at least one method is required");
        anyhow::ensure!(!self.svm.c_grid.is_empty(), "C grid must not be empty");
        anyhow::ensure!(
            self.svm.c_grid.iter().all(|&c| c > 0.0),
            "C values must be > 0"
        );
        anyhow::ensure!(self.svm.folds >= 2, "need at least 2 folds");
        anyhow::ensure!(
            (0.0..1.0).contains(&self.drop_fraction),
            "drop_fraction must lie in [0, 1)"
        );
        anyhow::ensure!(self.mkl.batch_size >= 1, "batch size must be >= 1");
        anyhow::ensure!(
            self.mkl.val_fraction > 0.0 && self.mkl.val_fraction < 1.0,
            "validation fraction must lie in (0, 1)"
        );
        Ok(())
    }

    /// Fails when the dataset path does not exist.
    pub fn check_paths(&self) -> anyhow::Result<()> {
        anyhow::ensure!(
            self.dataset.path.exists(),
            "dataset {} does not exist",
            self.dataset.path.display()
        );
        Ok(())
    }
}
