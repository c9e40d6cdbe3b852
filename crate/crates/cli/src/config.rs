use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dtsc_core::datagen::{
    hex_digest, make_blobs, make_moons_embedded, proportional_counts, split_semi, Dataset, SemiSplit,
    LONG_TAIL_PROPORTIONS,
};
use dtsc_core::trainer::{TrainConfig, Variant};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    #[default]
    Blobs,
    Moons,
    /// Load an existing dataset CSV from `path`.
    Csv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imbalance {
    #[default]
    None,
    /// Eight-class long-tail proportions.
    LongTail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub generator: Generator,
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub imbalance: Imbalance,
    pub center_spread: f64,
    pub cluster_std: f64,
    pub moons_noise: f64,
    pub path: String,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Blobs,
            classes: 4,
            dim: 16,
            train_per_class: 250,
            val_per_class: 50,
            test_per_class: 100,
            imbalance: Imbalance::None,
            center_spread: 0.3,
            cluster_std: 0.22,
            moons_noise: 0.1,
            path: String::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub export_similarity: bool,
    pub export_scatter: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "runs/default".into(),
            export_similarity: false,
            export_scatter: false,
        }
    }
}

/// Complete file form of an experiment. Every block and key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Config from an optional path; defaults when absent.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Sets every seed (dataset, split, training) to `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.dataset.seed = seed;
        c.split.seed = seed;
        c.train.seed = seed;
        c
    }

    /// Effective config for one arm: loss weights follow `variant`.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.train = c.train.with_variant(variant);
        if variant.forces_full_labels() {
            c.split.labeled_fraction = 1.0;
        }
        c
    }

    /// Effective config with `train.variant` applied.
    pub fn effective(&self) -> Self {
        self.for_variant(self.train.variant)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let d = &self.dataset;
        let bad = |m: String| Err(CliError::Config(m));
        if d.generator != Generator::Csv {
            if d.classes < 2 || d.dim < 2 {
                return bad(format!(
                    "dataset needs >= 2 classes and dim >= 2 (classes={}, dim={})",
                    d.classes, d.dim
                ));
            }
            if d.train_per_class == 0 || d.val_per_class == 0 || d.test_per_class == 0 {
                return bad("train/val/test sizes per class must be positive".into());
            }
            if !(d.cluster_std >= 0.0 && d.center_spread >= 0.0 && d.moons_noise >= 0.0) {
                return bad("dataset spreads and noise must be >= 0".into());
            }
        }
        if d.generator == Generator::Moons && d.classes != 2 {
            return bad(format!("moons generator has 2 classes, got classes = {}", d.classes));
        }
        if d.imbalance == Imbalance::LongTail && d.classes != LONG_TAIL_PROPORTIONS.len() {
            return bad(format!(
                "long_tail imbalance needs classes = {}, got {}",
                LONG_TAIL_PROPORTIONS.len(),
                d.classes
            ));
        }
        if d.generator == Generator::Csv && d.path.is_empty() {
            return bad("csv generator needs dataset.path".into());
        }
        let f = self.split.labeled_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("split.labeled_fraction = {f} outside (0, 1]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    /// Digest of everything that determines the results (the output block is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        hex_digest(c.to_toml().as_bytes())
    }

    /// Output directory, placed under `root` when relative.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        let dir = PathBuf::from(&self.output.dir);
        match root {
            Some(r) if dir.is_relative() => r.join(dir),
            _ => dir,
        }
    }
}

/// Generates (or loads) the dataset described by `cfg`, with val/test holdouts assigned.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset, CliError> {
    let per_class = cfg.train_per_class + cfg.val_per_class + cfg.test_per_class;
    let val_frac = cfg.val_per_class as f64 / per_class as f64;
    let test_frac = cfg.test_per_class as f64 / per_class as f64;
    let mut ds = match cfg.generator {
        Generator::Csv => {
            let text = std::fs::read_to_string(&cfg.path)
                .map_err(|e| CliError::Runtime(format!("cannot read dataset {}: {e}", cfg.path)))?;
            return Ok(Dataset::from_csv(&text)?.0);
        }
        Generator::Blobs => {
            let counts = match cfg.imbalance {
                Imbalance::None => vec![per_class; cfg.classes],
                Imbalance::LongTail => proportional_counts(per_class * cfg.classes, &LONG_TAIL_PROPORTIONS),
            };
            make_blobs(&counts, cfg.dim, cfg.center_spread, cfg.cluster_std, cfg.seed)?
        }
        Generator::Moons => make_moons_embedded(2 * per_class, cfg.moons_noise, cfg.dim, cfg.seed)?,
    };
    ds.assign_splits(val_frac, test_frac, cfg.seed)?;
    Ok(ds)
}

pub fn build_split(ds: &Dataset, cfg: &SplitConfig) -> Result<SemiSplit, CliError> {
    Ok(split_semi(ds, cfg.labeled_fraction, cfg.seed)?)
}
