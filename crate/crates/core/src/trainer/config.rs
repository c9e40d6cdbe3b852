use serde::{Deserialize, Serialize};

use crate::datagen::hex_digest;
use crate::error::{Error, Result};
use crate::scatter::InfoNceVariant;

/// Which losses an arm trains with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Supervised loss on the labeled subset only.
    Baseline,
    /// Supervised + absolute-location consistency.
    PureMt,
    /// Supervised + absolute- and relative-location consistency, no scatter phase.
    Scmt,
    /// Scatter phase followed by the full consistency phase.
    #[default]
    Dtsc,
    /// Baseline trained with every training label visible.
    UpperBound,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::PureMt,
        Variant::Scmt,
        Variant::Dtsc,
        Variant::UpperBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PureMt => "pure_mt",
            Variant::Scmt => "scmt",
            Variant::Dtsc => "dtsc",
            Variant::UpperBound => "upper_bound",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}` (expected one of baseline, pure_mt, scmt, dtsc, upper_bound)"
            ))
        })
    }

    /// The upper-bound arm ignores the configured labeled fraction.
    pub fn forces_full_labels(self) -> bool {
        self == Variant::UpperBound
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full hyperparameter record for one training run. Missing keys take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Total epochs E.
    pub epochs: usize,
    /// Leading epochs trained with the scatter objective.
    pub scatter_epochs: usize,
    /// EMA decay of the sample-consistency teacher.
    pub ema_consistency: f64,
    /// EMA decay of the sample-scatter teacher.
    pub ema_scatter: f64,
    pub lambda_cl: f64,
    pub lambda_alc: f64,
    pub lambda_rlc: f64,
    pub temperature: f64,
    /// Reference pool capacity K.
    pub rsp_capacity: usize,
    /// Memory bank capacity M.
    pub bank_capacity: usize,
    pub batch_size: usize,
    pub labeled_per_batch: usize,
    pub learning_rate: f64,
    /// Input-noise std of the student view.
    pub noise_student: f64,
    /// Input-noise std of each teacher view.
    pub noise_teacher: f64,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub seed: u64,
    pub infonce: InfoNceVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Dtsc,
            epochs: 50,
            scatter_epochs: 10,
            ema_consistency: 0.9,
            ema_scatter: 0.999,
            lambda_cl: 0.1,
            lambda_alc: 1.0,
            lambda_rlc: 1.0,
            temperature: 0.7,
            rsp_capacity: 32,
            bank_capacity: 256,
            batch_size: 16,
            labeled_per_batch: 4,
            learning_rate: 1e-2,
            noise_student: 0.1,
            noise_teacher: 0.1,
            hidden_dims: vec![128],
            feature_dim: 32,
            seed: 0,
            infonce: InfoNceVariant::IncludePositive,
        }
    }
}

impl TrainConfig {
    /// Settings matching the large-scale experiments: 100 epochs (20 scatter),
    /// batch 64 with 16 labeled, lr 1e-4, K = feature dim = 1024, M = 4096.
    pub fn full_scale() -> Self {
        Self {
            epochs: 100,
            scatter_epochs: 20,
            rsp_capacity: 1024,
            bank_capacity: 4096,
            batch_size: 64,
            labeled_per_batch: 16,
            learning_rate: 1e-4,
            hidden_dims: vec![1024],
            feature_dim: 1024,
            ..Self::default()
        }
    }

    /// Overlays the loss weights and schedule of `variant` onto this config.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let full = Self::default();
        let mut c = self.clone();
        c.variant = variant;
        match variant {
            Variant::Baseline | Variant::UpperBound => {
                c.lambda_cl = 0.0;
                c.lambda_alc = 0.0;
                c.lambda_rlc = 0.0;
                c.scatter_epochs = 0;
            }
            Variant::PureMt => {
                c.lambda_alc = positive_or(self.lambda_alc, full.lambda_alc);
                c.lambda_rlc = 0.0;
                c.lambda_cl = 0.0;
                c.scatter_epochs = 0;
            }
            Variant::Scmt => {
                c.lambda_alc = positive_or(self.lambda_alc, full.lambda_alc);
                c.lambda_rlc = positive_or(self.lambda_rlc, full.lambda_rlc);
                c.lambda_cl = 0.0;
                c.scatter_epochs = 0;
            }
            Variant::Dtsc => {
                c.lambda_alc = positive_or(self.lambda_alc, full.lambda_alc);
                c.lambda_rlc = positive_or(self.lambda_rlc, full.lambda_rlc);
                c.lambda_cl = positive_or(self.lambda_cl, full.lambda_cl);
                if c.scatter_epochs == 0 {
                    c.scatter_epochs = full.scatter_epochs.min(c.epochs);
                }
            }
        }
        c
    }

    pub fn has_scatter_phase(&self) -> bool {
        self.scatter_epochs > 0
    }

    pub fn has_consistency_phase(&self) -> bool {
        self.scatter_epochs < self.epochs
    }

    /// Relative-location consistency is computed in some step.
    pub fn uses_rlc(&self) -> bool {
        self.lambda_rlc > 0.0 && self.has_consistency_phase()
    }

    pub fn uses_contrastive(&self) -> bool {
        self.lambda_cl > 0.0 && self.has_scatter_phase()
    }

    /// Backbone widths `[input, hidden…, feature]`.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return err("epochs must be positive".into());
        }
        if self.scatter_epochs > self.epochs {
            return err(format!(
                "scatter_epochs {} exceeds epochs {}",
                self.scatter_epochs, self.epochs
            ));
        }
        for (name, v) in [
            ("lambda_cl", self.lambda_cl),
            ("lambda_alc", self.lambda_alc),
            ("lambda_rlc", self.lambda_rlc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} = {v} must be a finite value >= 0"));
            }
        }
        for (name, v) in [
            ("ema_consistency", self.ema_consistency),
            ("ema_scatter", self.ema_scatter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.temperature > 0.0) {
            return err(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return err(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(self.noise_student >= 0.0 && self.noise_teacher >= 0.0) {
            return err("noise stds must be >= 0".into());
        }
        if self.batch_size == 0 || self.labeled_per_batch == 0 || self.labeled_per_batch > self.batch_size {
            return err(format!(
                "labeled_per_batch {} must lie in 1..=batch_size {}",
                self.labeled_per_batch, self.batch_size
            ));
        }
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return err("layer widths must be positive".into());
        }
        if self.rsp_capacity == 0 || self.bank_capacity == 0 {
            return err("rsp_capacity and bank_capacity must be positive".into());
        }
        if self.uses_rlc() && self.rsp_capacity < self.feature_dim {
            return err(format!(
                "rsp_capacity {} is smaller than feature_dim {}; relative locations would be under-determined",
                self.rsp_capacity, self.feature_dim
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serialises")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

fn positive_or(v: f64, fallback: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        fallback
    }
}

/// Desk-scale config for a named ablation arm.
pub fn ablation_preset(name: &str) -> Result<TrainConfig> {
    Ok(TrainConfig::default().with_variant(Variant::from_name(name)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_has_no_consistency_weight() {
        let c = ablation_preset("baseline").unwrap();
        assert_eq!(
            (c.lambda_cl, c.lambda_alc, c.lambda_rlc, c.scatter_epochs),
            (0.0, 0.0, 0.0, 0)
        );
    }

    #[test]
    fn dtsc_carries_reported_hyperparameters() {
        let c = ablation_preset("dtsc").unwrap();
        assert_eq!(c.lambda_cl, 0.1);
        assert_eq!((c.lambda_alc, c.lambda_rlc), (1.0, 1.0));
        assert_eq!((c.ema_consistency, c.ema_scatter), (0.9, 0.999));
        assert_eq!(c.temperature, 0.7);
    }

    #[test]
    fn scmt_differs_from_dtsc_only_in_scatter_settings() {
        let mut scmt = ablation_preset("scmt").unwrap();
        let dtsc = ablation_preset("dtsc").unwrap();
        assert_ne!(scmt.lambda_cl, dtsc.lambda_cl);
        assert_ne!(scmt.scatter_epochs, dtsc.scatter_epochs);
        scmt.lambda_cl = dtsc.lambda_cl;
        scmt.scatter_epochs = dtsc.scatter_epochs;
        scmt.variant = dtsc.variant;
        assert_eq!(scmt, dtsc);
    }

    #[test]
    fn pure_mt_uses_only_absolute_consistency() {
        let c = ablation_preset("pure_mt").unwrap();
        assert!(c.lambda_alc > 0.0);
        assert_eq!((c.lambda_rlc, c.lambda_cl, c.scatter_epochs), (0.0, 0.0, 0));
        assert!(ablation_preset("upper_bound").unwrap().variant.forces_full_labels());
        assert!(ablation_preset("fixmatch").is_err());
    }

    #[test]
    fn full_scale_values() {
        let c = TrainConfig::full_scale();
        assert_eq!((c.epochs, c.scatter_epochs), (100, 20));
        assert_eq!((c.batch_size, c.labeled_per_batch), (64, 16));
        assert_eq!((c.rsp_capacity, c.bank_capacity, c.feature_dim), (1024, 4096, 1024));
        assert_eq!(c.learning_rate, 1e-4);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_small_pool_only_with_rlc() {
        let mut c = TrainConfig {
            rsp_capacity: 8,
            feature_dim: 16,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.lambda_rlc = 0.0;
        c.validate().unwrap();
        let c = TrainConfig {
            scatter_epochs: 60,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_strictness() {
        let c = TrainConfig::default();
        let back: TrainConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = toml::from_str("epochs = 7").unwrap();
        assert_eq!(partial.epochs, 7);
        assert_eq!(partial.batch_size, 16);
        let err = toml::from_str::<TrainConfig>("lamda_cl = 0.3").unwrap_err();
        assert!(err.to_string().contains("lamda_cl"));
        assert_ne!(c.hash(), partial.hash());
    }
}
