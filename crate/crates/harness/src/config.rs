//! Experiment identities: datasets, data conditions and run configuration.

use std::fmt;
use std::str::FromStr;

use capsnet_core::capsule::CapsLossConfig;
use capsnet_core::models::{Architecture, Width};
use capsnet_data::augment::AugmentSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const BATCH_SIZE: usize = 128;
pub const MAX_EPOCHS: usize = 50;
pub const PATIENCE: usize = 20;
pub const MIN_DELTA: f64 = 1e-6;
pub const VAL_FRACTION: f64 = 0.1;
pub const IMBALANCE_KEEP: f64 = 0.2;
pub const SEEDS: [u64; 4] = [0, 1, 2, 3];
pub const FRACTIONS: [f64; 5] = [1.0, 0.5, 0.1, 0.05, 0.01];

/// Datasets in the row order of the result tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Tupac16,
    Diaretdb1,
    Fashion,
    Mnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Vision,
    Medical,
}

impl Profile {
    pub fn learning_rate(self) -> f64 {
        match self {
            Profile::Vision => 1e-3,
            Profile::Medical => 1e-4,
        }
    }

    pub fn caps_loss(self) -> CapsLossConfig {
        match self {
            Profile::Vision => CapsLossConfig::vision(),
            Profile::Medical => CapsLossConfig::medical(),
        }
    }
}

impl FromStr for Profile {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vision" => Ok(Profile::Vision),
            "medical" => Ok(Profile::Medical),
            _ => Err(HarnessError::Config(format!("unknown profile `{s}` (vision, medical)"))),
        }
    }
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [DatasetId::Tupac16, DatasetId::Diaretdb1, DatasetId::Fashion, DatasetId::Mnist];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Tupac16 => "tupac16",
            DatasetId::Diaretdb1 => "diaretdb1",
            DatasetId::Fashion => "fashion",
            DatasetId::Mnist => "mnist",
        }
    }

    /// Row label in the markdown tables.
    pub fn title(self) -> &'static str {
        match self {
            DatasetId::Tupac16 => "TUPAC16",
            DatasetId::Diaretdb1 => "DIARETDB1",
            DatasetId::Fashion => "Fashion-M.",
            DatasetId::Mnist => "MNIST",
        }
    }

    pub fn profile(self) -> Profile {
        match self {
            DatasetId::Tupac16 | DatasetId::Diaretdb1 => Profile::Medical,
            DatasetId::Fashion | DatasetId::Mnist => Profile::Vision,
        }
    }

    pub fn num_classes(self) -> usize {
        match self.profile() {
            Profile::Medical => 2,
            Profile::Vision => 10,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            DatasetId::Tupac16 => &["background", "mitosis"],
            DatasetId::Diaretdb1 => &["healthy", "lesion"],
            DatasetId::Fashion => &[
                "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat", "Sandal", "Shirt", "Sneaker", "Bag",
                "Ankle boot",
            ],
            DatasetId::Mnist => &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Classes reduced to 20% in imbalance scenario 1 or 2.
    pub fn imbalance_classes(self, scenario: u8) -> &'static [usize] {
        match (self, scenario) {
            (DatasetId::Mnist, 1) => &[0, 1],
            (DatasetId::Mnist, _) => &[2, 8],
            (DatasetId::Fashion, 1) => &[0, 1],
            (DatasetId::Fashion, _) => &[2, 6],
            // Medical sets: abnormal first, then healthy.
            (_, 1) => &[1],
            (_, _) => &[0],
        }
    }

    pub fn augment_spec(self) -> AugmentSpec {
        match self {
            DatasetId::Mnist => AugmentSpec::mnist(),
            DatasetId::Fashion => AugmentSpec::fashion(),
            DatasetId::Tupac16 | DatasetId::Diaretdb1 => {
                AugmentSpec::medical(self.patch_size().expect("medical"), 30.0)
            }
        }
    }

    /// Side of the window cut around each lesion, for the patch datasets.
    pub fn patch_size(self) -> Option<usize> {
        match self {
            DatasetId::Tupac16 => Some(100),
            DatasetId::Diaretdb1 => Some(200),
            DatasetId::Fashion | DatasetId::Mnist => None,
        }
    }

    /// Training fraction used by the un-augmented arm.
    pub fn unaugmented_fraction(self) -> f64 {
        match self {
            DatasetId::Tupac16 => 0.5,
            DatasetId::Diaretdb1 => 0.1,
            DatasetId::Fashion | DatasetId::Mnist => 1.0,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown dataset `{s}` (tupac16, diaretdb1, fashion, mnist)")))
    }
}

/// The data challenge a run is subjected to; exactly one family per run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Condition {
    /// Stratified fraction of the training data (1.0 = all of it).
    Fraction(f64),
    /// Imbalance scenario 1 or 2.
    Imbalance(u8),
    /// Augmentation arm.
    Augment(bool),
}

impl Condition {
    /// The nine conditions of the grid, in table order.
    pub fn all() -> Vec<Condition> {
        let mut v: Vec<Condition> = FRACTIONS.iter().map(|&f| Condition::Fraction(f)).collect();
        v.extend([Condition::Imbalance(1), Condition::Imbalance(2)]);
        v.extend([Condition::Augment(false), Condition::Augment(true)]);
        v
    }

    pub fn family(self) -> &'static str {
        match self {
            Condition::Fraction(_) => "fraction",
            Condition::Imbalance(_) => "imbalance",
            Condition::Augment(_) => "augmentation",
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Condition::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(HarnessError::Config(format!("fraction {f} not in (0, 1]")))
            }
            Condition::Imbalance(s) if !(1..=2).contains(&s) => {
                Err(HarnessError::Config(format!("imbalance scenario {s} is not 1 or 2")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Condition::Fraction(x) if x == 1.0 => f.write_str("full"),
            Condition::Fraction(x) => write!(f, "frac{}", x * 100.0),
            Condition::Imbalance(s) => write!(f, "imb{s}"),
            Condition::Augment(false) => f.write_str("aug_off"),
            Condition::Augment(true) => f.write_str("aug_on"),
        }
    }
}

impl FromStr for Condition {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            HarnessError::Config(format!(
                "unknown condition `{s}` (full, frac50, frac10, frac5, frac1, imb1, imb2, aug_off, aug_on)"
            ))
        };
        let c = match s {
            "full" => Condition::Fraction(1.0),
            "imb1" => Condition::Imbalance(1),
            "imb2" => Condition::Imbalance(2),
            "aug_off" => Condition::Augment(false),
            "aug_on" => Condition::Augment(true),
            _ => {
                let pct: f64 = s.strip_prefix("frac").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                Condition::Fraction(pct / 100.0)
            }
        };
        c.validate()?;
        Ok(c)
    }
}

impl TryFrom<String> for Condition {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetId,
    pub architecture: Architecture,
    pub condition: Condition,
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub learning_rate: f64,
    pub alpha: f64,
    pub routing_iterations: usize,
    pub val_fraction: f64,
    /// Stratified fraction of the training data taken before the condition
    /// is applied (1.0 = the paper's scale).
    pub data_scale: f64,
    /// Upper limit on the iteration budget (desk-scale runs).
    pub iteration_cap: Option<usize>,
    pub width: Width,
}

impl ExperimentConfig {
    /// Profile defaults for one grid cell.
    pub fn new(dataset: DatasetId, architecture: Architecture, condition: Condition, seed: u64) -> Self {
        let profile = dataset.profile();
        Self {
            dataset,
            architecture,
            condition,
            seed,
            batch_size: BATCH_SIZE,
            max_epochs: MAX_EPOCHS,
            patience: PATIENCE,
            min_delta: MIN_DELTA,
            learning_rate: profile.learning_rate(),
            alpha: profile.caps_loss().alpha,
            routing_iterations: capsnet_core::capsule::DEFAULT_ROUTING_ITERATIONS,
            val_fraction: VAL_FRACTION,
            data_scale: 1.0,
            iteration_cap: None,
            width: Width::Full,
        }
    }

    /// Replaces the learning rate and reconstruction weight with `profile`'s.
    pub fn apply_profile(&mut self, profile: Profile) {
        self.learning_rate = profile.learning_rate();
        self.alpha = profile.caps_loss().alpha;
    }

    pub fn validate(&self) -> Result<()> {
        self.condition.validate()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.alpha >= 0.0) {
            return bad(format!("learning rate {} / alpha {} invalid", self.learning_rate, self.alpha));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val fraction {} not in (0, 1)", self.val_fraction));
        }
        if !(self.data_scale > 0.0 && self.data_scale <= 1.0) {
            return bad(format!("data scale {} not in (0, 1]", self.data_scale));
        }
        if self.routing_iterations == 0 {
            return bad("routing needs at least one iteration".into());
        }
        if self.iteration_cap == Some(0) {
            return bad("iteration cap must be positive".into());
        }
        Ok(())
    }

    pub fn caps_loss(&self) -> CapsLossConfig {
        CapsLossConfig {
            alpha: self.alpha,
            ..self.dataset.profile().caps_loss()
        }
    }

    /// Iterations allowed for this run: `max_epochs * ceil(n_full / batch)`,
    /// independent of the condition, then capped.
    pub fn iteration_budget(&self, n_full: usize) -> usize {
        let b = iteration_budget(n_full, self.batch_size, self.max_epochs);
        self.iteration_cap.map_or(b, |c| b.min(c))
    }

    /// Stable identifier, unique within a grid.
    pub fn run_id(&self) -> String {
        let mut id = format!("{}-{}-{}-s{}", self.dataset, self.architecture.name(), self.condition, self.seed);
        if self.data_scale != 1.0 {
            id.push_str(&format!("-x{}", self.data_scale));
        }
        if let Some(c) = self.iteration_cap {
            id.push_str(&format!("-cap{c}"));
        }
        if self.width == Width::Reduced {
            id.push_str("-reduced");
        }
        id
    }

    /// Cell identity (everything except the seed).
    pub fn cell(&self) -> (DatasetId, String, Architecture) {
        (self.dataset, self.condition.to_string(), self.architecture)
    }
}

/// `epochs * ceil(n_full / batch)`.
pub fn iteration_budget(n_full: usize, batch: usize, epochs: usize) -> usize {
    epochs * n_full.div_ceil(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_budget() {
        assert_eq!(iteration_budget(60_000, 128, 50), 23_450);
        let mut cfg = ExperimentConfig::new(DatasetId::Mnist, Architecture::CapsNet, Condition::Fraction(0.01), 0);
        assert_eq!(cfg.iteration_budget(60_000), 23_450);
        cfg.iteration_cap = Some(3000);
        assert_eq!(cfg.iteration_budget(60_000), 3000);
    }

    #[test]
    fn conditions_round_trip() {
        let all = Condition::all();
        assert_eq!(all.len(), 9);
        for c in all {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert!("frac0".parse::<Condition>().is_err());
        assert!("imb3".parse::<Condition>().is_err());
        assert!("half".parse::<Condition>().is_err());
    }

    #[test]
    fn medical_profile_divides_by_ten() {
        let v = ExperimentConfig::new(DatasetId::Mnist, Architecture::LeNet, Condition::Fraction(1.0), 0);
        let m = ExperimentConfig::new(DatasetId::Tupac16, Architecture::LeNet, Condition::Fraction(1.0), 0);
        assert!((v.learning_rate / m.learning_rate - 10.0).abs() < 1e-9);
        assert!((v.alpha / m.alpha - 10.0).abs() < 1e-9);
    }

    #[test]
    fn run_ids_distinguish_settings() {
        let a = ExperimentConfig::new(DatasetId::Fashion, Architecture::CapsNet, Condition::Fraction(0.05), 2);
        assert_eq!(a.run_id(), "fashion-capsnet-frac5-s2");
        let mut b = a.clone();
        b.iteration_cap = Some(3000);
        assert_ne!(a.run_id(), b.run_id());
    }

    #[test]
    fn config_json_round_trip() {
        let a = ExperimentConfig::new(DatasetId::Mnist, Architecture::Baseline, Condition::Imbalance(2), 3);
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"imb2\""));
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), a);
    }
}
