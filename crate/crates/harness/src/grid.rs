//! Grid files: TOML lists of blocks, each the product of datasets,
//! architectures, conditions and seeds, with optional setting overrides.
//!
//! ```toml
//! [defaults]            # applied to every block
//! iteration_cap = 3000
//!
//! [[block]]
//! datasets = ["mnist"]
//! architectures = ["lenet", "baseline", "capsnet"]
//! conditions = ["frac1"]
//! seeds = [0]
//!
//! [block.settings]      # block-level overrides win over [defaults]
//! data_scale = 1.0
//! ```

use std::collections::HashSet;
use std::path::Path;

use capsnet_core::models::{Architecture, Width};
use serde::{Deserialize, Serialize};

use crate::config::{Condition, DatasetId, ExperimentConfig, Profile};
use crate::error::{HarnessError, Result};

/// Settings a grid or the command line may override.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub alpha: Option<f64>,
    pub routing_iterations: Option<usize>,
    pub val_fraction: Option<f64>,
    pub data_scale: Option<f64>,
    pub iteration_cap: Option<usize>,
    pub width: Option<Width>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(batch_size, max_epochs, patience, min_delta, learning_rate, alpha, routing_iterations, val_fraction, data_scale, width);
        if let Some(c) = self.iteration_cap {
            cfg.iteration_cap = Some(c);
        }
    }

    /// `self` where set, otherwise `lower`.
    pub fn over(&self, lower: &Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: self.$f.or(lower.$f)),* } };
        }
        pick!(batch_size, max_epochs, patience, min_delta, learning_rate, alpha, routing_iterations, val_fraction, data_scale, iteration_cap, width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub datasets: Vec<DatasetId>,
    pub architectures: Vec<Architecture>,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    #[serde(default, rename = "settings")]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default)]
    pub defaults: Overrides,
    #[serde(default, rename = "block")]
    pub blocks: Vec<Block>,
}

impl GridFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("malformed grid: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Runs in file order: blocks, then datasets, conditions, architectures,
    /// seeds. `cli` overrides win over the grid, which wins over profile
    /// defaults (`profile`, or each dataset's own when `None`).
    pub fn expand(&self, cli: &Overrides, profile: Option<Profile>) -> Result<Vec<ExperimentConfig>> {
        let mut runs = Vec::new();
        let mut seen = HashSet::new();
        for block in &self.blocks {
            let layered = cli.over(&block.overrides.over(&self.defaults));
            for &d in &block.datasets {
                for &c in &block.conditions {
                    for &a in &block.architectures {
                        for &s in &block.seeds {
                            let mut cfg = ExperimentConfig::new(d, a, c, s);
                            if let Some(p) = profile {
                                cfg.apply_profile(p);
                            }
                            layered.apply(&mut cfg);
                            cfg.validate()?;
                            if !seen.insert(cfg.run_id()) {
                                return Err(HarnessError::Config(format!("run {} listed twice", cfg.run_id())));
                            }
                            runs.push(cfg);
                        }
                    }
                }
            }
        }
        if runs.is_empty() {
            return Err(HarnessError::Config("grid enumerates no runs".into()));
        }
        Ok(runs)
    }
}

/// The full grid: every dataset, architecture, condition and seed.
pub fn default_grid() -> GridFile {
    GridFile {
        defaults: Overrides::default(),
        blocks: vec![Block {
            datasets: DatasetId::ALL.to_vec(),
            architectures: Architecture::ALL.to_vec(),
            conditions: Condition::all(),
            seeds: crate::config::SEEDS.to_vec(),
            overrides: Overrides::default(),
        }],
    }
}
