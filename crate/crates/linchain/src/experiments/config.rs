//! The experiment config file.
//!
//! One TOML file describes one experiment. Which sections are required
//! depends on the subcommand:
//!
//! ```toml
//! # Where run directories are created. Overridden by --output-dir, then
//! # by the LINCHAIN_OUTPUT_DIR environment variable; defaults to ./runs.
//! output_dir = "runs"
//! # Run seeds. `train` uses the first; `compare` runs every one.
//! seeds = [1, 2, 3]
//!
//! # A single adapter (train, gradcheck, paramcount) ...
//! [adapter]
//! method = "linchain"          # lora | moslora | linchain
//! d_in = 64
//! d_out = 64
//! chain_dims = [8, 8, 8, 8]    # [r0, ..., rk]; lora: [r]; moslora: [r, r]
//! scaling = 1.0                # optional, default 1.0
//! seed = 7                     # init stream seed
//! # chain_init = "identity"    # diagnostic collapse mode; default "kaiming"
//!
//! # ... or several (compare, paramcount; `gradcheck` accepts both forms).
//! # [[adapters]]
//! # method = "lora"
//! # ...
//!
//! [task]
//! kind = "target-recovery"     # or "teacher-student-classification"
//! d_in = 64
//! d_out = 64
//! target_rank = 16
//! train_size = 256
//! eval_size = 128
//! data_seed = 11
//! noise_std = 0.01             # optional, default 0
//!
//! [optimizer]
//! kind = "adam"                # adam | sgd
//! learning_rate = 1e-3
//! epochs = 300
//! batch_size = 32
//! # momentum = 0.0             # sgd only
//! # beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8   # adam defaults
//!
//! [gradcheck]                  # gradcheck only
//! tolerance = 1e-5
//! cases = 200                  # random cases per adapter config
//! batch_sizes = [1, 4]         # optional
//! case_seed = 12345            # optional
//! # inject_fault = "right-multiplied-sandwich"   # mutation diagnostic
//!
//! [compare]                    # compare only, all optional
//! threshold = 0.5              # default: 1.05 x best final eval loss
//! ```
//!
//! Unknown keys anywhere are rejected, and the parsed value serializes
//! back to an equivalent file (parse ∘ serialize ∘ parse is identity).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterConfig;
use crate::error::{Error, Result};
use crate::gradients::GradFault;
use crate::training::{OptimizerConfig, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckOptions {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_case_seed")]
    pub case_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<GradFault>,
}

fn default_tolerance() -> f64 {
    1e-5
}

fn default_cases() -> usize {
    200
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 4]
}

fn default_case_seed() -> u64 {
    0x11E5
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            tolerance: default_tolerance(),
            cases: default_cases(),
            batch_sizes: default_batch_sizes(),
            case_seed: default_case_seed(),
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Everything a `linchain` subcommand needs, parsed from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adapters: Vec<AdapterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareOptions>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate_common()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ConfigParse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that hold regardless of subcommand.
    fn validate_common(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::ConfigParse("seeds must not be empty".into()));
        }
        for adapter in self.all_adapters() {
            adapter
                .validate()
                .map_err(|e| Error::ConfigParse(e.to_string()))?;
        }
        if let Some(task) = &self.task {
            task.validate().map_err(|e| Error::ConfigParse(e.to_string()))?;
        }
        if let Some(opt) = &self.optimizer {
            opt.validate().map_err(|e| Error::ConfigParse(e.to_string()))?;
        }
        Ok(())
    }

    /// Warnings from every adapter section, for CLI display.
    pub fn adapter_warnings(&self) -> Vec<String> {
        self.all_adapters()
            .iter()
            .flat_map(|a| a.validate().unwrap_or_default())
            .collect()
    }

    /// The `[adapter]` section plus any `[[adapters]]` entries, in order.
    pub fn all_adapters(&self) -> Vec<&AdapterConfig> {
        self.adapter.iter().chain(self.adapters.iter()).collect()
    }

    pub fn single_adapter(&self) -> Result<&AdapterConfig> {
        match (self.adapter.as_ref(), self.adapters.len()) {
            (Some(a), 0) => Ok(a),
            (None, 1) => Ok(&self.adapters[0]),
            _ => Err(Error::ConfigParse(
                "this command needs exactly one adapter config (an [adapter] section)".into(),
            )),
        }
    }

    pub fn required_task(&self) -> Result<&TaskSpec> {
        self.task
            .as_ref()
            .ok_or_else(|| Error::ConfigParse("missing [task] section".into()))
    }

    pub fn required_optimizer(&self) -> Result<&OptimizerConfig> {
        self.optimizer
            .as_ref()
            .ok_or_else(|| Error::ConfigParse("missing [optimizer] section".into()))
    }
}
