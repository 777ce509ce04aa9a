//! Experiment configuration: a TOML file (or built-in preset) plus
//! `--set key=value` overrides.

use std::path::Path;

use ali_core::ali_train::{AliTrainConfig, GanVariant, TimeSampling};
use ali_core::cfm::{CfmConfig, PathKind, RolloutConfig};
use ali_core::coupling::CouplingKind;
use ali_core::eval::{EmdOptions, GroundCost};
use ali_core::interpolants::TimeEmbedding;
use ali_core::regularizers::RegulariserSpec;
use ali_core::Activation;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const PRESETS: &[(&str, &str)] = &[
    ("knot", include_str!("../presets/knot.toml")),
    ("gaussian", include_str!("../presets/gaussian.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Directory under the output root.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub interpolant: PathKind,
    #[serde(default)]
    pub coupling: CouplingKind,
    pub data: DataSection,
    #[serde(default)]
    pub ali: AliSection,
    #[serde(default)]
    pub regulariser: RegulariserSpec,
    #[serde(default)]
    pub cfm: CfmSection,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output_dir() -> String {
    "experiment".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generator: DataSource,
    /// Min-max scale every dimension to [0, 1] before training.
    #[serde(default)]
    pub normalise: bool,
    /// Marginal indices withheld from training.
    #[serde(default)]
    pub held_out: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Knot { k: usize, samples: usize, sigma: f64 },
    Gaussian { means: Vec<Vec<f64>>, std: f64, n: usize },
    Csv { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AliSection {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub time_noise_std: f64,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub activation: Activation,
    pub gan: GanVariant,
    pub time_sampling: TimeSampling,
    pub disc_steps: usize,
    /// Sinusoidal time frequencies for both networks; 0 feeds the raw time.
    pub time_frequencies: usize,
    pub divergence_threshold: f64,
}

impl Default for AliSection {
    fn default() -> Self {
        let d = AliTrainConfig::default();
        AliSection {
            iterations: d.iterations,
            batch_size: d.batch_size,
            lr_gen: d.lr_gen,
            lr_disc: d.lr_disc,
            time_noise_std: d.time_noise_std,
            pretrain_steps: d.pretrain_steps,
            pretrain_lr: d.pretrain_lr,
            gen_hidden: d.gen_hidden,
            disc_hidden: d.disc_hidden,
            activation: d.activation,
            gan: d.gan,
            time_sampling: d.time_sampling,
            disc_steps: d.disc_steps,
            time_frequencies: d.time_embedding.frequencies,
            divergence_threshold: d.divergence_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfmSection {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_frequencies: usize,
}

impl Default for CfmSection {
    fn default() -> Self {
        let d = CfmConfig::default();
        CfmSection {
            iterations: d.iterations,
            batch_size: d.batch_size,
            lr: d.lr,
            hidden: d.hidden,
            activation: d.activation,
            time_frequencies: d.time_embedding.frequencies,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Roll out the first marginal and compare at every reference time.
    #[default]
    AllTimes,
    /// Push marginal `i - 1` to each held-out time `t_i`.
    HeldOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Protocol,
    /// Compare against a fresh draw from the generator with this seed
    /// instead of the training data.
    pub fresh_seed: Option<u64>,
    /// Evaluate every n-th reference time (the last one always).
    pub time_stride: usize,
    pub cost: GroundCost,
    pub max_exact: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocol: Protocol::AllTimes,
            fresh_seed: None,
            time_stride: 1,
            cost: GroundCost::Euclidean,
            max_exact: EmdOptions::default().max_exact,
        }
    }
}

impl ExperimentConfig {
    pub fn ali_config(&self) -> AliTrainConfig {
        let a = &self.ali;
        AliTrainConfig {
            iterations: a.iterations,
            batch_size: a.batch_size,
            lr_gen: a.lr_gen,
            lr_disc: a.lr_disc,
            time_noise_std: a.time_noise_std,
            pretrain_steps: a.pretrain_steps,
            pretrain_lr: a.pretrain_lr,
            gen_hidden: a.gen_hidden.clone(),
            disc_hidden: a.disc_hidden.clone(),
            activation: a.activation,
            gan: a.gan,
            time_sampling: a.time_sampling,
            disc_steps: a.disc_steps,
            time_embedding: TimeEmbedding::new(a.time_frequencies),
            coupling: self.coupling,
            regulariser: self.regulariser.clone(),
            seed: self.seed,
            divergence_threshold: a.divergence_threshold,
        }
    }

    pub fn cfm_config(&self) -> CfmConfig {
        let c = &self.cfm;
        CfmConfig {
            iterations: c.iterations,
            batch_size: c.batch_size,
            lr: c.lr,
            hidden: c.hidden.clone(),
            activation: c.activation,
            time_embedding: TimeEmbedding::new(c.time_frequencies),
            coupling: self.coupling,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn emd_options(&self) -> EmdOptions {
        EmdOptions { cost: self.eval.cost, max_exact: self.eval.max_exact, ..EmdOptions::default() }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: ali_core::Error| CliError::config(e.to_string());
        self.ali_config().validate().map_err(bad)?;
        self.cfm_config().validate().map_err(bad)?;
        self.rollout.validate().map_err(bad)?;
        if self.output_dir.is_empty() || Path::new(&self.output_dir).is_absolute() {
            return Err(CliError::config("output_dir must be a non-empty relative path"));
        }
        if self.eval.time_stride == 0 {
            return Err(CliError::config("eval.time_stride must be >= 1"));
        }
        if self.eval.protocol == Protocol::HeldOut && self.data.held_out.is_empty() {
            return Err(CliError::config("the held-out protocol needs data.held_out"));
        }
        match &self.data.generator {
            DataSource::Csv { path } => {
                if !Path::new(path).is_file() {
                    return Err(CliError::config(format!("data file {path} does not exist")));
                }
                if self.eval.fresh_seed.is_some() {
                    return Err(CliError::config("eval.fresh_seed needs a generator data source"));
                }
            }
            DataSource::Knot { .. } | DataSource::Gaussian { .. } => {}
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

pub fn preset(name: &str) -> CliResult<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::config(format!("unknown preset {name:?} (available: {})", names.join(", ")))
        })
}

/// Parse `text`, apply `key=value` overrides (dotted keys, TOML values; a
/// value that is not valid TOML is taken as a string) and validate.
pub fn load(text: &str, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override key {key:?}: {p} is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
