//! Run configuration: preset values, overridden by a JSON config file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use protomil::features::AggregatorSet;
use protomil::model::{Hyperparams, InitStrategy, Preset};
use serde::Deserialize;

use crate::CliError;

/// Environment variable consulted when neither a flag nor the config file
/// gives a seed.
pub const SEED_ENV: &str = "PROTOMIL_SEED";

/// Keys accepted in a `--config` JSON file. Unknown keys are an error.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub repeats: Option<usize>,
    pub epochs: Option<usize>,
    pub proto_count: Option<usize>,
    pub lr_weights: Option<f64>,
    pub lr_prototypes: Option<f64>,
    pub lambda_w: Option<f64>,
    pub lambda_p: Option<f64>,
    pub lambda_d: Option<f64>,
    pub aggregators: Option<AggregatorSet>,
    pub standardize: Option<bool>,
    pub init: Option<InitStrategy>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("config", format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage("config", format!("invalid config {}: {e}", path.display())))
    }
}

/// Flags shared by every command that builds or trains a model.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON config file; its values override the preset, flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Hyperparameter preset: table1-musk1, table1-musk2, table1-fox, table1-tiger, table1-elephant, appendix
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Random seed [default: $PROTOMIL_SEED, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of prototypes D
    #[arg(long, value_name = "D")]
    pub proto_count: Option<usize>,
    /// Adam learning rate for the classifier weights and bias
    #[arg(long, value_name = "RATE")]
    pub lr_weights: Option<f64>,
    /// Adam learning rate for the prototypes
    #[arg(long, value_name = "RATE")]
    pub lr_prototypes: Option<f64>,
    /// L1 penalty on the classifier weights
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_w: Option<f64>,
    /// Penalty on the sum of prototype norms
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_p: Option<f64>,
    /// Penalty on the sum of pooled distances
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_d: Option<f64>,
    /// Comma-separated pooling aggregators, e.g. min,mean,max
    #[arg(long, value_name = "LIST")]
    pub aggregators: Option<String>,
    /// Prototype initialization: sample-instances or gaussian
    #[arg(long, value_name = "STRATEGY")]
    pub init: Option<String>,
    /// Z-score features with training-set statistics
    #[arg(long)]
    pub standardize: bool,
}

/// Everything a model command needs after merging all sources.
#[derive(Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub init: InitStrategy,
    pub standardize: bool,
}

fn parse_flag<T: std::str::FromStr<Err = protomil::Error>>(v: &Option<String>) -> Result<Option<T>, CliError> {
    v.as_deref().map(str::parse).transpose().map_err(CliError::from)
}

pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::usage(
                "invalid-argument",
                format!("{SEED_ENV} is not an unsigned integer: '{v}'"),
            )
        }),
        Err(_) => Ok(None),
    }
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let preset: Preset = match self.preset.as_ref().or(config.preset.as_ref()) {
            Some(name) => name.parse()?,
            None => Preset::Table1Musk1,
        };
        let mut h = preset.hyperparams();
        let pick = |flag: Option<f64>, file: Option<f64>, base: f64| flag.or(file).unwrap_or(base);
        h.lr_weights = pick(self.lr_weights, config.lr_weights, h.lr_weights);
        h.lr_prototypes = pick(self.lr_prototypes, config.lr_prototypes, h.lr_prototypes);
        h.lambda_w = pick(self.lambda_w, config.lambda_w, h.lambda_w);
        h.lambda_p = pick(self.lambda_p, config.lambda_p, h.lambda_p);
        h.lambda_d = pick(self.lambda_d, config.lambda_d, h.lambda_d);
        h.epochs = self.epochs.or(config.epochs).unwrap_or(h.epochs);
        h.prototypes = self.proto_count.or(config.proto_count).unwrap_or(h.prototypes);
        if let Some(aggs) = parse_flag::<AggregatorSet>(&self.aggregators)?.or(config.aggregators) {
            h.aggregators = aggs;
        }
        h.validate()?;
        let init = parse_flag::<InitStrategy>(&self.init)?
            .or(config.init)
            .unwrap_or_default();
        let seed = match self.seed.or(config.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let standardize = self.standardize || config.standardize.unwrap_or(false);
        Ok(Resolved {
            config,
            hyper: h,
            seed,
            init,
            standardize,
        })
    }
}

impl Resolved {
    pub fn data(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone().or_else(|| self.config.data.clone()).ok_or_else(|| {
            CliError::usage(
                "missing-argument",
                "no data file given (use --data or the config key 'data')",
            )
        })
    }

    pub fn out(&self, flag: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.config.out.clone())
    }
}
