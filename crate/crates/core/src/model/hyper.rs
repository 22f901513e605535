use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AggregatorSet, DEFAULT_NORM_EPS};

/// Everything that shapes one training run except the data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// L1 weight on the classifier weights (bias excluded).
    pub lambda_w: f64,
    /// Weight on the sum of prototype L2 norms.
    pub lambda_p: f64,
    /// Weight on the sum of raw pooled distances.
    pub lambda_d: f64,
    /// Number of prototypes, D.
    pub prototypes: usize,
    pub aggregators: AggregatorSet,
    /// Layer-norm stabilizer added to the standard deviation.
    pub eps: f64,
    pub lr_weights: f64,
    pub lr_prototypes: f64,
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Hyperparams {
    fn default() -> Self {
        Preset::Table1Musk1.hyperparams()
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("lambda_w", self.lambda_w),
            ("lambda_p", self.lambda_p),
            ("lambda_d", self.lambda_d),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        for (name, v) in [("lr_weights", self.lr_weights), ("lr_prototypes", self.lr_prototypes)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.prototypes < 1 {
            return bad("prototype count must be at least 1".into());
        }
        if self.prototypes * self.aggregators.len() < 2 {
            return bad("need at least 2 pooled features (prototypes x aggregators) for layer normalization".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }
}

/// Named hyperparameter sets: one per benchmark column, plus the
/// alternate values given alongside the method's formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Table1Musk1,
    Table1Musk2,
    Table1Fox,
    Table1Tiger,
    Table1Elephant,
    Appendix,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Table1Musk1,
        Preset::Table1Musk2,
        Preset::Table1Fox,
        Preset::Table1Tiger,
        Preset::Table1Elephant,
        Preset::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1Musk1 => "table1-musk1",
            Preset::Table1Musk2 => "table1-musk2",
            Preset::Table1Fox => "table1-fox",
            Preset::Table1Tiger => "table1-tiger",
            Preset::Table1Elephant => "table1-elephant",
            Preset::Appendix => "appendix",
        }
    }

    pub fn hyperparams(self) -> Hyperparams {
        // (lr_weights, lr_prototypes)
        let (lr_w, lr_p) = match self {
            Preset::Table1Musk1 => (3e-5, 9e-5),
            Preset::Table1Musk2 => (4e-5, 8e-5),
            Preset::Table1Fox => (3e-5, 5e-5),
            Preset::Table1Tiger => (1e-4, 3e-5),
            Preset::Table1Elephant => (3e-5, 9e-5),
            Preset::Appendix => (5e-5, 1e-4),
        };
        let (lambda_w, lambda_p) = match self {
            Preset::Appendix => (0.05, 0.05),
            _ => (3e-4, 4e-3),
        };
        Hyperparams {
            lambda_w,
            lambda_p,
            lambda_d: 1e-2,
            prototypes: 24,
            aggregators: AggregatorSet::ALL,
            eps: DEFAULT_NORM_EPS,
            lr_weights: lr_w,
            lr_prototypes: lr_p,
            epochs: 100,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::InvalidArgument(format!("unknown preset '{s}' (expected one of {})", names.join(", ")))
        })
    }
}
