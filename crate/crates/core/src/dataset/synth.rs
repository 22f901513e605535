use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Bag, Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// Parameters of the witness-bag generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bags: usize,
    /// Inclusive bounds on instances per bag.
    pub instances_min: usize,
    pub instances_max: usize,
    pub features: usize,
    /// Fraction of a positive bag's instances that are witnesses; at least
    /// one witness is always planted.
    pub witness_rate: f64,
    /// Offset of the witness Gaussian along the first feature axis.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_bags: 100,
            instances_min: 5,
            instances_max: 10,
            features: 10,
            witness_rate: 0.2,
            separation: 8.0,
            seed: 0,
        }
    }
}

/// Generates bags under the standard MIL assumption.
///
/// Background instances are N(0, I). A positive bag replaces
/// `max(1, round(witness_rate * K))` randomly placed instances with draws
/// from N(separation * e_0, I). Half the bags (rounded down) are positive,
/// in shuffled order.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_bags < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_bags must be at least 2, got {}",
            cfg.n_bags
        )));
    }
    if cfg.features < 1 {
        return Err(Error::InvalidArgument("features must be at least 1".into()));
    }
    if cfg.instances_min < 1 || cfg.instances_min > cfg.instances_max {
        return Err(Error::InvalidArgument(format!(
            "degenerate instances-per-bag range [{}, {}]",
            cfg.instances_min, cfg.instances_max
        )));
    }
    if !(cfg.witness_rate > 0.0 && cfg.witness_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "witness_rate must lie in (0, 1], got {}; a positive bag must contain a witness",
            cfg.witness_rate
        )));
    }
    if !(cfg.separation > 0.0 && cfg.separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be positive, got {}",
            cfg.separation
        )));
    }

    let mut rng = substream(cfg.seed, &[tag::SYNTH]);
    let n_pos = cfg.n_bags / 2;
    let mut labels: Vec<Label> = (0..cfg.n_bags).map(|i| Label::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let l = cfg.features;
    let bags = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let k = rng.random_range(cfg.instances_min..=cfg.instances_max);
            let mut data: Vec<f64> = (0..k * l).map(|_| StandardNormal.sample(&mut rng)).collect();
            if label.is_positive() {
                let witnesses = ((cfg.witness_rate * k as f64).round() as usize).clamp(1, k);
                for slot in rand::seq::index::sample(&mut rng, k, witnesses) {
                    data[slot * l] += cfg.separation;
                }
            }
            Bag::from_flat(format!("bag{i:04}"), label, l, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(bags)
}
