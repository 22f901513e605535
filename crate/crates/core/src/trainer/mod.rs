//! Epoch-based training with one bag per step, evaluation, and the repeated
//! cross-validation protocol.

mod cv;
mod export;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataset::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::model::{backward, forward, init_prototypes, terms_from_cache, Hyperparams, InitStrategy, ModelParams};
use crate::optim::Adam;
use crate::rng::{substream, tag};

pub use self::cv::{cross_validate, CvOptions, CvReport, FoldResult, Protocol};
pub use self::export::{export_prototypes, read_prototypes_csv, ExportMeta, ExportedFiles};

/// Per-epoch training trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    /// Mean bag objective over the epoch, each bag evaluated just before its
    /// own update.
    pub objective: Vec<f64>,
    /// Fraction of bags classified correctly at the moment they were visited.
    pub accuracy: Vec<f64>,
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub optimizer: Adam,
    /// Digest of everything the run read from its training bags.
    pub data_digest: u64,
}

/// Order-sensitive digest of bag ids, labels and feature bits.
pub fn dataset_digest(bags: &[Bag]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |w: u64| h = (h ^ w).wrapping_mul(0x0000_0100_0000_01b3);
    for b in bags {
        b.id().bytes().for_each(|c| mix(u64::from(c)));
        mix(u64::from(b.label().as_u8()));
        b.as_flat().iter().for_each(|v| mix(v.to_bits()));
    }
    h
}

/// Fits prototypes and classifier jointly.
///
/// Prototypes start from `init`, the classifier from zero. Each epoch visits
/// every bag once in a freshly shuffled order and takes one Adam step per
/// bag, with the full regularizer charged at every step. Initialization and
/// shuffling draw from separate streams of `seed`.
pub fn train(data: &Dataset, hyper: &Hyperparams, init: InitStrategy, seed: u64) -> Result<TrainOutput> {
    hyper.validate()?;
    data.require_both_classes()?;
    let prototypes = init_prototypes(data, hyper.prototypes, init, seed)?;
    let mut params = ModelParams::new(prototypes, hyper.aggregators);
    let mut optimizer = Adam::new(&params, hyper);
    let mut shuffle_rng = substream(seed, &[tag::SHUFFLE]);
    let bags = data.bags();
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut objective = 0.0;
        let mut correct = 0usize;
        for &i in &order {
            let bag = &bags[i];
            let diverged = |what| Error::NonFinite {
                what,
                epoch,
                bag_id: bag.id().to_string(),
            };
            let (yhat, cache) = forward(bag, &params, hyper)?;
            let loss = terms_from_cache(bag.label(), &params, hyper, &cache).total();
            if !loss.is_finite() {
                return Err(diverged("loss"));
            }
            objective += loss;
            correct += usize::from((yhat >= 0.5) == bag.label().is_positive());
            let grads = backward(bag, &params, hyper, &cache)?;
            optimizer.step(&mut params, &grads).map_err(|e| match e {
                Error::NonFiniteGradient(_) => diverged("gradient"),
                other => other,
            })?;
        }
        history.objective.push(objective / bags.len() as f64);
        history.accuracy.push(correct as f64 / bags.len() as f64);
        history.seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutput {
        params,
        history,
        optimizer,
        data_digest: dataset_digest(bags),
    })
}

/// Fraction of bags whose thresholded prediction (`yhat >= 0.5` means
/// positive) matches the label.
pub fn evaluate(params: &ModelParams, hyper: &Hyperparams, bags: &[Bag]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty bag list".into()));
    }
    let mut correct = 0usize;
    for bag in bags {
        let (yhat, _) = forward(bag, params, hyper)?;
        correct += usize::from((yhat >= 0.5) == bag.label().is_positive());
    }
    Ok(correct as f64 / bags.len() as f64)
}
