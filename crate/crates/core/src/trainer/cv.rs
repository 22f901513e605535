use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate, train};
use crate::dataset::{stratified_kfold, Dataset, FoldSplit, Standardizer};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, InitStrategy};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Z-score features with statistics from each training fold.
    pub standardize: bool,
    pub init: InitStrategy,
    /// Worker threads for running folds; results do not depend on it.
    pub jobs: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 10,
            repeats: 5,
            seed: 0,
            standardize: false,
            init: InitStrategy::Gaussian,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub accuracy: f64,
    #[serde(skip)]
    pub train_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Protocol {
    pub k: usize,
    pub repeats: usize,
    pub standardize: bool,
    pub init: InitStrategy,
}

/// Accuracy summary over every (repeat, fold) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
    /// `std / sqrt(repeats * k)`.
    pub stderr: f64,
    pub per_fold: Vec<FoldResult>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub protocol: Protocol,
}

impl CvReport {
    fn summarize(per_fold: Vec<FoldResult>, hyper: &Hyperparams, opts: &CvOptions) -> Self {
        let n = per_fold.len() as f64;
        let mean = per_fold.iter().map(|f| f.accuracy).sum::<f64>() / n;
        let std = (per_fold.iter().map(|f| (f.accuracy - mean).powi(2)).sum::<f64>() / n).sqrt();
        CvReport {
            mean,
            std,
            stderr: std / n.sqrt(),
            per_fold,
            hyperparams: hyper.clone(),
            seed: opts.seed,
            protocol: Protocol {
                k: opts.k,
                repeats: opts.repeats,
                standardize: opts.standardize,
                init: opts.init,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn run_fold(data: &Dataset, split: &FoldSplit, hyper: &Hyperparams, opts: &CvOptions) -> Result<FoldResult> {
    let mut train_set = data.subset(&split.train_bag_indices)?;
    let mut test_set = data.subset(&split.test_bag_indices)?;
    if opts.standardize {
        let z = Standardizer::fit(&train_set);
        train_set = z.apply(&train_set)?;
        test_set = z.apply(&test_set)?;
    }
    let seed = derive_seed(
        opts.seed,
        &[tag::TRAIN, split.repeat_index as u64, split.fold_index as u64],
    );
    let out = train(&train_set, hyper, opts.init, seed)?;
    let accuracy = evaluate(&out.params, hyper, test_set.bags())?;
    Ok(FoldResult {
        repeat: split.repeat_index,
        fold: split.fold_index,
        accuracy,
        train_digest: out.data_digest,
    })
}

/// Repeated stratified k-fold cross-validation.
///
/// Every fold trains from its own seed stream, derived from
/// `(seed, repeat, fold)`, so the report is identical for any `jobs`.
pub fn cross_validate(data: &Dataset, hyper: &Hyperparams, opts: &CvOptions) -> Result<CvReport> {
    hyper.validate()?;
    if opts.jobs < 1 {
        return Err(Error::InvalidArgument("jobs must be at least 1".into()));
    }
    let splits = stratified_kfold(data, opts.k, opts.repeats, opts.seed)?;
    let per_fold = if opts.jobs == 1 {
        splits
            .iter()
            .map(|s| run_fold(data, s, hyper, opts))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            splits
                .par_iter()
                .map(|s| run_fold(data, s, hyper, opts))
                .collect::<Result<Vec<_>>>()
        })?
    };
    Ok(CvReport::summarize(per_fold, hyper, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SynthConfig};
    use crate::model::Preset;

    #[test]
    fn two_fold_mean_is_average_of_folds() {
        let ds = gen_synthetic(&SynthConfig {
            n_bags: 4,
            features: 3,
            ..Default::default()
        })
        .unwrap();
        let h = Hyperparams {
            prototypes: 2,
            epochs: 2,
            ..Preset::Appendix.hyperparams()
        };
        let opts = CvOptions {
            k: 2,
            repeats: 1,
            seed: 3,
            ..Default::default()
        };
        let r = cross_validate(&ds, &h, &opts).unwrap();
        assert_eq!(r.per_fold.len(), 2);
        assert_eq!(r.mean, (r.per_fold[0].accuracy + r.per_fold[1].accuracy) / 2.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["mean", "std", "stderr", "per_fold", "hyperparams", "seed", "protocol"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["protocol"]["k"], 2);
        assert!(json["per_fold"][0].get("train_digest").is_none());
    }

    #[test]
    fn summary_statistics() {
        let folds = [1.0, 0.5, 0.75, 0.75]
            .iter()
            .enumerate()
            .map(|(i, &a)| FoldResult {
                repeat: 0,
                fold: i,
                accuracy: a,
                train_digest: 0,
            })
            .collect();
        let r = CvReport::summarize(
            folds,
            &Hyperparams::default(),
            &CvOptions {
                k: 4,
                repeats: 1,
                ..Default::default()
            },
        );
        assert_eq!(r.mean, 0.75);
        let std = (0.125f64 / 4.0).sqrt();
        assert!((r.std - std).abs() < 1e-15);
        assert!((r.stderr - std / 2.0).abs() < 1e-15);
    }
}
