use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::Prototypes;
use crate::rng::{substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Copy randomly chosen training instances. A prototype that coincides
    /// with an instance sits at a distance kink, where its subgradient
    /// through that instance is zero.
    SampleInstances,
    /// Draw each coordinate from a normal fitted to that feature.
    #[default]
    Gaussian,
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitStrategy::SampleInstances => "sample-instances",
            InitStrategy::Gaussian => "gaussian",
        })
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample-instances" => Ok(InitStrategy::SampleInstances),
            "gaussian" => Ok(InitStrategy::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown init strategy '{other}' (expected sample-instances or gaussian)"
            ))),
        }
    }
}

/// Random starting prototypes drawn from the training instances.
///
/// Instances are enumerated bag by bag in each bag's canonical order, so the
/// result does not depend on how rows inside a bag happen to be ordered.
pub fn init_prototypes(data: &Dataset, count: usize, strategy: InitStrategy, seed: u64) -> Result<Prototypes> {
    if count < 1 {
        return Err(Error::InvalidArgument("prototype count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot initialize prototypes from an empty dataset".into(),
        ));
    }
    let width = data.feature_count();
    let instances: Vec<&[f64]> = data.canonical_instances().collect();
    let mut rng = substream(seed, &[tag::INIT]);

    let flat: Vec<f64> = match strategy {
        InitStrategy::SampleInstances => {
            let picks: Vec<usize> = if instances.len() >= count {
                rand::seq::index::sample(&mut rng, instances.len(), count).into_vec()
            } else {
                use rand::Rng;
                (0..count).map(|_| rng.random_range(0..instances.len())).collect()
            };
            picks.iter().flat_map(|&i| instances[i].iter().copied()).collect()
        }
        InitStrategy::Gaussian => {
            let n = instances.len() as f64;
            let normals = (0..width)
                .map(|j| {
                    // a constant feature stays exactly constant
                    let first = instances[0][j];
                    let (mean, var) = if instances.iter().all(|x| x[j] == first) {
                        (first, 0.0)
                    } else {
                        let mean = instances.iter().map(|x| x[j]).sum::<f64>() / n;
                        (mean, instances.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n)
                    };
                    Normal::new(mean, var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            (0..count * width)
                .map(|i| normals[i % width].sample(&mut rng))
                .collect()
        }
    };
    Prototypes::from_flat(count, width, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Bag, Label};

    fn data() -> Dataset {
        Dataset::new(vec![
            Bag::new("a", Label::Positive, vec![vec![1.0, 0.1], vec![2.0, 0.1]]).unwrap(),
            Bag::new("b", Label::Negative, vec![vec![3.0, 0.1]]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn exhaustive_sampling_is_a_permutation() {
        let p = init_prototypes(&data(), 3, InitStrategy::SampleInstances, 9).unwrap();
        let mut firsts: Vec<f64> = p.rows().map(|r| r[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn oversampling_falls_back_to_replacement() {
        let p = init_prototypes(&data(), 7, InitStrategy::SampleInstances, 1).unwrap();
        assert_eq!(p.count(), 7);
        assert!(p.rows().all(|r| [1.0, 2.0, 3.0].contains(&r[0])));
    }

    #[test]
    fn seeded_and_deterministic() {
        for s in [InitStrategy::SampleInstances, InitStrategy::Gaussian] {
            assert_eq!(
                init_prototypes(&data(), 2, s, 4).unwrap(),
                init_prototypes(&data(), 2, s, 4).unwrap()
            );
        }
    }

    #[test]
    fn gaussian_keeps_constant_feature_constant() {
        let p = init_prototypes(&data(), 16, InitStrategy::Gaussian, 2).unwrap();
        let col: Vec<f64> = p.rows().map(|r| r[1]).collect();
        assert!(col.iter().all(|&v| v == col[0]));
        assert!((col[0] - 0.1).abs() < 1e-12);
        assert!(p.rows().any(|r| r[0] != p.row(0)[0]));
    }

    #[test]
    fn zero_prototypes_rejected() {
        assert!(init_prototypes(&data(), 0, InitStrategy::Gaussian, 0).is_err());
    }

    #[test]
    fn strategy_names() {
        assert_eq!("gaussian".parse::<InitStrategy>().unwrap(), InitStrategy::Gaussian);
        assert_eq!(InitStrategy::SampleInstances.to_string(), "sample-instances");
        assert!("kmeans".parse::<InitStrategy>().is_err());
    }
}
