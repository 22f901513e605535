use rand::seq::SliceRandom;
use rand::Rng;

use super::{Bag, Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct DigitBagConfig {
    pub target_digit: u8,
    /// Inclusive bag-size bounds.
    pub bag_size_min: usize,
    pub bag_size_max: usize,
    pub n_bags: usize,
    pub seed: u64,
}

impl Default for DigitBagConfig {
    fn default() -> Self {
        DigitBagConfig {
            target_digit: 9,
            bag_size_min: 5,
            bag_size_max: 15,
            n_bags: 100,
            seed: 0,
        }
    }
}

/// Groups labeled digit images into MIL bags, without replacement.
///
/// Half the bags (rounded down) are built positive: one guaranteed target
/// image, remaining slots drawn from the mixed remaining pool. The other
/// bags are drawn from non-target images only. Labels are then computed from
/// the actual contents, so a bag is positive iff it holds the target digit.
pub fn build_digit_bags(instances: &[(Vec<f64>, u8)], cfg: &DigitBagConfig) -> Result<Dataset> {
    if cfg.bag_size_min < 1 || cfg.bag_size_min > cfg.bag_size_max {
        return Err(Error::InvalidArgument(format!(
            "degenerate bag size range [{}, {}]",
            cfg.bag_size_min, cfg.bag_size_max
        )));
    }
    if cfg.n_bags < 2 {
        return Err(Error::InvalidArgument("n_bags must be at least 2".into()));
    }
    let width = instances
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::PoolExhausted("empty instance pool".into()))?;

    let mut rng = substream(cfg.seed, &[tag::DIGIT_BAGS]);
    let (mut targets, mut others): (Vec<usize>, Vec<usize>) =
        (0..instances.len()).partition(|&i| instances[i].1 == cfg.target_digit);
    if targets.is_empty() || others.is_empty() {
        return Err(Error::InvalidArgument(
            "pool needs both target and non-target digits".into(),
        ));
    }
    targets.shuffle(&mut rng);
    others.shuffle(&mut rng);

    let n_pos = cfg.n_bags / 2;
    let mut plan: Vec<bool> = (0..cfg.n_bags).map(|i| i < n_pos).collect();
    plan.shuffle(&mut rng);

    let exhausted = |what: &str, i: usize| Error::PoolExhausted(format!("ran out of {what} images at bag {i}"));
    let mut bags = Vec::with_capacity(cfg.n_bags);
    for (i, positive) in plan.into_iter().enumerate() {
        let size = rng.random_range(cfg.bag_size_min..=cfg.bag_size_max);
        let mut picked = Vec::with_capacity(size);
        if positive {
            picked.push(targets.pop().ok_or_else(|| exhausted("target", i))?);
            for _ in 1..size {
                let remaining = targets.len() + others.len();
                if remaining == 0 {
                    return Err(exhausted("any", i));
                }
                let from_targets = rng.random_range(0..remaining) < targets.len();
                let pool = if from_targets { &mut targets } else { &mut others };
                picked.push(pool.pop().expect("nonempty pool"));
            }
            picked.shuffle(&mut rng);
        } else {
            for _ in 0..size {
                picked.push(others.pop().ok_or_else(|| exhausted("non-target", i))?);
            }
        }
        let label = Label::from(picked.iter().any(|&j| instances[j].1 == cfg.target_digit));
        let mut data = Vec::with_capacity(size * width);
        for &j in &picked {
            if instances[j].0.len() != width {
                return Err(Error::WidthMismatch {
                    expected: width,
                    got: instances[j].0.len(),
                });
            }
            data.extend_from_slice(&instances[j].0);
        }
        bags.push(Bag::from_flat(format!("digits{i:05}"), label, width, data)?);
    }
    Dataset::new(bags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<(Vec<f64>, u8)> {
        (0..n)
            .map(|i| (vec![(i % 10) as f64 / 10.0; 4], (i % 10) as u8))
            .collect()
    }

    #[test]
    fn labels_follow_target_presence() {
        let src = pool(3000);
        let ds = build_digit_bags(
            &src,
            &DigitBagConfig {
                n_bags: 100,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.len(), 100);
        assert!((45..=55).contains(&ds.positive_count()));
        for bag in ds.bags() {
            let has_nine = bag.instances().any(|x| x[0] == 0.9);
            assert_eq!(bag.label().is_positive(), has_nine, "bag {}", bag.id());
            assert!((5..=15).contains(&bag.len()));
        }
    }

    #[test]
    fn single_target_among_non_targets_is_positive() {
        let mut src: Vec<(Vec<f64>, u8)> = (0..9).map(|_| (vec![0.0], 3)).collect();
        src.push((vec![1.0], 9));
        src.extend((0..10).map(|_| (vec![0.0], 4)));
        let cfg = DigitBagConfig {
            bag_size_min: 10,
            bag_size_max: 10,
            n_bags: 2,
            ..Default::default()
        };
        let ds = build_digit_bags(&src, &cfg).unwrap();
        let labels: Vec<_> = ds
            .bags()
            .iter()
            .map(|b| (b.instances().filter(|x| x[0] == 1.0).count(), b.label()))
            .collect();
        assert!(labels.contains(&(1, Label::Positive)));
        assert!(labels.contains(&(0, Label::Negative)));
    }

    #[test]
    fn exhausted_pool_is_an_error() {
        let src = pool(30);
        let err = build_digit_bags(
            &src,
            &DigitBagConfig {
                n_bags: 10,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::PoolExhausted(_)), "{err}");
    }

    #[test]
    fn pool_without_targets_rejected() {
        let src: Vec<_> = (0..100).map(|_| (vec![0.0], 1u8)).collect();
        assert!(build_digit_bags(&src, &DigitBagConfig::default()).is_err());
    }
}
