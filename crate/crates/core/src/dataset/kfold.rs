use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// One train/test partition of bag indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub repeat_index: usize,
    pub fold_index: usize,
    pub train_bag_indices: Vec<usize>,
    pub test_bag_indices: Vec<usize>,
}

/// Repeated stratified k-fold splits.
///
/// Each class is shuffled with a stream derived from `(seed, repeat)` and
/// dealt round-robin onto the folds; the negative class starts where the
/// positive class stopped so fold sizes stay within one of each other.
/// Output is ordered by repeat, then fold, with sorted index lists.
pub fn stratified_kfold(data: &Dataset, k: usize, repeats: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if repeats < 1 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let labels = data.labels();
    let class_members = |want: Label| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == want)
            .map(|(i, _)| i)
            .collect()
    };
    let pos = class_members(Label::Positive);
    let neg = class_members(Label::Negative);
    for (name, members) in [("positive", &pos), ("negative", &neg)] {
        if members.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{name} class has {} bags, fewer than k={k}",
                members.len()
            )));
        }
    }

    let n = labels.len();
    let mut splits = Vec::with_capacity(repeats * k);
    for repeat in 0..repeats {
        let mut rng = substream(seed, &[tag::FOLDS, repeat as u64]);
        let mut fold_of = vec![0usize; n];
        let mut offset = 0;
        for members in [&pos, &neg] {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for (i, &bag) in shuffled.iter().enumerate() {
                fold_of[bag] = (offset + i) % k;
            }
            offset += shuffled.len();
        }
        for fold in 0..k {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == fold);
            splits.push(FoldSplit {
                repeat_index: repeat,
                fold_index: fold,
                train_bag_indices: train,
                test_bag_indices: test,
            });
        }
    }
    Ok(splits)
}
