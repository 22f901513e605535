//! Bags, datasets and the ways they get in and out of memory.

mod csv;
mod digits;
mod idx;
mod kfold;
mod synth;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_csv, read_csv, write_csv};
pub use self::digits::{build_digit_bags, DigitBagConfig};
pub use self::idx::{load_idx_images, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use self::kfold::{stratified_kfold, FoldSplit};
pub use self::synth::{gen_synthetic, SynthConfig};

/// Binary bag label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// A labeled, nonempty set of equal-width instances.
///
/// Instances are stored row-major in one buffer. Their order is kept as
/// given; it only matters for tie-breaking in min/max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: String,
    label: Label,
    width: usize,
    data: Vec<f64>,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: Label, instances: Vec<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        let width = match instances.first() {
            Some(first) => first.len(),
            None => return Err(Error::EmptyBag(id)),
        };
        if width == 0 {
            return Err(Error::InvalidArgument(format!("bag '{id}' has zero-width instances")));
        }
        let mut data = Vec::with_capacity(width * instances.len());
        for inst in &instances {
            if inst.len() != width {
                return Err(Error::WidthMismatch {
                    expected: width,
                    got: inst.len(),
                });
            }
            data.extend_from_slice(inst);
        }
        Self::from_flat(id, label, width, data)
    }

    /// Builds a bag from a row-major buffer of `len / width` instances.
    pub fn from_flat(id: impl Into<String>, label: Label, width: usize, data: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if width == 0 || data.is_empty() {
            return Err(Error::EmptyBag(id));
        }
        if !data.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "bag '{id}': buffer of {} values is not a multiple of width {width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bag '{id}': non-finite feature at instance {}, column {}",
                pos / width,
                pos % width
            )));
        }
        Ok(Bag { id, label, width, data })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of instances, K.
    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn instance(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn instances(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Instance indices sorted lexicographically by feature values (ties by
    /// index). Any reduction that walks instances in this order gives the
    /// same floating-point result for every permutation of the bag.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(self.instance(a), self.instance(b)).then(a.cmp(&b)));
        order
    }

    /// Returns a copy with instances reordered by `perm` (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Bag> {
        if perm.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of length {} for bag of {}",
                perm.len(),
                self.len()
            )));
        }
        let mut seen = vec![false; perm.len()];
        let mut data = Vec::with_capacity(self.data.len());
        for &k in perm {
            if k >= perm.len() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            data.extend_from_slice(self.instance(k));
        }
        Ok(Bag { data, ..self.clone() })
    }

    fn map_features(&self, mut f: impl FnMut(usize, f64) -> f64) -> Bag {
        let w = self.width;
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i % w, v)).collect();
        Bag { data, ..self.clone() }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// A collection of bags sharing one feature width L.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    feature_count: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let feature_count = bags
            .first()
            .map(Bag::width)
            .ok_or_else(|| Error::InvalidArgument("dataset has no bags".into()))?;
        if let Some(b) = bags.iter().find(|b| b.width() != feature_count) {
            return Err(Error::WidthMismatch {
                expected: feature_count,
                got: b.width(),
            });
        }
        Ok(Dataset { bags, feature_count })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn positive_count(&self) -> usize {
        self.bags.iter().filter(|b| b.label().is_positive()).count()
    }

    pub fn negative_count(&self) -> usize {
        self.len() - self.positive_count()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.bags.iter().map(Bag::label).collect()
    }

    /// Fails unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.positive_count() == 0 || self.negative_count() == 0 {
            return Err(Error::InvalidArgument(format!(
                "training set needs both classes (positive={}, negative={})",
                self.positive_count(),
                self.negative_count()
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let bags = indices
            .iter()
            .map(|&i| {
                self.bags
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("bag index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(bags)
    }

    /// Every instance of every bag, each bag walked in canonical order.
    pub fn canonical_instances(&self) -> impl Iterator<Item = &[f64]> {
        self.bags
            .iter()
            .flat_map(|b| b.canonical_order().into_iter().map(move |k| b.instance(k)))
    }
}

/// Per-feature z-scoring fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over all instances. Constant features get a
    /// unit scale so they map to zero instead of NaN.
    pub fn fit(data: &Dataset) -> Self {
        let l = data.feature_count();
        let n = data.instance_count() as f64;
        let mut mean = vec![0.0; l];
        for inst in data.canonical_instances() {
            for (m, &v) in mean.iter_mut().zip(inst) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; l];
        for inst in data.canonical_instances() {
            for ((s, &v), &m) in var.iter_mut().zip(inst).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.feature_count() != self.mean.len() {
            return Err(Error::WidthMismatch {
                expected: self.mean.len(),
                got: data.feature_count(),
            });
        }
        let bags = data
            .bags()
            .iter()
            .map(|b| b.map_features(|j, v| (v - self.mean[j]) / self.std[j]))
            .collect();
        Dataset::new(bags)
    }
}
