//! Bag-to-prototype distance features and per-bag layer normalization.
//!
//! A bag with K instances and a set of D prototypes produce a K×D table of
//! distances. Each active aggregator reduces one column of that table to a
//! scalar, giving a raw feature vector of length A·D laid out
//! aggregator-major: entry `a * D + d` belongs to aggregator `a` (in
//! canonical MIN, MEAN, MAX order) and prototype `d`. The raw vector is then
//! recentred and rescaled as one row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Bag;
use crate::error::{Error, Result};

/// Floor applied to distances and norms before dividing by them.
pub const GRAD_FLOOR: f64 = 1e-12;

/// Default stabilizer added to the standard deviation in layer norm.
pub const DEFAULT_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregator {
    Min,
    Mean,
    Max,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Min, Aggregator::Mean, Aggregator::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Min => "min",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Aggregator::Min),
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(Error::InvalidArgument(format!("unknown aggregator '{other}'"))),
        }
    }
}

/// Nonempty subset of {MIN, MEAN, MAX}, always iterated in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AggregatorSet {
    bits: u8,
}

impl AggregatorSet {
    pub const MIN: AggregatorSet = AggregatorSet { bits: 1 };
    pub const ALL: AggregatorSet = AggregatorSet { bits: 7 };

    pub fn new(aggs: &[Aggregator]) -> Result<Self> {
        let mut bits = 0u8;
        for &a in aggs {
            let bit = 1 << (a as u8);
            if bits & bit != 0 {
                return Err(Error::InvalidArgument(format!("duplicate aggregator '{a}'")));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(Error::InvalidArgument("aggregator set must be nonempty".into()));
        }
        Ok(AggregatorSet { bits })
    }

    /// All seven nonempty subsets.
    pub fn all_subsets() -> impl Iterator<Item = AggregatorSet> {
        (1u8..8).map(|bits| AggregatorSet { bits })
    }

    pub fn contains(self, a: Aggregator) -> bool {
        self.bits & (1 << (a as u8)) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Aggregator> {
        Aggregator::ALL.into_iter().filter(move |&a| self.contains(a))
    }

    /// Number of active aggregators, A.
    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Position of `a` in the feature layout, if active.
    pub fn slot(self, a: Aggregator) -> Option<usize> {
        self.iter().position(|b| b == a)
    }
}

impl Default for AggregatorSet {
    fn default() -> Self {
        AggregatorSet::ALL
    }
}

impl fmt::Display for AggregatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Aggregator::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for AggregatorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let aggs = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Aggregator>>>()?;
        AggregatorSet::new(&aggs)
    }
}

impl Serialize for AggregatorSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(Aggregator::name))
    }
}

impl<'de> Deserialize<'de> for AggregatorSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let aggs = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<Aggregator>>>()
            .map_err(serde::de::Error::custom)?;
        AggregatorSet::new(&aggs).map_err(serde::de::Error::custom)
    }
}

/// D prototypes of width L, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    data: Vec<f64>,
    count: usize,
    width: usize,
}

impl Prototypes {
    pub fn from_flat(count: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 || width == 0 {
            return Err(Error::InvalidArgument("prototype matrix must be at least 1x1".into()));
        }
        if data.len() != count * width {
            return Err(Error::Shape(format!(
                "{} values for a {count}x{width} prototype matrix",
                data.len()
            )));
        }
        Ok(Prototypes { data, count, width })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged prototype rows".into()));
        }
        Self::from_flat(rows.len(), width, rows.concat())
    }

    pub fn zeros(count: usize, width: usize) -> Self {
        Prototypes {
            data: vec![0.0; count * width],
            count,
            width,
        }
    }

    /// Number of prototypes, D.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Prototype width, L.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.data[d * self.width..(d + 1) * self.width]
    }

    pub fn row_mut(&mut self, d: usize) -> &mut [f64] {
        &mut self.data[d * self.width..(d + 1) * self.width]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// A differentiable dissimilarity between an instance and a prototype.
pub trait Distance {
    fn distance(&self, x: &[f64], p: &[f64]) -> f64;

    /// Adds `scale * ∂distance/∂p` to `out`, given the already computed
    /// `dist = distance(x, p)`.
    fn accumulate_grad_p(&self, x: &[f64], p: &[f64], dist: f64, scale: f64, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Distance for Euclidean {
    fn distance(&self, x: &[f64], p: &[f64]) -> f64 {
        x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    // (p - x) / max(dist, floor): bounded, and zero when x == p
    fn accumulate_grad_p(&self, x: &[f64], p: &[f64], dist: f64, scale: f64, out: &mut [f64]) {
        let s = scale / dist.max(GRAD_FLOOR);
        for ((o, &xi), &pi) in out.iter_mut().zip(x).zip(p) {
            *o += s * (pi - xi);
        }
    }
}

/// Euclidean distance between equal-length vectors.
pub fn euclidean(x: &[f64], p: &[f64]) -> Result<f64> {
    if x.len() != p.len() {
        return Err(Error::WidthMismatch {
            expected: p.len(),
            got: x.len(),
        });
    }
    Ok(Euclidean.distance(x, p))
}

/// Pooled distances for one bag plus the bookkeeping backprop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub aggregators: AggregatorSet,
    pub prototype_count: usize,
    /// Aggregated distances, length A·D, aggregator-major.
    pub phi_raw: Vec<f64>,
    /// Per prototype, the lowest instance index attaining the minimum.
    pub argmin_index: Option<Vec<usize>>,
    /// Per prototype, the lowest instance index attaining the maximum.
    pub argmax_index: Option<Vec<usize>>,
    /// Full K×D distance table, row `k` for instance `k`.
    pub distances: Vec<f64>,
    /// Canonical instance order used for the MEAN reduction.
    pub mean_order: Option<Vec<usize>>,
}

impl PooledFeatures {
    pub fn distance(&self, k: usize, d: usize) -> f64 {
        self.distances[k * self.prototype_count + d]
    }

    pub fn feature(&self, a: Aggregator, d: usize) -> Option<f64> {
        self.aggregators
            .slot(a)
            .map(|s| self.phi_raw[s * self.prototype_count + d])
    }
}

pub fn pool_distances(bag: &Bag, prototypes: &Prototypes, aggs: AggregatorSet) -> Result<PooledFeatures> {
    pool_distances_with(&Euclidean, bag, prototypes, aggs)
}

/// Aggregates per-instance distances to every prototype.
///
/// MIN and MAX are exact selections, and MEAN sums in the bag's canonical
/// order, so the features are bit-identical under any instance permutation.
pub fn pool_distances_with<M: Distance>(
    metric: &M,
    bag: &Bag,
    prototypes: &Prototypes,
    aggs: AggregatorSet,
) -> Result<PooledFeatures> {
    if bag.is_empty() {
        return Err(Error::EmptyBag(bag.id().to_string()));
    }
    if bag.width() != prototypes.width() {
        return Err(Error::WidthMismatch {
            expected: prototypes.width(),
            got: bag.width(),
        });
    }
    let dcount = prototypes.count();
    let k = bag.len();
    let mut distances = Vec::with_capacity(k * dcount);
    for x in bag.instances() {
        distances.extend(prototypes.rows().map(|p| metric.distance(x, p)));
    }
    let dist = &distances;
    let column = |d: usize| (0..k).map(move |i| (i, dist[i * dcount + d]));

    let mut phi_raw = Vec::with_capacity(aggs.len() * dcount);
    let mut argmin_index = None;
    let mut argmax_index = None;
    let mut mean_order = None;
    for agg in aggs.iter() {
        match agg {
            Aggregator::Min => {
                // strict comparison keeps the lowest index on ties
                let idx: Vec<usize> = (0..dcount)
                    .map(|d| {
                        column(d)
                            .fold(
                                (0, f64::INFINITY),
                                |best, (i, v)| if v < best.1 { (i, v) } else { best },
                            )
                            .0
                    })
                    .collect();
                phi_raw.extend(idx.iter().enumerate().map(|(d, &i)| distances[i * dcount + d]));
                argmin_index = Some(idx);
            }
            Aggregator::Mean => {
                let order = bag.canonical_order();
                for d in 0..dcount {
                    let sum: f64 = order.iter().map(|&i| distances[i * dcount + d]).sum();
                    phi_raw.push(sum / k as f64);
                }
                mean_order = Some(order);
            }
            Aggregator::Max => {
                let idx: Vec<usize> = (0..dcount)
                    .map(|d| {
                        column(d)
                            .fold(
                                (0, f64::NEG_INFINITY),
                                |best, (i, v)| if v > best.1 { (i, v) } else { best },
                            )
                            .0
                    })
                    .collect();
                phi_raw.extend(idx.iter().enumerate().map(|(d, &i)| distances[i * dcount + d]));
                argmax_index = Some(idx);
            }
        }
    }
    Ok(PooledFeatures {
        aggregators: aggs,
        prototype_count: dcount,
        phi_raw,
        argmin_index,
        argmax_index,
        distances,
        mean_order,
    })
}

/// Per-row statistics from a layer-norm forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mu: f64,
    /// Population standard deviation of the input row.
    pub sigma: f64,
    pub eps: f64,
}

impl NormStats {
    /// The divisor actually applied, `sigma + eps`.
    pub fn scale(&self) -> f64 {
        self.sigma + self.eps
    }
}

/// `(x - mean) / (std + eps)` over the whole row, without gain or bias.
pub fn layer_norm_forward(phi_raw: &[f64], eps: f64) -> Result<(Vec<f64>, NormStats)> {
    if phi_raw.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer norm needs at least 2 features, got {}",
            phi_raw.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "layer norm eps must be positive, got {eps}"
        )));
    }
    let n = phi_raw.len() as f64;
    let rough = phi_raw.iter().sum::<f64>() / n;
    // one refinement pass removes most of the rounding in the first sum
    let mu = rough + phi_raw.iter().map(|v| v - rough).sum::<f64>() / n;
    let sigma = (phi_raw.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let stats = NormStats { mu, sigma, eps };
    let s = stats.scale();
    Ok((phi_raw.iter().map(|v| (v - mu) / s).collect(), stats))
}

/// Gradient of [`layer_norm_forward`] with respect to its input.
///
/// With `y = (x - mu) / s`, `s = sigma + eps` and `n` entries:
///
/// ```text
/// dx = (g - mean(g) - y * mean(g * y) * s / sigma) / s
/// ```
///
/// The `s / sigma` factor comes from differentiating sigma itself; it tends
/// to 1 as eps/sigma vanishes. A constant row has `y = 0`, so that term is
/// dropped when `sigma == 0`.
pub fn layer_norm_backward(grad_out: &[f64], phi_norm: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    if grad_out.len() != phi_norm.len() {
        return Err(Error::Shape(format!(
            "layer norm backward: gradient of length {} for {} features",
            grad_out.len(),
            phi_norm.len()
        )));
    }
    let n = grad_out.len() as f64;
    let s = stats.scale();
    let g_mean = grad_out.iter().sum::<f64>() / n;
    let gy_mean = grad_out.iter().zip(phi_norm).map(|(g, y)| g * y).sum::<f64>() / n;
    let coupling = if stats.sigma > 0.0 {
        gy_mean * s / stats.sigma
    } else {
        0.0
    };
    Ok(grad_out
        .iter()
        .zip(phi_norm)
        .map(|(g, y)| (g - g_mean - y * coupling) / s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bag(rows: Vec<Vec<f64>>) -> Bag {
        Bag::new("t", Label::Positive, rows).unwrap()
    }

    #[test]
    fn aggregator_set_parsing() {
        let s: AggregatorSet = "max,min".parse().unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![Aggregator::Min, Aggregator::Max]);
        assert_eq!(s.to_string(), "min,max");
        assert_eq!(s.slot(Aggregator::Max), Some(1));
        assert!("min,min".parse::<AggregatorSet>().is_err());
        assert!("".parse::<AggregatorSet>().is_err());
        assert!("median".parse::<AggregatorSet>().is_err());
        assert_eq!(AggregatorSet::all_subsets().count(), 7);
        let json = serde_json::to_string(&AggregatorSet::ALL).unwrap();
        assert_eq!(json, r#"["min","mean","max"]"#);
        assert_eq!(
            serde_json::from_str::<AggregatorSet>(&json).unwrap(),
            AggregatorSet::ALL
        );
    }

    #[test]
    fn euclidean_basics() {
        assert_eq!(euclidean(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn euclidean_matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut acc = 0.0;
            for l in 0..7 {
                let diff = p[l] - x[l];
                acc += diff * diff;
            }
            let got = euclidean(&x, &p).unwrap();
            assert!((got - acc.sqrt()).abs() < 1e-12);
            assert_eq!(got, euclidean(&p, &x).unwrap());
        }
    }

    #[test]
    fn min_picks_smallest_distance() {
        // distances to the origin prototype are 2.0, 0.5, 1.1
        let b = bag(vec![vec![2.0], vec![0.5], vec![-1.1]]);
        let protos = Prototypes::from_rows(&[vec![0.0]]).unwrap();
        let f = pool_distances(&b, &protos, AggregatorSet::MIN).unwrap();
        assert_eq!(f.phi_raw, vec![0.5]);
        assert_eq!(f.argmin_index, Some(vec![1]));
        assert!(f.argmax_index.is_none());
    }

    #[test]
    fn min_ties_go_to_lowest_index() {
        let b = bag(vec![vec![3.0], vec![1.0], vec![-1.0]]);
        let protos = Prototypes::from_rows(&[vec![0.0]]).unwrap();
        let f = pool_distances(&b, &protos, AggregatorSet::ALL).unwrap();
        assert_eq!(f.argmin_index, Some(vec![1]));
        assert_eq!(f.argmax_index, Some(vec![0]));
    }

    #[test]
    fn single_instance_bag_collapses_aggregators() {
        let b = bag(vec![vec![1.0, 2.0, 3.0]]);
        let protos = Prototypes::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, -1.0, 2.0]]).unwrap();
        let f = pool_distances(&b, &protos, AggregatorSet::ALL).unwrap();
        for d in 0..2 {
            let min = f.feature(Aggregator::Min, d).unwrap();
            assert_eq!(min, f.feature(Aggregator::Mean, d).unwrap());
            assert_eq!(min, f.feature(Aggregator::Max, d).unwrap());
        }
    }

    #[test]
    fn pooling_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, dcount, l) = (6, 4, 3);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let prows: Vec<Vec<f64>> = (0..dcount)
            .map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let f = pool_distances(
            &bag(rows.clone()),
            &Prototypes::from_rows(&prows).unwrap(),
            AggregatorSet::ALL,
        )
        .unwrap();
        for (d, p) in prows.iter().enumerate() {
            let all: Vec<f64> = rows
                .iter()
                .map(|x| x.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = all.iter().sum::<f64>() / k as f64;
            assert!((f.phi_raw[d] - min).abs() < 1e-12);
            assert!((f.phi_raw[dcount + d] - mean).abs() < 1e-12);
            assert!((f.phi_raw[2 * dcount + d] - max).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_rejects_width_mismatch() {
        let b = bag(vec![vec![1.0, 2.0]]);
        let protos = Prototypes::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            pool_distances(&b, &protos, AggregatorSet::MIN),
            Err(Error::WidthMismatch { .. })
        ));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        for c in [0.0, 3.5, -1e6] {
            let (y, st) = layer_norm_forward(&[c; 5], 1e-5).unwrap();
            assert_eq!(st.sigma, 0.0);
            assert!(y.iter().all(|&v| v == 0.0));
            let g = layer_norm_backward(&[0.3, -1.0, 2.0, 0.0, 1.0], &y, &st).unwrap();
            let mean = 2.3 / 5.0;
            for (gi, go) in g.iter().zip([0.3, -1.0, 2.0, 0.0, 1.0]) {
                assert!((gi - (go - mean) / 1e-5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_two_point_symmetry() {
        let (y, st) = layer_norm_forward(&[0.0, 2.0], 1e-15).unwrap();
        assert_eq!((st.mu, st.sigma), (1.0, 1.0));
        assert!((y[0] + 1.0).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rejects_bad_input() {
        assert!(layer_norm_forward(&[1.0], 1e-5).is_err());
        assert!(layer_norm_forward(&[1.0, 2.0], 0.0).is_err());
        let (y, st) = layer_norm_forward(&[1.0, 2.0], 1e-5).unwrap();
        assert!(layer_norm_backward(&[1.0], &y, &st).is_err());
    }

    #[test]
    fn constant_upstream_gradient_vanishes() {
        let (y, st) = layer_norm_forward(&[0.3, 1.7, -2.0, 0.9], 1e-5).unwrap();
        let g = layer_norm_backward(&[0.7; 4], &y, &st).unwrap();
        // mean(g * y) = 0.7 * mean(y) = 0, and g - mean(g) = 0
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn orthogonal_upstream_gradient_passes_through_scaled() {
        let (y, st) = layer_norm_forward(&[1.0, 2.0, 4.0, 7.0], 1e-5).unwrap();
        // Project a vector off span{1, y}; y is already orthogonal to 1.
        let mut g = vec![0.5, -1.0, 3.0, 2.0];
        let n = g.len() as f64;
        let gm = g.iter().sum::<f64>() / n;
        g.iter_mut().for_each(|v| *v -= gm);
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let gy: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(&y).for_each(|(v, yi)| *v -= gy / yy * yi);
        let back = layer_norm_backward(&g, &y, &st).unwrap();
        for (b, gi) in back.iter().zip(&g) {
            assert!((b - gi / st.scale()).abs() < 1e-12);
        }
    }
}
