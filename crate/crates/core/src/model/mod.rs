//! Learnable parameters, prediction, the per-bag objective and its gradient.
//!
//! For a bag with label `y` the objective is
//!
//! ```text
//! softplus(z) - y*z  +  λ_w Σ|β_j|  +  λ_p Σ_d ‖P_d‖₂  +  λ_d Σ_j φ_raw_j
//! z = β₀ + Σ_j β_j φ_norm_j
//! ```
//!
//! where `φ_raw` are the pooled distances and `φ_norm` their layer-normalized
//! version. The distance penalty acts on the raw distances; the normalized
//! ones sum to roughly zero in every bag.

mod checkpoint;
mod gradcheck;
mod hyper;
mod init;

use crate::dataset::{Bag, Label};
use crate::error::{Error, Result};
use crate::features::{
    layer_norm_backward, layer_norm_forward, pool_distances, Aggregator, AggregatorSet, Distance, Euclidean, NormStats,
    PooledFeatures, Prototypes, GRAD_FLOOR,
};

pub use self::checkpoint::{fmt_real, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use self::gradcheck::{grad_check, relative_error, BlockReport, GradCheckReport, SkipReason, REL_ERR_FLOOR};
pub use self::hyper::{Hyperparams, Preset};
pub use self::init::{init_prototypes, InitStrategy};

/// Prototypes plus the linear head over their pooled distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub prototypes: Prototypes,
    pub aggregators: AggregatorSet,
    /// One weight per (aggregator, prototype) feature, aggregator-major.
    pub beta: Vec<f64>,
    pub beta0: f64,
}

impl ModelParams {
    /// Zero classifier on top of the given prototypes.
    pub fn new(prototypes: Prototypes, aggregators: AggregatorSet) -> Self {
        let n = prototypes.count() * aggregators.len();
        ModelParams {
            prototypes,
            aggregators,
            beta: vec![0.0; n],
            beta0: 0.0,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.prototypes.count() * self.aggregators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.feature_count() {
            return Err(Error::Shape(format!(
                "beta has {} entries, expected D*A = {}",
                self.beta.len(),
                self.feature_count()
            )));
        }
        let finite = self
            .prototypes
            .as_flat()
            .iter()
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite || !self.beta0.is_finite() {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// Aggregator and prototype index of feature `j`.
    pub fn feature_origin(&self, j: usize) -> (Aggregator, usize) {
        let dcount = self.prototypes.count();
        let agg = self.aggregators.iter().nth(j / dcount).expect("feature index in range");
        (agg, j % dcount)
    }

    fn fingerprint(&self, bag: &Bag) -> u64 {
        let mut h = Fnv::default();
        h.write_str(bag.id());
        h.write(bag.len() as u64);
        self.prototypes
            .as_flat()
            .iter()
            .chain(&self.beta)
            .for_each(|v| h.write(v.to_bits()));
        h.write(self.beta0.to_bits());
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, word: u64) {
        self.0 = (self.0 ^ word).wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn write_str(&mut self, s: &str) {
        s.bytes().for_each(|b| self.write(u64::from(b)));
    }
}

/// Gradient of the bag objective, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_prototypes: Prototypes,
    pub d_beta: Vec<f64>,
    pub d_beta0: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pooled: PooledFeatures,
    pub phi_norm: Vec<f64>,
    pub stats: NormStats,
    pub logit: f64,
    pub yhat: f64,
    token: u64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy written in terms of the logit.
pub fn cross_entropy_from_logit(z: f64, label: Label) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - label.as_f64() * z
}

fn check_compatible(bag: &Bag, params: &ModelParams, hyper: &Hyperparams) -> Result<()> {
    if bag.width() != params.prototypes.width() {
        return Err(Error::WidthMismatch {
            expected: params.prototypes.width(),
            got: bag.width(),
        });
    }
    if hyper.aggregators != params.aggregators {
        return Err(Error::Shape(format!(
            "hyperparameters use aggregators [{}] but the model has [{}]",
            hyper.aggregators, params.aggregators
        )));
    }
    if params.beta.len() != params.feature_count() {
        return Err(Error::Shape(format!(
            "beta has {} entries, expected {}",
            params.beta.len(),
            params.feature_count()
        )));
    }
    Ok(())
}

/// Probability that `bag` is positive, with the cache backprop needs.
pub fn forward(bag: &Bag, params: &ModelParams, hyper: &Hyperparams) -> Result<(f64, ForwardCache)> {
    check_compatible(bag, params, hyper)?;
    let pooled = pool_distances(bag, &params.prototypes, params.aggregators)?;
    let (phi_norm, stats) = layer_norm_forward(&pooled.phi_raw, hyper.eps)?;
    let logit = params.beta0 + params.beta.iter().zip(&phi_norm).map(|(b, f)| b * f).sum::<f64>();
    let yhat = sigmoid(logit);
    let token = params.fingerprint(bag);
    Ok((
        yhat,
        ForwardCache {
            pooled,
            phi_norm,
            stats,
            logit,
            yhat,
            token,
        },
    ))
}

/// The four additive pieces of the bag objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub cross_entropy: f64,
    pub weight_penalty: f64,
    pub prototype_penalty: f64,
    pub distance_penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.weight_penalty + self.prototype_penalty + self.distance_penalty
    }
}

pub fn objective_terms(bag: &Bag, params: &ModelParams, hyper: &Hyperparams) -> Result<ObjectiveTerms> {
    let (_, cache) = forward(bag, params, hyper)?;
    Ok(terms_from_cache(bag.label(), params, hyper, &cache))
}

pub(crate) fn terms_from_cache(
    label: Label,
    params: &ModelParams,
    hyper: &Hyperparams,
    cache: &ForwardCache,
) -> ObjectiveTerms {
    ObjectiveTerms {
        cross_entropy: cross_entropy_from_logit(cache.logit, label),
        weight_penalty: hyper.lambda_w * params.beta.iter().map(|b| b.abs()).sum::<f64>(),
        prototype_penalty: hyper.lambda_p * params.prototypes.rows().map(l2_norm).sum::<f64>(),
        distance_penalty: hyper.lambda_d * cache.pooled.phi_raw.iter().sum::<f64>(),
    }
}

/// Full regularized objective for one bag, charged with its own label.
pub fn bag_objective(bag: &Bag, params: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    objective_terms(bag, params, hyper).map(|t| t.total())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact (sub)gradient of [`bag_objective`] at the point `cache` was taken.
///
/// Kinks use fixed conventions: `sign(0) = 0` for the L1 term, the
/// lowest-index instance on min/max ties, and a zero direction where a
/// prototype coincides with an instance or with the origin.
pub fn backward(bag: &Bag, params: &ModelParams, hyper: &Hyperparams, cache: &ForwardCache) -> Result<Gradients> {
    check_compatible(bag, params, hyper)?;
    if cache.pooled.phi_raw.len() != params.feature_count()
        || cache.pooled.distances.len() != bag.len() * params.prototypes.count()
    {
        return Err(Error::StaleCache(
            "cache shape does not match bag and parameters".into(),
        ));
    }
    if cache.token != params.fingerprint(bag) {
        return Err(Error::StaleCache(format!(
            "cache was not produced for bag '{}' at these parameters",
            bag.id()
        )));
    }

    let residual = cache.yhat - bag.label().as_f64();
    let d_beta: Vec<f64> = cache
        .phi_norm
        .iter()
        .zip(&params.beta)
        .map(|(f, b)| residual * f + hyper.lambda_w * sign(*b))
        .collect();

    let upstream: Vec<f64> = params.beta.iter().map(|b| residual * b).collect();
    let g_raw = layer_norm_backward(&upstream, &cache.phi_norm, &cache.stats)?;

    let dcount = params.prototypes.count();
    let k = bag.len();
    let pooled = &cache.pooled;
    let mut d_prototypes = Prototypes::zeros(dcount, params.prototypes.width());
    for (slot, agg) in params.aggregators.iter().enumerate() {
        for d in 0..dcount {
            let g = g_raw[slot * dcount + d] + hyper.lambda_d;
            if g == 0.0 {
                continue;
            }
            let p = params.prototypes.row(d);
            let out = d_prototypes.row_mut(d);
            match agg {
                Aggregator::Min | Aggregator::Max => {
                    let idx = match agg {
                        Aggregator::Min => pooled.argmin_index.as_ref(),
                        _ => pooled.argmax_index.as_ref(),
                    }
                    .ok_or_else(|| Error::StaleCache(format!("cache lacks {agg} bookkeeping")))?;
                    let i = idx[d];
                    Euclidean.accumulate_grad_p(bag.instance(i), p, pooled.distance(i, d), g, out);
                }
                Aggregator::Mean => {
                    let order = pooled
                        .mean_order
                        .as_ref()
                        .ok_or_else(|| Error::StaleCache("cache lacks mean bookkeeping".into()))?;
                    let share = g / k as f64;
                    for &i in order {
                        Euclidean.accumulate_grad_p(bag.instance(i), p, pooled.distance(i, d), share, out);
                    }
                }
            }
        }
    }
    if hyper.lambda_p != 0.0 {
        for d in 0..dcount {
            let p = params.prototypes.row(d);
            let norm = l2_norm(p);
            let s = hyper.lambda_p / norm.max(GRAD_FLOOR);
            for (o, &v) in d_prototypes.row_mut(d).iter_mut().zip(p) {
                *o += s * v;
            }
        }
    }

    Ok(Gradients {
        d_prototypes,
        d_beta,
        d_beta0: residual,
    })
}

/// Class probabilities for a batch of bags.
pub fn predict_proba(bags: &[Bag], params: &ModelParams, hyper: &Hyperparams) -> Result<Vec<f64>> {
    bags.iter().map(|b| forward(b, params, hyper).map(|(p, _)| p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(seed: u64, k: usize, dcount: usize, l: usize, aggs: AggregatorSet) -> (Bag, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let bag = Bag::new("r", Label::from(rng.random_bool(0.5)), rows).unwrap();
        let protos: Vec<f64> = (0..dcount * l).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut params = ModelParams::new(Prototypes::from_flat(dcount, l, protos).unwrap(), aggs);
        params.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.5..1.5));
        params.beta0 = rng.random_range(-1.0..1.0);
        (bag, params)
    }

    fn hyper(aggs: AggregatorSet) -> Hyperparams {
        Hyperparams {
            aggregators: aggs,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn zero_classifier_predicts_half() {
        let (bag, mut params) = random_setup(1, 4, 3, 2, AggregatorSet::ALL);
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        params.beta0 = 0.0;
        let (p, _) = forward(&bag, &params, &hyper(AggregatorSet::ALL)).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn bias_only_prediction() {
        let (bag, mut params) = random_setup(2, 3, 2, 2, AggregatorSet::MIN);
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        params.beta0 = 10.0;
        let (p, _) = forward(&bag, &params, &hyper(AggregatorSet::MIN)).unwrap();
        assert!((p - 0.99995).abs() < 1e-4);
        assert!((p - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(cross_entropy_from_logit(-800.0, Label::Positive).is_finite());
        assert!((cross_entropy_from_logit(-800.0, Label::Positive) - 800.0).abs() < 1e-9);
        assert!((cross_entropy_from_logit(0.0, Label::Negative) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_compositional_oracle() {
        for seed in 0..20 {
            let (bag, params) = random_setup(seed, 5, 4, 3, AggregatorSet::ALL);
            let (p, _) = forward(&bag, &params, &hyper(AggregatorSet::ALL)).unwrap();
            let pooled = pool_distances(&bag, &params.prototypes, AggregatorSet::ALL).unwrap();
            let (norm, _) = layer_norm_forward(&pooled.phi_raw, 1e-5).unwrap();
            let z = params.beta0 + norm.iter().zip(&params.beta).map(|(a, b)| a * b).sum::<f64>();
            assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_at_half_is_ln2() {
        let (bag, mut params) = random_setup(3, 3, 2, 2, AggregatorSet::MIN);
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        params.beta0 = 0.0;
        let h = Hyperparams {
            lambda_w: 0.0,
            lambda_p: 0.0,
            lambda_d: 0.0,
            ..hyper(AggregatorSet::MIN)
        };
        assert!((bag_objective(&bag, &params, &h).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);

        let h = Hyperparams { lambda_d: 0.3, ..h };
        let pooled = pool_distances(&bag, &params.prototypes, AggregatorSet::MIN).unwrap();
        let expect = std::f64::consts::LN_2 + 0.3 * pooled.phi_raw.iter().sum::<f64>();
        assert!((bag_objective(&bag, &params, &h).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_termwise_oracle() {
        let h = Hyperparams {
            lambda_w: 0.2,
            lambda_p: 0.05,
            lambda_d: 0.01,
            ..hyper(AggregatorSet::ALL)
        };
        for seed in 0..10 {
            let (bag, params) = random_setup(100 + seed, 4, 3, 5, AggregatorSet::ALL);
            let pooled = pool_distances(&bag, &params.prototypes, AggregatorSet::ALL).unwrap();
            let (norm, _) = layer_norm_forward(&pooled.phi_raw, h.eps).unwrap();
            let mut z = params.beta0;
            for (b, v) in params.beta.iter().zip(&norm) {
                z += b * v;
            }
            let yhat = 1.0 / (1.0 + (-z).exp());
            let y = bag.label().as_f64();
            let ce = -(y * yhat.ln() + (1.0 - y) * (1.0 - yhat).ln());
            let l1: f64 = params.beta.iter().map(|b| b.abs()).sum();
            let pn: f64 = (0..3)
                .map(|d| params.prototypes.row(d).iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum();
            let dist: f64 = pooled.phi_raw.iter().sum();
            let oracle = ce + 0.2 * l1 + 0.05 * pn + 0.01 * dist;
            assert!((bag_objective(&bag, &params, &h).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_no_prototype_gradient() {
        let (bag, mut params) = random_setup(4, 3, 2, 3, AggregatorSet::ALL);
        let bag = Bag::from_flat("p", Label::Positive, bag.width(), bag.as_flat().to_vec()).unwrap();
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        params.beta0 = 0.0;
        let h = Hyperparams {
            lambda_w: 0.0,
            lambda_p: 0.0,
            lambda_d: 0.0,
            ..hyper(AggregatorSet::ALL)
        };
        let (_, cache) = forward(&bag, &params, &h).unwrap();
        let g = backward(&bag, &params, &h, &cache).unwrap();
        assert_eq!(g.d_beta0, -0.5);
        assert!(g.d_prototypes.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_subgradient_is_zero_at_kink() {
        let (bag, mut params) = random_setup(5, 3, 2, 3, AggregatorSet::MIN);
        params.beta[1] = 0.0;
        let h = Hyperparams {
            lambda_w: 0.7,
            ..hyper(AggregatorSet::MIN)
        };
        let (_, cache) = forward(&bag, &params, &h).unwrap();
        let g = backward(&bag, &params, &h, &cache).unwrap();
        let residual = cache.yhat - bag.label().as_f64();
        assert_eq!(g.d_beta[1], residual * cache.phi_norm[1]);
        assert_eq!(g.d_beta[0], residual * cache.phi_norm[0] + 0.7 * sign(params.beta[0]));
    }

    #[test]
    fn prototype_penalty_gradient_is_bounded() {
        let (bag, mut params) = random_setup(6, 2, 3, 4, AggregatorSet::MIN);
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        params.prototypes.row_mut(2).iter_mut().for_each(|v| *v = 0.0);
        let h = Hyperparams {
            lambda_w: 0.0,
            lambda_p: 0.3,
            lambda_d: 0.0,
            ..hyper(AggregatorSet::MIN)
        };
        let (_, cache) = forward(&bag, &params, &h).unwrap();
        let g = backward(&bag, &params, &h, &cache).unwrap();
        for d in 0..2 {
            assert!((l2_norm(g.d_prototypes.row(d)) - 0.3).abs() < 1e-12);
        }
        assert!(g.d_prototypes.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_detected() {
        let (bag, mut params) = random_setup(7, 3, 2, 2, AggregatorSet::MIN);
        let h = hyper(AggregatorSet::MIN);
        let (_, cache) = forward(&bag, &params, &h).unwrap();
        params.beta0 += 1.0;
        assert!(matches!(backward(&bag, &params, &h, &cache), Err(Error::StaleCache(_))));
        let (other, _) = random_setup(8, 4, 2, 2, AggregatorSet::MIN);
        params.beta0 -= 1.0;
        assert!(matches!(
            backward(&other, &params, &h, &cache),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let (bag, params) = random_setup(9, 3, 2, 2, AggregatorSet::MIN);
        assert!(matches!(
            forward(&bag, &params, &hyper(AggregatorSet::ALL)),
            Err(Error::Shape(_))
        ));
        let wide = Bag::new("w", Label::Positive, vec![vec![0.0; 3]]).unwrap();
        assert!(matches!(
            forward(&wide, &params, &hyper(AggregatorSet::MIN)),
            Err(Error::WidthMismatch { .. })
        ));
    }
}
