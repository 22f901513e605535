#![allow(dead_code)]

use protomil::dataset::{Bag, Label};
use protomil::features::{Aggregator, AggregatorSet, Prototypes};
use protomil::model::{backward, bag_objective, forward, grad_check, relative_error, Hyperparams, ModelParams, Preset};
use protomil::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_bag(rng: &mut Rng, id: &str, k: usize, l: usize) -> Bag {
    let label = Label::from(rng.random::<bool>());
    let rows = (0..k).map(|_| (0..l).map(|_| normal(rng)).collect()).collect();
    Bag::new(id, label, rows).unwrap()
}

/// A model and bag drawn at random, with every weight bounded away from the
/// L1 kink at zero.
pub struct Case {
    pub params: ModelParams,
    pub bag: Bag,
    pub hyper: Hyperparams,
}

pub fn random_case(rng: &mut Rng, d: usize, l: usize, k: usize, aggs: AggregatorSet, lambdas: [f64; 3]) -> Case {
    let bag = random_bag(rng, "case", k, l);
    let protos = Prototypes::from_flat(d, l, (0..d * l).map(|_| normal(rng)).collect()).unwrap();
    let mut params = ModelParams::new(protos, aggs);
    for b in params.beta.iter_mut() {
        let mag = rng.random_range(0.2..1.5);
        *b = if rng.random::<bool>() { mag } else { -mag };
    }
    params.beta0 = rng.random_range(-1.0..1.0);
    let hyper = Hyperparams {
        lambda_w: lambdas[0],
        lambda_p: lambdas[1],
        lambda_d: lambdas[2],
        prototypes: d,
        aggregators: aggs,
        ..Preset::Appendix.hyperparams()
    };
    Case { params, bag, hyper }
}

pub fn random_lambdas(rng: &mut Rng) -> [f64; 3] {
    let mut pick = || if rng.random::<bool>() { 1e-2 } else { 0.0 };
    [pick(), pick(), pick()]
}

impl Case {
    /// Shortest length over which the objective bends near this point: the
    /// layer-norm spread, the smallest distance, the min/max tie gaps and,
    /// under the norm penalty, the prototype norms. Central differences at
    /// h=1e-5 carry a truncation error of roughly (h/scale)^2.
    pub fn length_scale(&self) -> f64 {
        let (_, cache) = forward(&self.bag, &self.params, &self.hyper).unwrap();
        let aggs = self.params.aggregators;
        let (k, dcount) = (self.bag.len(), self.params.prototypes.count());
        let mut scale = cache.stats.sigma;
        for d in 0..dcount {
            let mut col: Vec<f64> = (0..k).map(|i| cache.pooled.distance(i, d)).collect();
            col.sort_by(f64::total_cmp);
            scale = scale.min(col[0]);
            if k > 1 && aggs.contains(Aggregator::Min) {
                scale = scale.min(col[1] - col[0]);
            }
            if k > 1 && aggs.contains(Aggregator::Max) {
                scale = scale.min(col[k - 1] - col[k - 2]);
            }
            if self.hyper.lambda_p > 0.0 {
                scale = scale.min(self.params.prototypes.row(d).iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        scale
    }

    /// Worst prototype-gradient error against Richardson-extrapolated central
    /// differences, with a step of a tenth of the length scale (at most 1e-3).
    pub fn extrapolated_prototype_error(&self) -> f64 {
        let step = (0.1 * self.length_scale()).min(1e-3);
        let (_, cache) = forward(&self.bag, &self.params, &self.hyper).unwrap();
        let grads = backward(&self.bag, &self.params, &self.hyper, &cache).unwrap();
        let central = |i: usize, h: f64| {
            let mut plus = self.params.clone();
            plus.prototypes.as_flat_mut()[i] += h;
            let mut minus = self.params.clone();
            minus.prototypes.as_flat_mut()[i] -= h;
            let f = |p: &ModelParams| bag_objective(&self.bag, p, &self.hyper).unwrap();
            (f(&plus) - f(&minus)) / (2.0 * h)
        };
        grads
            .d_prototypes
            .as_flat()
            .iter()
            .enumerate()
            .map(|(i, &a)| relative_error(a, (4.0 * central(i, step / 2.0) - central(i, step)) / 3.0))
            .fold(0.0, f64::max)
    }
}

impl Case {
    /// Checks a draw whose length scale is below [`WELL_CONDITIONED`]: the
    /// weight blocks at h=1e-5, the prototypes by extrapolation. Returns the
    /// worst error seen.
    pub fn check_ill_conditioned(&self, h: f64, tol: f64) -> Result<f64, String> {
        let report = grad_check(&self.params, &self.bag, &self.hyper, h, tol).unwrap();
        for name in ["beta", "beta0"] {
            let block = report.block(name).unwrap();
            if !block.passed() {
                return Err(format!("{name} fails at h={h}: {:e}", block.max_rel_error));
            }
        }
        let err = self.extrapolated_prototype_error();
        if err < tol {
            Ok(err)
        } else {
            Err(format!("extrapolated prototype error {err:e}"))
        }
    }
}

/// Below this length scale, h=1e-5 differences are truncation-limited at the
/// 1e-4 tolerance and a draw is checked by extrapolation instead.
pub const WELL_CONDITIONED: f64 = 1e-2;
