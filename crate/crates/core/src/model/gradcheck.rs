//! Central-difference check of [`backward`](super::backward).

use std::fmt;

use serde::Serialize;

use super::{backward, bag_objective, forward, Hyperparams, ModelParams};
use crate::dataset::Bag;
use crate::error::{Error, Result};
use crate::features::Aggregator;

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
/// Below the floor, central differences at h=1e-5 are dominated by f64
/// round-off in the objective (up to about 4e-9 absolute), so near-zero
/// gradients are compared absolutely: to `tol * floor`, 1e-8 at tol=1e-4.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// Two instances are within `10h` of sharing the min or max.
    NearTie,
    /// The point is within `10h` of a non-differentiable kink (coincident
    /// instance and prototype, zero prototype, zero weight under L1, or a
    /// constant feature row).
    NearKink,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::NearTie => "near-tie",
            SkipReason::NearKink => "near-kink",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub name: &'static str,
    pub checked: usize,
    pub skipped: Vec<(usize, SkipReason)>,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl BlockReport {
    fn new(name: &'static str) -> Self {
        BlockReport {
            name,
            checked: 0,
            skipped: Vec::new(),
            max_rel_error: 0.0,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(BlockReport::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Folds another report (same `h`, `tol` and block layout) into this one,
    /// e.g. to summarize a check over every bag of a dataset.
    pub fn merge(&mut self, other: GradCheckReport) -> Result<()> {
        if self.h != other.h || self.tol != other.tol || self.blocks.len() != other.blocks.len() {
            return Err(Error::Shape("gradient check reports are not comparable".into()));
        }
        for (mine, theirs) in self.blocks.iter_mut().zip(other.blocks) {
            if mine.name != theirs.name {
                return Err(Error::Shape(format!("block '{}' vs '{}'", mine.name, theirs.name)));
            }
            mine.checked += theirs.checked;
            mine.skipped.extend(theirs.skipped);
            mine.max_rel_error = mine.max_rel_error.max(theirs.max_rel_error);
            mine.failures.extend(theirs.failures);
        }
        Ok(())
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<10} checked={:<5} skipped={:<3} max_rel_err={:.3e} {}",
                b.name,
                b.checked,
                b.skipped.len(),
                b.max_rel_error,
                if b.passed() { "ok" } else { "FAIL" }
            )?;
        }
        if self.passed() {
            write!(f, "all blocks pass tol={:e}", self.tol)
        } else {
            let failing: Vec<&str> = self.blocks.iter().filter(|b| !b.passed()).map(|b| b.name).collect();
            write!(f, "blocks failing tol={:e}: {}", self.tol, failing.join(", "))
        }
    }
}

/// Per prototype, the reason its coordinates cannot be checked, if any.
fn prototype_exclusions(
    bag: &Bag,
    params: &ModelParams,
    hyper: &Hyperparams,
    h: f64,
) -> Result<Vec<Option<SkipReason>>> {
    let (_, cache) = forward(bag, params, hyper)?;
    let margin = 10.0 * h;
    let dcount = params.prototypes.count();
    let pooled = &cache.pooled;
    let kink_row = cache.stats.sigma < margin;
    Ok((0..dcount)
        .map(|d| {
            let mut col: Vec<f64> = (0..bag.len()).map(|k| pooled.distance(k, d)).collect();
            col.sort_by(f64::total_cmp);
            let aggs = params.aggregators;
            let min_tie = aggs.contains(Aggregator::Min) && col.len() > 1 && col[1] - col[0] < margin;
            let max_tie =
                aggs.contains(Aggregator::Max) && col.len() > 1 && col[col.len() - 1] - col[col.len() - 2] < margin;
            // smallest distance that feeds an active aggregator
            let used_min = if aggs.contains(Aggregator::Min) || aggs.contains(Aggregator::Mean) {
                col[0]
            } else {
                col[col.len() - 1]
            };
            let norm = params.prototypes.row(d).iter().map(|v| v * v).sum::<f64>().sqrt();
            if min_tie || max_tie {
                Some(SkipReason::NearTie)
            } else if used_min < margin || kink_row || (hyper.lambda_p > 0.0 && norm < margin) {
                Some(SkipReason::NearKink)
            } else {
                None
            }
        })
        .collect())
}

/// Compares [`backward`] to central differences of the bag objective,
/// coordinate by coordinate, in blocks `prototypes`, `beta` and `beta0`.
pub fn grad_check(params: &ModelParams, bag: &Bag, hyper: &Hyperparams, h: f64, tol: f64) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, cache) = forward(bag, params, hyper)?;
    let grads = backward(bag, params, hyper, &cache)?;

    let central = |perturb: &dyn Fn(&mut ModelParams, f64)| -> Result<f64> {
        let mut plus = params.clone();
        perturb(&mut plus, h);
        let mut minus = params.clone();
        perturb(&mut minus, -h);
        Ok((bag_objective(bag, &plus, hyper)? - bag_objective(bag, &minus, hyper)?) / (2.0 * h))
    };
    let record = |block: &mut BlockReport, index: usize, analytic: f64, numeric: f64| {
        let rel = relative_error(analytic, numeric);
        block.checked += 1;
        block.max_rel_error = block.max_rel_error.max(rel);
        if !(rel <= tol) {
            block.failures.push(Mismatch {
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    };

    let width = params.prototypes.width();
    let exclusions = prototype_exclusions(bag, params, hyper, h)?;
    let mut protos = BlockReport::new("prototypes");
    for (i, &analytic) in grads.d_prototypes.as_flat().iter().enumerate() {
        if let Some(reason) = exclusions[i / width] {
            protos.skipped.push((i, reason));
            continue;
        }
        let numeric = central(&|p, dh| p.prototypes.as_flat_mut()[i] += dh)?;
        record(&mut protos, i, analytic, numeric);
    }

    let mut beta = BlockReport::new("beta");
    for (j, &analytic) in grads.d_beta.iter().enumerate() {
        if hyper.lambda_w > 0.0 && params.beta[j].abs() < 10.0 * h {
            beta.skipped.push((j, SkipReason::NearKink));
            continue;
        }
        let numeric = central(&|p, dh| p.beta[j] += dh)?;
        record(&mut beta, j, analytic, numeric);
    }

    let mut bias = BlockReport::new("beta0");
    let numeric = central(&|p, dh| p.beta0 += dh)?;
    record(&mut bias, 0, grads.d_beta0, numeric);

    Ok(GradCheckReport {
        h,
        tol,
        blocks: vec![protos, beta, bias],
    })
}
