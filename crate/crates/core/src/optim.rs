//! Adam with bias correction, one state per parameter block.

use crate::error::{Error, Result};
use crate::model::{Gradients, Hyperparams, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl GroupConfig {
    pub fn with_lr(lr: f64) -> Self {
        GroupConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update of `block` in place.
///
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step(block: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &GroupConfig) -> Result<()> {
    if block.len() != grad.len() || state.m.len() != block.len() || state.v.len() != block.len() {
        return Err(Error::Shape(format!(
            "adam step: block {}, gradient {}, state {}",
            block.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("adam"));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((x, &g), m), v) in block.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Two parameter groups: prototypes, and the classifier (weights followed
/// by the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub prototypes: GroupConfig,
    pub classifier: GroupConfig,
    pub prototype_state: AdamState,
    pub classifier_state: AdamState,
}

impl Adam {
    pub fn new(params: &ModelParams, hyper: &Hyperparams) -> Self {
        let group = |lr| GroupConfig {
            lr,
            beta1: hyper.adam_beta1,
            beta2: hyper.adam_beta2,
            eps: hyper.adam_eps,
        };
        Adam {
            prototypes: group(hyper.lr_prototypes),
            classifier: group(hyper.lr_weights),
            prototype_state: AdamState::new(params.prototypes.as_flat().len()),
            classifier_state: AdamState::new(params.beta.len() + 1),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        let flat = grads.d_prototypes.as_flat();
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient("prototypes"));
        }
        if grads.d_beta.iter().any(|g| !g.is_finite()) || !grads.d_beta0.is_finite() {
            return Err(Error::NonFiniteGradient("classifier"));
        }
        let mut head: Vec<f64> = params.beta.iter().copied().chain([params.beta0]).collect();
        let head_grad: Vec<f64> = grads.d_beta.iter().copied().chain([grads.d_beta0]).collect();
        adam_step(&mut head, &head_grad, &mut self.classifier_state, &self.classifier)?;
        adam_step(
            params.prototypes.as_flat_mut(),
            flat,
            &mut self.prototype_state,
            &self.prototypes,
        )?;
        params.beta0 = head.pop().expect("bias slot");
        params.beta = head;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = [1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut x, &[4.0], &mut st, &GroupConfig::with_lr(0.1)).unwrap();
        assert!(((1.0 - x[0]) - 0.1 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut x = [0.25, -3.0];
        let mut st = AdamState::new(2);
        adam_step(&mut x, &[0.0, 0.0], &mut st, &GroupConfig::with_lr(0.1)).unwrap();
        assert_eq!(x, [0.25, -3.0]);
    }

    #[test]
    fn first_update_is_scale_free() {
        for a in [1e-3, 1.0, 1e3] {
            let mut x = [0.0, 0.0];
            let mut st = AdamState::new(2);
            adam_step(&mut x, &[2.0 * a, -0.5 * a], &mut st, &GroupConfig::with_lr(0.01)).unwrap();
            assert!((x[0] + 0.01).abs() < 1e-6 && (x[1] - 0.01).abs() < 1e-6, "{x:?}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut x = [1.0, 2.0];
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut x, &[1.0, f64::NAN], &mut st, &GroupConfig::with_lr(0.1)).is_err());
        assert_eq!((x, st.t), ([1.0, 2.0], 0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut x = [1.0];
        assert!(adam_step(&mut x, &[1.0, 2.0], &mut AdamState::new(1), &GroupConfig::with_lr(0.1)).is_err());
    }
}
