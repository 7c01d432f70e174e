use serde::{Deserialize, Serialize};

use crate::compute::{GradientBundle, ParameterSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair of arrays per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Tensor> = params.arrays().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected adaptive-moment update.
pub fn optimizer_step(params: &mut ParameterSet, grads: &GradientBundle, state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    grads.check_congruent(params)?;
    if state.m.len() != params.len() {
        return Err(Error::Shape {
            op: "optimizer_step",
            detail: format!("state holds {} arrays, parameters {}", state.m.len(), params.len()),
        });
    }
    for (id, g) in params.ids().zip(grads.arrays()) {
        if let Some(bad) = g.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {} at element {bad}", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *config;
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (k, p) in params.arrays_mut().iter_mut().enumerate() {
        let g = grads.arrays()[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (j, x) in p.as_mut_slice().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        for _ in 0..3 {
            optimizer_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, scalar(1.5));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for grad in [0.3, -7.0, 1e-3] {
            let mut p = scalar(0.0);
            let mut s = AdamState::new(&p);
            let mut g = p.zeros_like();
            g.get_mut(p.ids().next().unwrap()).set(0, 0, grad);
            optimizer_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            let moved = p.arrays()[0].get(0, 0);
            // m_hat = g, v_hat = g^2, so the step is lr * |g| / (|g| + eps).
            let expected = -0.001 * grad / (grad.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-15);
            assert!((moved.abs() - 0.001).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.get_mut(p.ids().next().unwrap()).set(0, 0, f64::NAN);
        let err = optimizer_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("gradient of x"));
        assert_eq!(s.step, 0);
    }
}
