//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compute::{GradientBundle, ParameterSet};
use crate::error::Result;

/// A scalar objective over a parameter set, with its analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParameterSet) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientBundle)>;
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrayAudit {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub eps: f64,
    pub max_rel_error: f64,
    pub arrays: Vec<ArrayAudit>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

/// Compares analytic gradients against `(L(θ+eps) − L(θ−eps)) / 2eps`.
///
/// Up to `samples_per_array` scalar entries of every array are drawn
/// uniformly (without replacement) under `seed`.
pub fn finite_difference_audit<O: Objective + ?Sized>(
    objective: &O,
    params: &ParameterSet,
    eps: f64,
    samples_per_array: usize,
    seed: u64,
) -> Result<AuditReport> {
    let (_, analytic) = objective.loss_and_grad(params)?;
    analytic.check_congruent(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut arrays = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;

    for (id, name, tensor) in params.iter() {
        let n = tensor.len();
        let count = samples_per_array.min(n);
        let mut worst: f64 = 0.0;
        for flat in sample(&mut rng, n, count) {
            let original = tensor.as_slice()[flat];
            probe.get_mut(id).as_mut_slice()[flat] = original + eps;
            let plus = objective.loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[flat] = original - eps;
            let minus = objective.loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[flat] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.get(id).as_slice()[flat], numeric);
            worst = worst.max(err);
        }
        overall = overall.max(worst);
        arrays.push(ArrayAudit {
            name: name.to_string(),
            checked: count,
            max_rel_error: worst,
        });
    }

    Ok(AuditReport {
        eps,
        max_rel_error: overall,
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::{Tape, Tensor};

    struct Linear;

    impl Objective for Linear {
        fn loss(&self, params: &ParameterSet) -> Result<f64> {
            Ok(self.loss_and_grad(params)?.0)
        }

        fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientBundle)> {
            let mut tape = Tape::new();
            let ids: Vec<_> = params.ids().collect();
            let x = tape.param(params, ids[0])?;
            let scaled = tape.scale(x, 3.5)?;
            let loss = tape.sum(scaled)?;
            let value = tape.value(loss).get(0, 0);
            Ok((value, tape.backward(loss, params)?))
        }
    }

    #[test]
    fn linear_loss_is_exact() {
        let mut params = ParameterSet::new();
        params.push("x", Tensor::from_rows(&[vec![0.3, -1.2, 4.0]]).unwrap());
        params.push("unused", Tensor::full(2, 2, 1.0));
        let report = finite_difference_audit(&Linear, &params, 1e-4, 8, 7).unwrap();
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
        // the untouched array has zero analytic and numeric gradient
        assert_eq!(report.arrays[1].max_rel_error, 0.0);
    }

    #[test]
    fn damped_denominator_handles_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-13) < 1e-4);
    }
}
