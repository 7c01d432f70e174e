use crate::compute::{neg_log_sigmoid, ParameterSet};

/// `sum -ln sigmoid(pos - neg) + lambda * ||params||^2`.
pub fn bpr_loss(score_pos: &[f64], score_neg: &[f64], params: &ParameterSet, lambda: f64) -> f64 {
    assert_eq!(score_pos.len(), score_neg.len(), "paired scores");
    let ranking: f64 = score_pos.iter().zip(score_neg).map(|(p, n)| neg_log_sigmoid(p - n)).sum();
    ranking + lambda * params.squared_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::{Tape, Tensor};

    #[test]
    fn equal_scores_cost_ln2_per_triple() {
        let p = ParameterSet::new();
        assert!((bpr_loss(&[0.3, -1.0], &[0.3, -1.0], &p, 0.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((bpr_loss(&[0.3], &[0.3], &p, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_margin_costs_nothing() {
        let p = ParameterSet::new();
        assert!(bpr_loss(&[800.0], &[0.0], &p, 0.0) < 1e-300);
        assert!(bpr_loss(&[40.0], &[0.0], &p, 0.0) < 1e-17);
    }

    #[test]
    fn margin_ln3_costs_ln_four_thirds() {
        let p = ParameterSet::new();
        let got = bpr_loss(&[3f64.ln()], &[0.0], &p, 0.0);
        assert!((got - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((got - 0.287682).abs() < 1e-6);
    }

    #[test]
    fn regularizer_adds_squared_norm_and_its_gradient_is_two_lambda_theta() {
        let mut p = ParameterSet::new();
        let a = p.push("a", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let b = p.push("b", Tensor::from_vec(2, 1, vec![3.0, 0.25]).unwrap());
        assert_eq!(bpr_loss(&[0.0], &[0.0], &p, 0.5) - 2f64.ln(), 0.5 * (1.0 + 4.0 + 0.25 + 9.0 + 0.0625));

        let mut tape = Tape::new();
        let (va, vb) = (tape.param(&p, a).unwrap(), tape.param(&p, b).unwrap());
        let (sa, sb) = (tape.sum_squares(va).unwrap(), tape.sum_squares(vb).unwrap());
        let total = tape.add(sa, sb).unwrap();
        let reg = tape.scale(total, 0.01).unwrap();
        let g = tape.backward(reg, &p).unwrap();
        for id in [a, b] {
            let expected = p.get(id).map(|x| 2.0 * 0.01 * x);
            assert_eq!(g.get(id), &expected);
        }
    }

    #[test]
    fn strictly_decreasing_in_margin() {
        let p = ParameterSet::new();
        let mut last = f64::INFINITY;
        for k in -40..40 {
            let l = bpr_loss(&[k as f64 * 0.5], &[0.0], &p, 0.0);
            assert!(l < last);
            last = l;
        }
    }
}
