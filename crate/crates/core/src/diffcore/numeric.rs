//! Plain (non-recorded) numerics shared by the graph, metrics and ensembling.

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn max_of(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyLogits);
    }
    Ok(x.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    let m = max_of(x)?;
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `x - max(x) - ln(sum(exp(x - max(x))))`, elementwise.
pub fn log_softmax(x: &[f64]) -> Result<Vec<f64>> {
    let m = max_of(x)?;
    let lse = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(x.iter().map(|v| v - m - lse).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-1e3, -2.5, 0.0, 17.0, 1e3] {
            for p in softmax(&[c; 4]).unwrap() {
                assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
            }
        }
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(matches!(softmax(&[]), Err(Error::EmptyLogits)));
    }

    #[test]
    fn log_softmax_examples() {
        let l2 = 2f64.ln();
        for v in log_softmax(&[0.0, 0.0]).unwrap() {
            assert_abs_diff_eq!(v, -l2, epsilon = 1e-15);
        }
        assert_eq!(log_softmax(&[7.3]).unwrap(), vec![0.0]);
        let l = log_softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in l.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_abs_diff_eq!(*got, f64::ln(want), epsilon = 1e-12);
        }
        assert!(log_softmax(&[]).unwrap_err().to_string() == "empty-logits");
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e3), 1.0);
        assert_eq!(sigmoid(-1e3), 0.0);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&x).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let lp = log_softmax(&x).unwrap();
            prop_assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_shift_invariance(
            x in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn log_softmax_matches_log_of_softmax(x in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let a = log_softmax(&x).unwrap();
            let b = softmax(&x).unwrap();
            for (l, p) in a.iter().zip(&b) {
                prop_assert!((l - p.ln()).abs() < 1e-7);
            }
        }
    }
}
