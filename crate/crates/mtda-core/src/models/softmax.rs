//! Temperature softmax, log-softmax, and argmax prediction.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_row<S: Scalar>(row: ArrayView1<'_, S>) -> Result<()> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    Ok(())
}

fn softmax_row<S: Scalar>(row: ArrayView1<'_, S>, tau: S) -> Array1<S> {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Array1<S> = row.mapv(|v| ((v - max) / tau).exp());
    let sum = exps.sum();
    exps / sum
}

/// exp(z_i / tau) / sum_j exp(z_j / tau), computed with max subtraction.
pub fn temperature_softmax<S: Scalar>(logits: ArrayView1<'_, S>, tau: S) -> Result<Array1<S>> {
    if tau <= S::zero() {
        return Err(Error::Argument(format!("temperature {tau} must be positive")));
    }
    check_row(logits)?;
    Ok(softmax_row(logits, tau))
}

/// Row-wise temperature softmax over a batch of logits.
pub fn temperature_softmax_rows<S: Scalar>(logits: &Array2<S>, tau: S) -> Result<Array2<S>> {
    if tau <= S::zero() {
        return Err(Error::Argument(format!("temperature {tau} must be positive")));
    }
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        check_row(row)?;
        out.row_mut(i).assign(&softmax_row(row, tau));
    }
    Ok(out)
}

/// Row-wise log softmax (tau = 1), max-subtracted.
pub fn log_softmax_rows<S: Scalar>(logits: &Array2<S>) -> Result<Array2<S>> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        check_row(row)?;
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let log_sum = row.mapv(|v| (v - max).exp()).sum().ln();
        out.row_mut(i).assign(&row.mapv(|v| v - max - log_sum));
    }
    Ok(out)
}

/// Argmax per row, ties broken toward the lowest class index.
pub fn predict_rows<S: Scalar>(logits: &Array2<S>) -> Vec<u32> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = temperature_softmax(array![0.0f64, 0.0, 0.0].view(), 3.7).unwrap();
        for &v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_example_matches_closed_form() {
        // logits [2, 0], tau 2 -> [e/(e+1), 1/(e+1)]
        let p = temperature_softmax(array![2.0, 0.0].view(), 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 5e-5);
    }

    #[test]
    fn tau_one_is_standard_softmax() {
        let logits = array![5.0, 1.0, 1.0];
        let p = temperature_softmax(logits.view(), 1.0).unwrap();
        let z: f64 = logits.mapv(f64::exp).sum();
        for (a, b) in p.iter().zip(logits.iter()) {
            assert!((a - b.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_tau_is_argument_error() {
        assert!(temperature_softmax(array![1.0, 2.0].view(), 0.0).is_err());
        assert!(temperature_softmax(array![1.0, 2.0].view(), -1.0).is_err());
    }

    #[test]
    fn non_finite_logits_are_numeric_error() {
        let err = temperature_softmax(array![1.0, f64::NAN].view(), 1.0).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn huge_logits_stay_normalized() {
        let p = temperature_softmax(array![1e300_f64.ln() * 2.0, 0.0, 700.0].view(), 1.0).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn prediction_breaks_ties_low() {
        let logits = array![[0.1, 0.9, 0.3], [0.5, 0.5, 0.1]];
        assert_eq!(predict_rows(&logits), vec![1, 0]);
    }
}
