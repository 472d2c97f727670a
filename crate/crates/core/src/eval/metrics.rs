//! Point-forecast error metrics on physical (kWh) values.

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::Variant;

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::shape("metric inputs", &[y.len()], &[y_hat.len()]));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, p)| (a - p).abs()).sum::<f64>() / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mse = y.iter().zip(y_hat).map(|(a, p)| (a - p) * (a - p)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Symmetric MAPE in percent, `100·mean(2|y-ŷ| / (|y|+|ŷ|))`; a term with
/// `|y|+|ŷ| = 0` counts as 0.
pub fn smape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, p)| {
            let denom = a.abs() + p.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (a - p).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / y.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
    /// Number of compared values (windows × horizon).
    pub count: usize,
    pub split: Split,
    pub variant: Variant,
}

impl MetricsReport {
    pub fn compute(y: &[f64], y_hat: &[f64], split: Split, variant: Variant) -> Result<Self> {
        Ok(MetricsReport {
            mae: mae(y, y_hat)?,
            rmse: rmse(y, y_hat)?,
            smape: smape(y, y_hat)?,
            count: y.len(),
            split,
            variant,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_examples() {
        assert_eq!(mae(&[2.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[2.0], &[1.0]).unwrap(), 1.0);
        assert!((smape(&[2.0], &[1.0]).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        let y = [1.0, 4.0, 9.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(smape(&y, &y).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(smape(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn smape_bounds() {
        assert_eq!(smape(&[1.0], &[0.0]).unwrap(), 200.0);
        assert_eq!(smape(&[3.0], &[-3.0]).unwrap(), 200.0);
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn smape_symmetric((y, p) in pairs()) {
            prop_assert_eq!(smape(&y, &p).unwrap(), smape(&p, &y).unwrap());
        }

        #[test]
        fn smape_scale_invariant((y, p) in pairs(), c in 1e-3f64..1e3) {
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let (a, b) = (smape(&y, &p).unwrap(), smape(&ys, &ps).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn rmse_dominates_mae((y, p) in pairs()) {
            let (r, m) = (rmse(&y, &p).unwrap(), mae(&y, &p).unwrap());
            prop_assert!(r >= m * (1.0 - 1e-12));
        }

        #[test]
        fn metrics_are_bounded_and_order_free((y, p) in pairs(), shift in 0usize..40) {
            let s = smape(&y, &p).unwrap();
            prop_assert!((0.0..=200.0).contains(&s));
            let n = y.len();
            let rot = |v: &[f64]| (0..n).map(|i| v[(i + shift) % n]).collect::<Vec<f64>>();
            let (yr, pr) = (rot(&y), rot(&p));
            prop_assert!((mae(&y, &p).unwrap() - mae(&yr, &pr).unwrap()).abs() < 1e-9);
            prop_assert!((rmse(&y, &p).unwrap() - rmse(&yr, &pr).unwrap()).abs() < 1e-9);
            prop_assert!((s - smape(&yr, &pr).unwrap()).abs() < 1e-9);
        }
    }
}
