use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Ridge penalty `l2 / 2 * |w|^2` (intercept unpenalised).
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: 0.5,
            epochs: 2000,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_names: Vec<String>,
    pub params: LogisticParams,
}

/// Mean negative log-likelihood plus ridge term, and its gradient
/// `(d/dw, d/db)`.
pub fn logistic_loss_grad(
    weights: &[f64],
    intercept: f64,
    x: &Matrix,
    y: &[u8],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    let mut loss = 0.0;
    for (row, &label) in x.iter_rows().zip(y) {
        let z = intercept + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        let t = f64::from(label);
        // log(1 + e^z) - t z, evaluated without overflow
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        gb += r;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

/// Full-batch gradient descent on the regularised logistic loss.
pub fn fit_logistic(x: &Matrix, y: &[u8], params: &LogisticParams) -> Result<LogisticModel> {
    fit_logistic_traced(x, y, params).map(|(m, _)| m)
}

/// As [`fit_logistic`], also returning the loss before every update.
pub fn fit_logistic_traced(
    x: &Matrix,
    y: &[u8],
    params: &LogisticParams,
) -> Result<(LogisticModel, Vec<f64>)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::data("cannot fit logistic regression on zero rows"));
    }
    if !x.all_finite() {
        return Err(Error::numeric("non-finite value in logistic regression input"));
    }
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    let mut history = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let (loss, gw, gb) = logistic_loss_grad(&w, b, x, y, params.l2);
        history.push(loss);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * g;
        }
        b -= params.learning_rate * gb;
    }
    let feature_names = (0..x.cols()).map(|j| format!("f{j}")).collect();
    Ok((
        LogisticModel {
            weights: w,
            intercept: b,
            feature_names,
            params: *params,
        },
        history,
    ))
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                actual: x.cols(),
            });
        }
        Ok(x.iter_rows()
            .map(|r| {
                sigmoid(self.intercept + r.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;

    #[test]
    fn intercept_only_converges_to_base_rate_logit() {
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 5 == 0)).collect();
        let x = Matrix::zeros(50, 0);
        let m = fit_logistic(&x, &y, &LogisticParams::default()).unwrap();
        let p: f64 = 0.2;
        assert!((m.intercept - (p / (1.0 - p)).ln()).abs() < 1e-3);
    }

    #[test]
    fn separated_1d_ranks_perfectly() {
        let x = Matrix::new(6, 1, vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = fit_logistic(&x, &y, &LogisticParams { epochs: 200, ..Default::default() }).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert_eq!(auroc(&p, &y).unwrap(), 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = Matrix::new(
            5,
            3,
            vec![
                0.3, -1.2, 0.5, 1.1, 0.4, -0.7, -0.2, 0.9, 1.5, 0.8, -0.3, 0.1, -1.4, 0.6, 0.2,
            ],
        )
        .unwrap();
        let y = [1, 0, 1, 1, 0];
        let w = [0.2, -0.4, 0.7];
        let b = 0.15;
        let l2 = 0.3;
        let (_, gw, gb) = logistic_loss_grad(&w, b, &x, &y, l2);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w;
            let mut wm = w;
            wp[j] += h;
            wm[j] -= h;
            let fd = (logistic_loss_grad(&wp, b, &x, &y, l2).0
                - logistic_loss_grad(&wm, b, &x, &y, l2).0)
                / (2.0 * h);
            assert!((fd - gw[j]).abs() / gw[j].abs().max(1e-12) < 1e-6, "w{j}");
        }
        let fd = (logistic_loss_grad(&w, b + h, &x, &y, l2).0
            - logistic_loss_grad(&w, b - h, &x, &y, l2).0)
            / (2.0 * h);
        assert!((fd - gb).abs() / gb.abs() < 1e-6);
    }

    #[test]
    fn loss_is_non_increasing_at_stable_rate() {
        let x = Matrix::new(8, 2, vec![0.1, 1.0, -0.5, 0.2, 0.9, -0.3, -1.0, 0.8, 0.4, 0.4, -0.2, -0.9, 0.7, 0.1, -0.6, 0.5]).unwrap();
        let y = [1, 0, 1, 0, 1, 0, 1, 1];
        let (_, hist) = fit_logistic_traced(&x, &y, &LogisticParams { learning_rate: 0.5, epochs: 300, l2: 0.01 }).unwrap();
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn zero_model_predicts_half_and_rejects_bad_input() {
        let m = LogisticModel {
            weights: vec![0.0; 2],
            intercept: 0.0,
            feature_names: vec!["a".into(), "b".into()],
            params: LogisticParams::default(),
        };
        let x = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), vec![0.5, 0.5]);
        assert!(m.predict_proba(&Matrix::zeros(1, 3)).is_err());
        let bad = Matrix::new(1, 1, vec![f64::INFINITY]).unwrap();
        assert!(fit_logistic(&bad, &[1], &LogisticParams::default()).is_err());
    }
}
