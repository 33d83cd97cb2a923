use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::seed::Rng;

/// Trainable tensor with its gradient and SGD velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Param {
            value,
            grad: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Momentum SGD: `v <- mu v - lr g; w <- w + v`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        for ((w, v), g) in self.value.iter_mut().zip(&mut self.velocity).zip(&self.grad) {
            *v = momentum * *v - lr * g;
            *w += *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out x n_in`, row-major.
    pub weights: Param,
    pub bias: Param,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            n_in,
            n_out,
            weights: Param::new(w),
            bias: Param::new(vec![0.0; n_out]),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.n_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let o = out.row_mut(r);
            for (k, ok) in o.iter_mut().enumerate() {
                let w = &self.weights.value[k * self.n_in..(k + 1) * self.n_in];
                *ok = self.bias.value[k] + xr.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Matrix, dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(input.rows(), self.n_in);
        for r in 0..input.rows() {
            let xr = input.row(r);
            let dyr = dy.row(r);
            let dxr = dx.row_mut(r);
            for (k, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.bias.grad[k] += g;
                let gw = &mut self.weights.grad[k * self.n_in..(k + 1) * self.n_in];
                for (gwi, a) in gw.iter_mut().zip(xr) {
                    *gwi += g * a;
                }
                let w = &self.weights.value[k * self.n_in..(k + 1) * self.n_in];
                for (d, wi) in dxr.iter_mut().zip(w) {
                    *d += g * wi;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    /// Running statistics update `running <- momentum * running + (1 - momentum) * batch`.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            epsilon: 1e-3,
            momentum: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub width: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub config: BatchNormConfig,
    /// False until the first training batch seeds the running statistics.
    pub initialized: bool,
}

/// Intermediate values of a train-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize, config: BatchNormConfig) -> Self {
        BatchNorm {
            width,
            gamma: Param::new(vec![1.0; width]),
            beta: Param::new(vec![0.0; width]),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            config,
            initialized: false,
        }
    }

    /// Train mode: normalise with the (biased) batch mean and variance.
    pub fn forward_train(&self, x: &Matrix) -> (Matrix, BatchNormCache) {
        let b = x.rows() as f64;
        let mut mean = vec![0.0; self.width];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b);
        let mut var = vec![0.0; self.width];
        for r in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= b);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.config.epsilon).sqrt()).collect();

        let mut xhat = Matrix::zeros(x.rows(), self.width);
        let mut out = Matrix::zeros(x.rows(), self.width);
        for i in 0..x.rows() {
            for j in 0..self.width {
                let h = (x.get(i, j) - mean[j]) * inv_std[j];
                xhat.set(i, j, h);
                out.set(i, j, self.gamma.value[j] * h + self.beta.value[j]);
            }
        }
        (
            out,
            BatchNormCache {
                normalized: xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    pub fn forward_infer(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for j in 0..self.width {
                let h = (x.get(i, j) - self.running_mean[j]) / (self.running_var[j] + self.config.epsilon).sqrt();
                out.set(i, j, self.gamma.value[j] * h + self.beta.value[j]);
            }
        }
        out
    }

    /// Gradient through the batch statistics as well as gamma and beta.
    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Matrix) -> Matrix {
        let n = dy.rows();
        let b = n as f64;
        let mut dx = Matrix::zeros(n, self.width);
        for j in 0..self.width {
            let (mut sum_dxhat, mut sum_dxhat_xhat) = (0.0, 0.0);
            for i in 0..n {
                let g = dy.get(i, j);
                let h = cache.normalized.get(i, j);
                self.gamma.grad[j] += g * h;
                self.beta.grad[j] += g;
                let dh = g * self.gamma.value[j];
                sum_dxhat += dh;
                sum_dxhat_xhat += dh * h;
            }
            let k = cache.inv_std[j] / b;
            for i in 0..n {
                let dh = dy.get(i, j) * self.gamma.value[j];
                let h = cache.normalized.get(i, j);
                dx.set(i, j, k * (b * dh - sum_dxhat - h * sum_dxhat_xhat));
            }
        }
        dx
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if !self.initialized {
            self.running_mean.clone_from(&cache.batch_mean);
            self.running_var.clone_from(&cache.batch_var);
            self.initialized = true;
            return;
        }
        let m = self.config.momentum;
        for j in 0..self.width {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * cache.batch_mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * cache.batch_var[j];
        }
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("mask shape")
}
