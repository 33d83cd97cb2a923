use serde::{Deserialize, Serialize};

use super::layers::{dropout_mask, relu, BatchNorm, BatchNormCache, BatchNormConfig, Dense, Param};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Rng};
use crate::sigmoid;

/// Network shape: optional input batch norm, ReLU hidden layers with dropout
/// between them, one sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_in: usize,
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub input_batch_norm: bool,
    /// Batch norm between each hidden dense layer and its activation.
    #[serde(default)]
    pub hidden_batch_norm: bool,
    /// Also drop out after the last hidden layer (two dropout sites otherwise).
    #[serde(default)]
    pub dropout_after_last_hidden: bool,
    pub batch_norm: BatchNormConfig,
}

impl Architecture {
    /// `d_in -> 100 -> 50 -> 25 -> 1` with input batch norm and 20% dropout.
    pub fn standard(d_in: usize) -> Self {
        Architecture {
            d_in,
            hidden: vec![100, 50, 25],
            dropout_p: 0.2,
            input_batch_norm: true,
            hidden_batch_norm: false,
            dropout_after_last_hidden: false,
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::arg("network input width must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::arg("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::arg(format!("dropout rate {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.batch_norm.epsilon > 0.0) || !(0.0 < self.batch_norm.momentum && self.batch_norm.momentum < 1.0) {
            return Err(Error::arg("batch norm needs epsilon > 0 and momentum in (0, 1)"));
        }
        Ok(())
    }

    pub(crate) fn has_batch_norm(&self) -> bool {
        self.input_batch_norm || (self.hidden_batch_norm && !self.hidden.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Relu,
    Dropout(f64),
}

impl Layer {
    fn label(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::Dropout(_) => "dropout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Everything a train-mode pass keeps for the backward sweep.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Matrix>,
    bn: Vec<Option<BatchNormCache>>,
    masks: Vec<Option<Matrix>>,
    /// Output-unit pre-activations.
    pub logits: Vec<f64>,
}

impl Tape {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }

    /// Input seen by each layer, in layer order.
    pub fn layer_inputs(&self) -> &[Matrix] {
        &self.inputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
    pub feature_names: Vec<String>,
}

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            actual: y.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::arg("binary cross-entropy of an empty batch"));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let q = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if yi == 1 {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    Ok(total / p.len() as f64)
}

impl MlpModel {
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = seed::derived_rng(seed, "mlp_init", 0);
        let a = &architecture;
        let mut layers = Vec::new();
        if a.input_batch_norm {
            layers.push(Layer::BatchNorm(BatchNorm::new(a.d_in, a.batch_norm)));
        }
        let mut width = a.d_in;
        for (k, &h) in a.hidden.iter().enumerate() {
            layers.push(Layer::Dense(Dense::new(width, h, &mut rng)));
            if a.hidden_batch_norm {
                layers.push(Layer::BatchNorm(BatchNorm::new(h, a.batch_norm)));
            }
            layers.push(Layer::Relu);
            let last = k + 1 == a.hidden.len();
            if a.dropout_p > 0.0 && (!last || a.dropout_after_last_hidden) {
                layers.push(Layer::Dropout(a.dropout_p));
            }
            width = h;
        }
        layers.push(Layer::Dense(Dense::new(width, 1, &mut rng)));
        Ok(MlpModel {
            feature_names: (0..a.d_in).map(|j| format!("f{j}")).collect(),
            architecture,
            layers,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.architecture.d_in {
            return Err(Error::Dimension {
                expected: self.architecture.d_in,
                actual: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass in either mode. Train mode uses batch statistics and
    /// draws dropout masks from `rng` (no dropout when `rng` is `None`); it
    /// does not touch running statistics.
    pub fn forward(&self, x: &Matrix, mode: Mode, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        match mode {
            Mode::Infer => self.predict(x),
            Mode::Train => Ok(self.forward_tape(x, rng)?.probabilities()),
        }
    }

    /// Inference: running statistics, no dropout. Rows are independent.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward(&h),
                Layer::BatchNorm(bn) => bn.forward_infer(&h),
                Layer::Relu => {
                    h.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
                    h
                }
                Layer::Dropout(_) => h,
            };
        }
        Ok(h.as_slice().iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn forward_tape(&self, x: &Matrix, mut rng: Option<&mut Rng>) -> Result<Tape> {
        self.check_input(x)?;
        if self.architecture.has_batch_norm() && x.rows() < 2 {
            return Err(Error::arg("train-mode batch norm needs at least two rows"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = match layer {
                Layer::Dense(d) => {
                    bn.push(None);
                    masks.push(None);
                    d.forward(&h)
                }
                Layer::BatchNorm(b) => {
                    let (out, cache) = b.forward_train(&h);
                    bn.push(Some(cache));
                    masks.push(None);
                    out
                }
                Layer::Relu => {
                    bn.push(None);
                    masks.push(None);
                    let mut out = h.clone();
                    out.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
                    out
                }
                Layer::Dropout(p) => {
                    bn.push(None);
                    match rng.as_deref_mut() {
                        Some(r) if *p > 0.0 => {
                            let m = dropout_mask(h.rows(), h.cols(), *p, r);
                            let mut out = h.clone();
                            out.as_mut_slice()
                                .iter_mut()
                                .zip(m.as_slice())
                                .for_each(|(v, k)| *v *= k);
                            masks.push(Some(m));
                            out
                        }
                        _ => {
                            masks.push(None);
                            h.clone()
                        }
                    }
                }
            };
            inputs.push(std::mem::replace(&mut h, next));
        }
        Ok(Tape {
            inputs,
            bn,
            masks,
            logits: h.into_vec(),
        })
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Reverse-mode sweep for mean BCE over the taped batch. Gradients are
    /// written (not accumulated) into every parameter; returns the loss.
    pub fn backward(&mut self, tape: &Tape, y: &[u8]) -> Result<f64> {
        let b = tape.logits.len();
        if y.len() != b {
            return Err(Error::Dimension {
                expected: b,
                actual: y.len(),
            });
        }
        self.zero_grad();
        let p = tape.probabilities();
        let loss = bce_loss(&p, y)?;
        let mut grad = Matrix::new(
            b,
            1,
            p.iter().zip(y).map(|(pi, &yi)| (pi - f64::from(yi)) / b as f64).collect(),
        )?;
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let input = &tape.inputs[idx];
            grad = match layer {
                Layer::Dense(d) => d.backward(input, &grad),
                Layer::BatchNorm(bn) => {
                    let cache = tape.bn[idx].as_ref().expect("batch norm cache");
                    bn.backward(cache, &grad)
                }
                Layer::Relu => {
                    let mut g = grad;
                    g.as_mut_slice()
                        .iter_mut()
                        .zip(input.as_slice())
                        .for_each(|(gv, &x)| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    g
                }
                Layer::Dropout(_) => match &tape.masks[idx] {
                    Some(m) => {
                        let mut g = grad;
                        g.as_mut_slice().iter_mut().zip(m.as_slice()).for_each(|(gv, k)| *gv *= k);
                        g
                    }
                    None => grad,
                },
            };
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            let finite = match layer {
                Layer::Dense(d) => d.weights.grad.iter().chain(&d.bias.grad).all(|g| g.is_finite()),
                Layer::BatchNorm(bn) => bn.gamma.grad.iter().chain(&bn.beta.grad).all(|g| g.is_finite()),
                _ => true,
            };
            if !finite {
                return Err(Error::numeric(format!(
                    "non-finite gradient in layer {idx} ({})",
                    layer.label()
                )));
            }
        }
        Ok(loss)
    }

    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            if let (Layer::BatchNorm(bn), Some(c)) = (layer, &tape.bn[idx]) {
                bn.update_running(c);
            }
        }
    }

    pub fn sgd_step(&mut self, learning_rate: f64, momentum: f64) {
        for p in self.params_mut() {
            p.sgd_step(learning_rate, momentum);
        }
    }

    /// One optimisation step on a batch: forward with dropout, backward,
    /// running-statistic update and momentum SGD. Returns the batch loss.
    pub fn backward_and_step(
        &mut self,
        x: &Matrix,
        y: &[u8],
        learning_rate: f64,
        momentum: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        let tape = self.forward_tape(x, Some(rng))?;
        let loss = self.backward(&tape, y)?;
        self.update_running_stats(&tape);
        self.sgd_step(learning_rate, momentum);
        Ok(loss)
    }

    /// Trainable parameters in a fixed order (layer order, weights before bias,
    /// gamma before beta).
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(&d.weights);
                    out.push(&d.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(&mut d.weights);
                    out.push(&mut d.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Names matching [`MlpModel::params`] order, e.g. `layer1.weights`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Dense(_) => {
                    out.push(format!("layer{i}.weights"));
                    out.push(format!("layer{i}.bias"));
                }
                Layer::BatchNorm(_) => {
                    out.push(format!("layer{i}.gamma"));
                    out.push(format!("layer{i}.beta"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Sets every weight, bias and beta to 0 and every gamma to 1.
    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    d.weights.value.iter_mut().for_each(|v| *v = 0.0);
                    d.bias.value.iter_mut().for_each(|v| *v = 0.0);
                }
                Layer::BatchNorm(bn) => {
                    bn.gamma.value.iter_mut().for_each(|v| *v = 1.0);
                    bn.beta.value.iter_mut().for_each(|v| *v = 0.0);
                }
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seed::rng(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn standard_shape() {
        let m = MlpModel::new(Architecture::standard(30), 1).unwrap();
        // 30*2 (bn) + 30*100+100 + 100*50+50 + 50*25+25 + 25+1
        assert_eq!(m.n_params(), 60 + 3100 + 5050 + 1275 + 26);
        let kinds: Vec<&str> = m.layers.iter().map(Layer::label).collect();
        assert_eq!(
            kinds,
            vec!["batch_norm", "dense", "relu", "dropout", "dense", "relu", "dropout", "dense", "relu", "dense"]
        );
        let mut third = Architecture::standard(30);
        third.dropout_after_last_hidden = true;
        assert_eq!(MlpModel::new(third, 1).unwrap().layers.len(), 11);
    }

    #[test]
    fn zero_weights_output_half() {
        let mut m = MlpModel::new(Architecture::standard(4), 2).unwrap();
        m.zero_weights();
        let x = random_batch(5, 4, 9);
        assert!(m.predict(&x).unwrap().iter().all(|&p| p == 0.5));
        let mut rng = seed::rng(0);
        assert!(m.forward(&x, Mode::Train, Some(&mut rng)).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn input_errors() {
        let m = MlpModel::new(Architecture::standard(4), 2).unwrap();
        assert!(m.predict(&random_batch(3, 5, 1)).is_err());
        assert!(m.forward_tape(&random_batch(1, 4, 1), None).is_err());
        let mut bad = Architecture::standard(4);
        bad.dropout_p = 1.0;
        assert!(MlpModel::new(bad, 0).is_err());
    }

    #[test]
    fn bce_cases() {
        assert!((bce_loss(&[0.5; 4], &[0, 1, 1, 0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let exact = bce_loss(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(exact <= -(1.0 - PROB_CLAMP).ln() + 1e-18);
        let p = [0.2, 0.7, 0.9];
        let y = [0, 1, 0];
        let a = bce_loss(&p, &y).unwrap();
        let b = bce_loss(&[0.2, 0.7, 0.9, 0.2, 0.7, 0.9], &[0, 1, 0, 0, 1, 0]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(bce_loss(&p, &y[..2]).is_err());
    }

    #[test]
    fn logit_gradient_is_p_minus_y_over_b() {
        // with no hidden layers the output bias gradient is sum (p - y) / b
        let arch = Architecture {
            hidden: vec![],
            input_batch_norm: false,
            dropout_p: 0.0,
            ..Architecture::standard(3)
        };
        let mut m = MlpModel::new(arch, 5).unwrap();
        let x = random_batch(6, 3, 2);
        let y = [1, 0, 0, 1, 1, 0];
        let tape = m.forward_tape(&x, None).unwrap();
        m.backward(&tape, &y).unwrap();
        let p = tape.probabilities();
        let expected: f64 = p.iter().zip(&y).map(|(pi, &yi)| (pi - f64::from(yi)) / 6.0).sum();
        let Layer::Dense(d) = &m.layers[0] else { panic!() };
        assert!((d.bias.grad[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut m = MlpModel::new(Architecture::standard(4), 2).unwrap();
        let before: Vec<Vec<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        let mut rng = seed::rng(4);
        let x = random_batch(8, 4, 3);
        m.backward_and_step(&x, &[0, 1, 0, 1, 1, 0, 0, 1], 0.0, 0.9, &mut rng).unwrap();
        let after: Vec<Vec<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn inference_is_row_independent() {
        let mut m = MlpModel::new(Architecture::standard(4), 2).unwrap();
        let mut rng = seed::rng(4);
        let x = random_batch(8, 4, 3);
        m.backward_and_step(&x, &[0, 1, 0, 1, 1, 0, 0, 1], 0.05, 0.9, &mut rng).unwrap();
        let a = m.predict(&x).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(5).iter_mut().for_each(|v| *v += 10.0);
        let b = m.predict(&x2).unwrap();
        for i in (0..8).filter(|&i| i != 5) {
            assert_eq!(a[i], b[i]);
        }
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
