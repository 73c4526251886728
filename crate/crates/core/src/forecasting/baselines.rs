//! Baseline poolers: linear regression over candidate forecasts and a
//! single-hidden-layer tanh network over the delayed system state.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Loss, Trainable};
use crate::math;
use crate::numerics::{axpy, solve_spd, Matrix, ParamSet};
use crate::{Error, Result};

/// `y = W x + b`, where `x` stacks candidate forecasts as
/// `[F_j^(1), ..., F_{j-l+1}^(1), ..., F_j^(M), ..., F_{j-l+1}^(M)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPooler {
    pub w: Matrix,
    pub b: Matrix,
}

impl LinearPooler {
    /// Starts as the equally weighted mean of the current candidate forecasts.
    pub fn averaging(num_models: usize, value_dim: usize, lags: usize) -> Self {
        let inputs = num_models * lags * value_dim;
        let mut w = Matrix::zeros(value_dim, inputs);
        for i in 0..num_models {
            for c in 0..value_dim {
                w.set(c, i * lags * value_dim + c, 1.0 / num_models as f64);
            }
        }
        Self {
            w,
            b: Matrix::zeros(value_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "linear pooler input",
                expected: (self.input_dim(), 1),
                actual: (x.len(), 1),
            });
        }
        Ok(())
    }

    /// Closed-form ridge regression with the bias left unpenalised.
    pub fn fit_ridge(inputs: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<Self> {
        let n_in = inputs
            .first()
            .map(|x| x.len())
            .ok_or_else(|| Error::InvalidArgument("ridge fit needs samples".into()))?;
        let d = targets[0].len();
        let p = n_in + 1;
        let mut gram = Matrix::zeros(p, p);
        let mut rhs = Matrix::zeros(p, d);
        let mut row = vec![0.0; p];
        for (x, y) in inputs.iter().zip(targets) {
            row[..n_in].copy_from_slice(x);
            row[n_in] = 1.0;
            gram.add_outer(1.0, &row, &row);
            rhs.add_outer(1.0, &row, y);
        }
        for i in 0..n_in {
            let v = gram.get(i, i) + lambda;
            gram.set(i, i, v);
        }
        let theta = solve_spd(&gram, &rhs)?;
        let mut w = Matrix::zeros(d, n_in);
        let mut b = Matrix::zeros(d, 1);
        for c in 0..d {
            for i in 0..n_in {
                w.set(c, i, theta.get(i, c));
            }
            b.set(c, 0, theta.get(n_in, c));
        }
        Ok(Self { w, b })
    }
}

impl ParamSet for LinearPooler {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b]
    }

    fn tensor_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }
}

impl Trainable for LinearPooler {
    type Input = Vec<f64>;

    fn predict(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut y = self.w.matvec(x);
        axpy(1.0, self.b.as_slice(), &mut y);
        Ok(y)
    }

    fn accumulate_loss_grad<L: Loss + ?Sized>(
        &self,
        x: &Vec<f64>,
        target: &[f64],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let y = self.predict(x)?;
        let mut g = vec![0.0; y.len()];
        let value = loss.evaluate(&y, target, &mut g)?;
        grads.w.add_outer(scale, &g, x);
        axpy(scale, &g, grads.b.as_mut_slice());
        Ok(value)
    }
}

/// `y = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Activations of a [`FeedForwardNet`] forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnTrace {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl FeedForwardNet {
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: Matrix::init_fan_in(hidden, input_dim, input_dim, rng),
            b1: Matrix::init_fan_in(hidden, 1, input_dim, rng),
            w2: Matrix::init_fan_in(output_dim, hidden, hidden, rng),
            b2: Matrix::init_fan_in(output_dim, 1, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<FfnnTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "ffnn input",
                expected: (self.input_dim(), 1),
                actual: (x.len(), 1),
            });
        }
        let mut hidden = self.w1.matvec(x);
        for (h, b) in hidden.iter_mut().zip(self.b1.as_slice()) {
            *h = math::tanh(*h + b);
        }
        let mut output = self.w2.matvec(&hidden);
        axpy(1.0, self.b2.as_slice(), &mut output);
        Ok(FfnnTrace { hidden, output })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    /// Adds parameter gradients for `upstream = d loss / d output` to `grads`
    /// and returns `d loss / d x`.
    pub fn accumulate_backward(
        &self,
        x: &[f64],
        trace: &FfnnTrace,
        upstream: &[f64],
        grads: &mut Self,
    ) -> Vec<f64> {
        grads.w2.add_outer(1.0, upstream, &trace.hidden);
        axpy(1.0, upstream, grads.b2.as_mut_slice());
        let mut dh = vec![0.0; self.hidden()];
        self.w2.matvec_t_acc(upstream, &mut dh);
        for (d, t) in dh.iter_mut().zip(&trace.hidden) {
            *d *= 1.0 - t * t;
        }
        grads.w1.add_outer(1.0, &dh, x);
        axpy(1.0, &dh, grads.b1.as_mut_slice());
        let mut dx = vec![0.0; x.len()];
        self.w1.matvec_t_acc(&dh, &mut dx);
        dx
    }

    /// Parameter and input gradients for one upstream vector.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Self, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        if upstream.len() != trace.output.len() {
            return Err(Error::Shape {
                context: "ffnn upstream",
                expected: (trace.output.len(), 1),
                actual: (upstream.len(), 1),
            });
        }
        let mut grads = self.zeros_like();
        let dx = self.accumulate_backward(x, &trace, upstream, &mut grads);
        Ok((grads, dx))
    }
}

/// Hidden width whose parameter count `h (n_in + 1) + d (h + 1)` is closest
/// to `target_params`.
pub fn ffnn_hidden_for_params(target_params: usize, input_dim: usize, output_dim: usize) -> usize {
    let per_unit = (input_dim + 1 + output_dim) as f64;
    let h = math::round((target_params as f64 - output_dim as f64) / per_unit);
    (h as usize).max(1)
}

impl ParamSet for FeedForwardNet {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn tensor_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2"]
            .iter()
            .map(|s| String::from(*s))
            .collect()
    }
}

impl Trainable for FeedForwardNet {
    type Input = Vec<f64>;

    fn predict(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn accumulate_loss_grad<L: Loss + ?Sized>(
        &self,
        x: &Vec<f64>,
        target: &[f64],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let trace = self.forward_trace(x)?;
        let mut g = vec![0.0; trace.output.len()];
        let value = loss.evaluate(&trace.output, target, &mut g)?;
        g.iter_mut().for_each(|v| *v *= scale);
        self.accumulate_backward(x, &trace, &g, grads);
        Ok(value)
    }
}
