//! Training loop, baseline poolers, and open/closed-loop forecast drivers.
//!
//! Every trainable model implements [`Trainable`]: a forward pass plus an
//! analytic backward pass that accumulates parameter gradients for a given
//! [`Loss`]. [`train`] runs shuffled minibatch Adam over any such model.

mod baselines;
mod driver;
mod experiment;

pub use baselines::{ffnn_hidden_for_params, FeedForwardNet, LinearPooler};
pub use driver::{
    argmax, closed_loop_forecast, lorenz_training_set, open_loop_forecast, ClosedLoopForecast,
    Forecaster, LorenzFeatures, MethodKind, OpenLoopForecast, PoolingVariant,
};
pub use experiment::{
    argmax_rho_correlation, forecast_segment, train_lorenz_model, variant_for, LorenzModelSpec,
    SegmentResult, TrainedLorenzModel,
};

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::attention::{EnsembleStep, MultiHeadParams, SingleHeadParams, StepBatch};
use crate::numerics::{Adam, AdamConfig, Matrix, ParamSet};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// A per-sample loss that also reports `d loss / d prediction`.
pub trait Loss {
    /// Writes the gradient into `grad` (same length as `pred`) and returns the loss.
    fn evaluate(&self, pred: &[f64], target: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Mean squared error averaged over output components.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mse;

impl Loss for Mse {
    fn evaluate(&self, pred: &[f64], target: &[f64], grad: &mut [f64]) -> Result<f64> {
        if pred.len() != target.len() {
            return Err(Error::Shape {
                context: "mse",
                expected: (target.len(), 1),
                actual: (pred.len(), 1),
            });
        }
        let n = pred.len() as f64;
        let mut total = 0.0;
        for ((g, p), t) in grad.iter_mut().zip(pred).zip(target) {
            let e = p - t;
            total += e * e;
            *g = 2.0 * e / n;
        }
        Ok(total / n)
    }
}

/// A model trained by [`train`].
pub trait Trainable: ParamSet {
    type Input;

    fn predict(&self, input: &Self::Input) -> Result<Vec<f64>>;

    /// Runs forward and backward for one sample, adds `scale * d loss / d params`
    /// to `grads`, and returns the unscaled loss.
    fn accumulate_loss_grad<L: Loss + ?Sized>(
        &self,
        input: &Self::Input,
        target: &[f64],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64>;

    /// Minibatch form of [`Trainable::accumulate_loss_grad`]; returns the
    /// summed unscaled loss.
    fn accumulate_batch_loss_grad<L: Loss + ?Sized>(
        &self,
        inputs: &[&Self::Input],
        targets: &[&[f64]],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            total += self.accumulate_loss_grad(x, y, loss, scale, grads)?;
        }
        Ok(total)
    }

    fn loss<L: Loss + ?Sized>(&self, input: &Self::Input, target: &[f64], loss: &L) -> Result<f64> {
        let pred = self.predict(input)?;
        let mut g = vec![0.0; pred.len()];
        loss.evaluate(&pred, target, &mut g)
    }
}

impl Trainable for SingleHeadParams {
    type Input = EnsembleStep;

    fn predict(&self, input: &EnsembleStep) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    fn accumulate_loss_grad<L: Loss + ?Sized>(
        &self,
        input: &EnsembleStep,
        target: &[f64],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        let mut g = vec![0.0; trace.output.len()];
        let value = loss.evaluate(&trace.output, target, &mut g)?;
        g.iter_mut().for_each(|v| *v *= scale);
        self.accumulate_backward(input, &trace, &g, grads, None);
        Ok(value)
    }
    fn accumulate_batch_loss_grad<L: Loss + ?Sized>(
        &self,
        inputs: &[&EnsembleStep],
        targets: &[&[f64]],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let batch = StepBatch::new(inputs)?;
        let trace = self.forward_batch(&batch)?;
        let up = loss_gradients(&trace.outputs, targets, loss, scale)?;
        self.accumulate_backward_batch(&batch, trace, &up.0, grads);
        Ok(up.1)
    }
}

impl Trainable for MultiHeadParams {
    type Input = EnsembleStep;

    fn predict(&self, input: &EnsembleStep) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    fn accumulate_loss_grad<L: Loss + ?Sized>(
        &self,
        input: &EnsembleStep,
        target: &[f64],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        let mut g = vec![0.0; trace.output.len()];
        let value = loss.evaluate(&trace.output, target, &mut g)?;
        g.iter_mut().for_each(|v| *v *= scale);
        self.accumulate_backward(input, &trace, &g, grads, None);
        Ok(value)
    }
    fn accumulate_batch_loss_grad<L: Loss + ?Sized>(
        &self,
        inputs: &[&EnsembleStep],
        targets: &[&[f64]],
        loss: &L,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let batch = StepBatch::new(inputs)?;
        let trace = self.forward_batch(&batch)?;
        let up = loss_gradients(&trace.outputs, targets, loss, scale)?;
        self.accumulate_backward_batch(&batch, trace, &up.0, grads);
        Ok(up.1)
    }
}

/// Per-row loss gradients scaled by `scale`, plus the summed loss.
fn loss_gradients<L: Loss + ?Sized>(
    outputs: &Matrix,
    targets: &[&[f64]],
    loss: &L,
    scale: f64,
) -> Result<(Matrix, f64)> {
    let mut up = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut total = 0.0;
    for (s, y) in targets.iter().enumerate() {
        let g = up.row_mut(s);
        total += loss.evaluate(outputs.row(s), y, g)?;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((up, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss seen during each epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch Adam. Sample order is reshuffled from `rng` every epoch and
/// `guard` is called with each sample index before it is used.
pub fn train<M, L, G>(
    model: &mut M,
    inputs: &[M::Input],
    targets: &[Vec<f64>],
    loss: &L,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
    mut guard: G,
) -> Result<TrainReport>
where
    M: Trainable,
    L: Loss + ?Sized,
    G: FnMut(usize) -> Result<()>,
{
    if inputs.len() != targets.len() {
        return Err(Error::Shape {
            context: "train inputs vs targets",
            expected: (targets.len(), 1),
            actual: (inputs.len(), 1),
        });
    }
    if inputs.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "training needs samples and a positive batch size".into(),
        ));
    }
    cfg.adam.validate()?;
    let mut opt = Adam::new(model, cfg.adam);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            grads.reset();
            let scale = 1.0 / idx.len() as f64;
            for &i in idx {
                guard(i)?;
            }
            let xs: Vec<&M::Input> = idx.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<&[f64]> = idx.iter().map(|&i| targets[i].as_slice()).collect();
            let batch_total =
                model.accumulate_batch_loss_grad(&xs, &ys, loss, scale, &mut grads)?;
            if !batch_total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: batch_total,
                });
            }
            opt.step(model, &grads)?;
            epoch_total += batch_total;
        }
        curve.push(epoch_total / inputs.len() as f64);
    }
    Ok(TrainReport { loss_curve: curve })
}

/// Mean loss of `model` over a sample set.
pub fn mean_loss<M: Trainable, L: Loss + ?Sized>(
    model: &M,
    inputs: &[M::Input],
    targets: &[Vec<f64>],
    loss: &L,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        total += model.loss(x, y, loss)?;
    }
    Ok(total / inputs.len().max(1) as f64)
}
