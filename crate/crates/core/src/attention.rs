//! Additive attention pooling over an ensemble of candidate forecasts.
//!
//! For candidate `i` with key `k_i` and the shared query `q`, the score is
//! `s_i = w_v . tanh(W_q q + W_k k_i + b)` and the pooling weights are the
//! softmax of the scores over the candidates. A single head returns the
//! weighted mean of the candidate values; a multi-head block concatenates the
//! per-head outputs and mixes them with `W_0`.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::numerics::{axpy, dot, gemm, Matrix, ParamSet};
use crate::{Error, Result};

/// Concatenates the `l` most recent base vectors of `history` (newest first).
pub fn embed<V: AsRef<[f64]>>(history: &[V], l: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::InvalidArgument(
            "delay length must be at least 1".into(),
        ));
    }
    if history.len() < l {
        return Err(Error::InsufficientHistory {
            needed: l,
            available: history.len(),
        });
    }
    let mut out = Vec::with_capacity(l * history[0].as_ref().len());
    for v in &history[..l] {
        out.extend_from_slice(v.as_ref());
    }
    Ok(out)
}

/// Rolling buffer of the `l` most recent base vectors, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEmbedding {
    length: usize,
    base_dim: usize,
    buffer: VecDeque<Vec<f64>>,
}

impl DelayEmbedding {
    pub fn new(length: usize, base_dim: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidArgument(
                "delay length must be at least 1".into(),
            ));
        }
        Ok(Self {
            length,
            base_dim,
            buffer: VecDeque::with_capacity(length + 1),
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn embedded_dim(&self) -> usize {
        self.length * self.base_dim
    }

    pub fn is_ready(&self) -> bool {
        self.buffer.len() == self.length
    }

    /// Pushes the newest base vector, dropping the oldest when full.
    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.base_dim {
            return Err(Error::Shape {
                context: "DelayEmbedding::push",
                expected: (self.base_dim, 1),
                actual: (v.len(), 1),
            });
        }
        self.buffer.push_front(v.to_vec());
        self.buffer.truncate(self.length);
        Ok(())
    }

    /// The newest-first buffer contents.
    pub fn history(&self) -> impl Iterator<Item = &[f64]> {
        self.buffer.iter().map(|v| v.as_slice())
    }

    pub fn embedded_into(&self, out: &mut [f64]) -> Result<()> {
        if !self.is_ready() {
            return Err(Error::InsufficientHistory {
                needed: self.length,
                available: self.buffer.len(),
            });
        }
        debug_assert_eq!(out.len(), self.embedded_dim());
        for (chunk, v) in out.chunks_mut(self.base_dim).zip(&self.buffer) {
            chunk.copy_from_slice(v);
        }
        Ok(())
    }

    pub fn embedded(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.embedded_dim()];
        self.embedded_into(&mut out)?;
        Ok(out)
    }
}

/// Inputs for one pooled forecast: the shared query, one key per candidate
/// (rows of `keys`), and one candidate forecast per candidate (rows of `values`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStep {
    pub query: Vec<f64>,
    pub keys: Matrix,
    pub values: Matrix,
}

impl EnsembleStep {
    pub fn new(query: Vec<f64>, keys: Matrix, values: Matrix) -> Result<Self> {
        let step = Self {
            query,
            keys,
            values,
        };
        step.validate()?;
        Ok(step)
    }

    pub fn num_models(&self) -> usize {
        self.values.rows()
    }

    pub fn value_dim(&self) -> usize {
        self.values.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.keys.rows() != self.values.rows() {
            return Err(Error::Shape {
                context: "EnsembleStep keys vs values",
                expected: (self.values.rows(), self.keys.cols()),
                actual: self.keys.shape(),
            });
        }
        if self.values.rows() == 0 {
            return Err(Error::InvalidArgument(
                "ensemble step needs at least one model".into(),
            ));
        }
        if !self.keys.is_finite()
            || !self.values.is_finite()
            || self.query.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("ensemble step inputs".into()));
        }
        Ok(())
    }
}

/// Weights of one additive-attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleHeadParams {
    /// `h x q'`
    pub w_q: Matrix,
    /// `h x k'`
    pub w_k: Matrix,
    /// `h x 1`
    pub w_v: Matrix,
    /// `h x 1`
    pub b: Matrix,
}

impl SingleHeadParams {
    /// Uniform fan-in initialisation. The bias uses the fan-in of the summed
    /// query and key projections.
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        query_dim: usize,
        key_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_q: Matrix::init_fan_in(hidden, query_dim, query_dim, rng),
            w_k: Matrix::init_fan_in(hidden, key_dim, key_dim, rng),
            w_v: Matrix::init_fan_in(hidden, 1, hidden, rng),
            b: Matrix::init_fan_in(hidden, 1, query_dim + key_dim, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_q.rows()
    }

    pub fn query_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.w_k.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if h == 0 {
            return Err(Error::InvalidArgument(
                "hidden size must be at least 1".into(),
            ));
        }
        self.w_k.ensure_shape("W_k", h, self.key_dim())?;
        self.w_v.ensure_shape("w_v", h, 1)?;
        self.b.ensure_shape("b", h, 1)?;
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("attention parameters".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, query: &[f64], keys: &Matrix) -> Result<()> {
        if query.len() != self.query_dim() {
            return Err(Error::Shape {
                context: "attention query",
                expected: (self.query_dim(), 1),
                actual: (query.len(), 1),
            });
        }
        if keys.cols() != self.key_dim() || keys.rows() == 0 {
            return Err(Error::Shape {
                context: "attention keys",
                expected: (keys.rows().max(1), self.key_dim()),
                actual: keys.shape(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by the backward pass.
    pub fn forward_trace(&self, step: &EnsembleStep) -> Result<SingleHeadTrace> {
        self.check_inputs(&step.query, &step.keys)?;
        let h = self.hidden();
        let m = step.keys.rows();
        let mut base = self.w_q.matvec(&step.query);
        axpy(1.0, self.b.as_slice(), &mut base);
        let mut pre = Matrix::zeros(h, m);
        for r in 0..h {
            let w = self.w_k.row(r);
            for (i, z) in pre.row_mut(r).iter_mut().enumerate() {
                *z = base[r] + dot(w, step.keys.row(i));
            }
        }
        let mut hidden = Matrix::zeros(m, h);
        for i in 0..m {
            for (r, t) in hidden.row_mut(i).iter_mut().enumerate() {
                *t = math::tanh(pre.get(r, i));
            }
        }
        let scores: Vec<f64> = (0..m)
            .map(|i| dot(self.w_v.as_slice(), hidden.row(i)))
            .collect();
        let weights = softmax(&scores);
        let output = pool_single_head(&weights, &step.values)?;
        Ok(SingleHeadTrace {
            hidden,
            scores,
            weights,
            output,
        })
    }

    /// Back-propagates `upstream = dL/d output` through a traced forward pass.
    ///
    /// Parameter gradients are added to `grads`; input gradients are added to
    /// `inputs` when requested.
    pub fn accumulate_backward(
        &self,
        step: &EnsembleStep,
        trace: &SingleHeadTrace,
        upstream: &[f64],
        grads: &mut SingleHeadParams,
        mut inputs: Option<&mut InputGrads>,
    ) {
        let m = step.values.rows();
        let h = self.hidden();
        // d loss / d weight_i, then through the softmax.
        let ga: Vec<f64> = (0..m).map(|i| dot(upstream, step.values.row(i))).collect();
        let mean: f64 = trace.weights.iter().zip(&ga).map(|(a, g)| a * g).sum();
        let mut dz_sum = vec![0.0; h];
        // dz transposed: one row per hidden unit, one column per candidate
        let mut dz = Matrix::zeros(h, m);
        let mut active = Vec::with_capacity(m);
        for i in 0..m {
            let a = trace.weights[i];
            if let Some(ig) = inputs.as_deref_mut() {
                axpy(a, upstream, ig.values.row_mut(i));
            }
            let ds = a * (ga[i] - mean);
            if ds == 0.0 {
                continue;
            }
            active.push(i);
            let t = trace.hidden.row(i);
            axpy(ds, t, grads.w_v.as_mut_slice());
            for r in 0..h {
                let d = ds * self.w_v.as_slice()[r] * (1.0 - t[r] * t[r]);
                dz.set(r, i, d);
                dz_sum[r] += d;
            }
        }
        for r in 0..h {
            let g = grads.w_k.row_mut(r);
            for &i in &active {
                axpy(dz.get(r, i), step.keys.row(i), g);
            }
        }
        if let Some(ig) = inputs.as_deref_mut() {
            for r in 0..h {
                let w = self.w_k.row(r);
                for &i in &active {
                    axpy(dz.get(r, i), w, ig.keys.row_mut(i));
                }
            }
        }
        axpy(1.0, &dz_sum, grads.b.as_mut_slice());
        grads.w_q.add_outer(1.0, &dz_sum, &step.query);
        if let Some(ig) = inputs {
            self.w_q.matvec_t_acc(&dz_sum, &mut ig.query);
        }
    }
}

/// Steps stacked for a batched pass. All steps must share the candidate
/// count, key size and value size.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    /// One row per step.
    pub queries: Matrix,
    /// Row `s * m + i` holds key `i` of step `s`.
    pub keys: Matrix,
    pub values: Matrix,
    pub num_models: usize,
}

impl StepBatch {
    pub fn new(steps: &[&EnsembleStep]) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty step batch".into()))?;
        let (m, qd, kd, vd) = (
            first.num_models(),
            first.query.len(),
            first.keys.cols(),
            first.value_dim(),
        );
        let mut queries = Matrix::zeros(steps.len(), qd);
        let mut keys = Matrix::zeros(steps.len() * m, kd);
        let mut values = Matrix::zeros(steps.len() * m, vd);
        for (s, step) in steps.iter().enumerate() {
            if step.num_models() != m
                || step.query.len() != qd
                || step.keys.cols() != kd
                || step.value_dim() != vd
            {
                return Err(Error::Shape {
                    context: "step batch",
                    expected: (m, kd),
                    actual: step.keys.shape(),
                });
            }
            queries.row_mut(s).copy_from_slice(&step.query);
            let span = s * m * kd..(s + 1) * m * kd;
            keys.as_mut_slice()[span].copy_from_slice(step.keys.as_slice());
            let span = s * m * vd..(s + 1) * m * vd;
            values.as_mut_slice()[span].copy_from_slice(step.values.as_slice());
        }
        Ok(Self {
            queries,
            keys,
            values,
            num_models: m,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn candidate_values(&self, s: usize) -> &[f64] {
        let vd = self.values.cols();
        &self.values.as_slice()[s * self.num_models * vd..(s + 1) * self.num_models * vd]
    }
}

/// Activations of a batched single-head pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    /// Row `s * m + i`: hidden activations for candidate `i` of step `s`.
    pub hidden: Matrix,
    /// One row per step.
    pub weights: Matrix,
    pub outputs: Matrix,
}

/// Several heads run side by side: row `s * m + i` of `hidden` holds the
/// activations of every head, head `p` in columns `p*h .. (p+1)*h`.
struct StackedTrace {
    hidden: Matrix,
    weights: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

fn stack_rows(parts: &[&Matrix]) -> Matrix {
    let cols = parts[0].cols();
    let data = parts
        .iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect::<Vec<_>>();
    Matrix::from_vec(data.len() / cols, cols, data).expect("equal widths")
}

math::wide_kernel! {
    /// Adds the query term and bias, applies `tanh`, and pools each head.
    #[allow(clippy::too_many_arguments)]
    fn activate(
        heads: &[&SingleHeadParams],
        batch: &StepBatch,
        bias: &[f64],
        base: &mut Matrix,
        hidden: &mut Matrix,
        scores: &mut [f64],
        weights: &mut [Matrix],
        outputs: &mut [Matrix],
    ) {
        let (m, h, vd) = (batch.num_models, heads[0].hidden(), batch.values.cols());
        for s in 0..batch.len() {
            axpy(1.0, bias, base.row_mut(s));
            let bq = base.row(s);
            for i in 0..m {
                let row = hidden.row_mut(s * m + i);
                for (t, q) in row.iter_mut().zip(bq) {
                    *t = math::tanh(*t + q);
                }
                for (k, head) in heads.iter().enumerate() {
                    scores[k * m + i] = dot(head.w_v.as_slice(), &row[k * h..(k + 1) * h]);
                }
            }
            let vals = batch.candidate_values(s);
            for k in 0..heads.len() {
                let a = softmax(&scores[k * m..(k + 1) * m]);
                let out = outputs[k].row_mut(s);
                for (i, &ai) in a.iter().enumerate() {
                    axpy(ai, &vals[i * vd..(i + 1) * vd], out);
                }
                weights[k].row_mut(s).copy_from_slice(&a);
            }
        }
    }
}

math::wide_kernel! {
    /// `w_v` gradients, plus the pre-activation gradients, written over
    /// `hidden`, and their per-step sums over candidates.
    #[allow(clippy::too_many_arguments)]
    fn hidden_grads(
        heads: &[&SingleHeadParams],
        batch: &StepBatch,
        hidden: &mut Matrix,
        weights: &[&Matrix],
        upstream: &[Matrix],
        grads: &mut [&mut SingleHeadParams],
        dz_sum: &mut Matrix,
    ) {
        let (m, h, vd) = (batch.num_models, heads[0].hidden(), batch.values.cols());
        let mut ga = vec![0.0; m];
        for s in 0..batch.len() {
            let vals = batch.candidate_values(s);
            for k in 0..heads.len() {
                let u = upstream[k].row(s);
                for (i, g) in ga.iter_mut().enumerate() {
                    *g = dot(u, &vals[i * vd..(i + 1) * vd]);
                }
                let a = weights[k].row(s);
                let mean: f64 = a.iter().zip(&ga).map(|(a, g)| a * g).sum();
                let w_v = heads[k].w_v.as_slice();
                let cols = k * h..(k + 1) * h;
                for i in 0..m {
                    let ds = a[i] * (ga[i] - mean);
                    let row = &mut hidden.row_mut(s * m + i)[cols.clone()];
                    if ds == 0.0 {
                        row.fill(0.0);
                        continue;
                    }
                    axpy(ds, row, grads[k].w_v.as_mut_slice());
                    for (t, w) in row.iter_mut().zip(w_v) {
                        *t = ds * w * (1.0 - *t * *t);
                    }
                }
            }
            for i in 0..m {
                axpy(1.0, hidden.row(s * m + i), dz_sum.row_mut(s));
            }
        }
    }
}

fn stacked_forward(heads: &[&SingleHeadParams], batch: &StepBatch) -> Result<StackedTrace> {
    let first = heads[0];
    let (b, m, h) = (batch.len(), batch.num_models, first.hidden());
    batch
        .queries
        .ensure_shape("batch queries", b, first.query_dim())?;
    batch
        .keys
        .ensure_shape("batch keys", b * m, first.key_dim())?;
    let np = heads.len();
    let wide = np * h;
    let mut base = Matrix::zeros(b, wide);
    let mut hidden = Matrix::zeros(b * m, wide);
    if np == 1 {
        gemm(1.0, &batch.queries, false, &first.w_q, true, 0.0, &mut base);
        gemm(1.0, &batch.keys, false, &first.w_k, true, 0.0, &mut hidden);
    } else {
        let w_q = stack_rows(&heads.iter().map(|p| &p.w_q).collect::<Vec<_>>());
        let w_k = stack_rows(&heads.iter().map(|p| &p.w_k).collect::<Vec<_>>());
        gemm(1.0, &batch.queries, false, &w_q, true, 0.0, &mut base);
        gemm(1.0, &batch.keys, false, &w_k, true, 0.0, &mut hidden);
    }
    let bias: Vec<f64> = heads
        .iter()
        .flat_map(|p| p.b.as_slice().iter().copied())
        .collect();
    let vd = batch.values.cols();
    let mut weights: Vec<Matrix> = (0..np).map(|_| Matrix::zeros(b, m)).collect();
    let mut outputs: Vec<Matrix> = (0..np).map(|_| Matrix::zeros(b, vd)).collect();
    let mut scores = vec![0.0; np * m];
    activate(
        heads,
        batch,
        &bias,
        &mut base,
        &mut hidden,
        &mut scores,
        &mut weights,
        &mut outputs,
    );
    Ok(StackedTrace {
        hidden,
        weights,
        outputs,
    })
}

/// Parameter gradients of stacked heads; `upstream[p]` has one row per step.
fn stacked_backward(
    heads: &[&SingleHeadParams],
    batch: &StepBatch,
    mut dz: Matrix,
    weights: &[&Matrix],
    upstream: &[Matrix],
    grads: &mut [&mut SingleHeadParams],
) {
    let (b, h) = (batch.len(), heads[0].hidden());
    let np = heads.len();
    let wide = np * h;
    let mut dz_sum = Matrix::zeros(b, wide);
    hidden_grads(heads, batch, &mut dz, weights, upstream, grads, &mut dz_sum);
    if np == 1 {
        gemm(1.0, &dz, true, &batch.keys, false, 1.0, &mut grads[0].w_k);
        gemm(
            1.0,
            &dz_sum,
            true,
            &batch.queries,
            false,
            1.0,
            &mut grads[0].w_q,
        );
    } else {
        let mut g_k = Matrix::zeros(wide, batch.keys.cols());
        let mut g_q = Matrix::zeros(wide, batch.queries.cols());
        gemm(1.0, &dz, true, &batch.keys, false, 0.0, &mut g_k);
        gemm(1.0, &dz_sum, true, &batch.queries, false, 0.0, &mut g_q);
        let (kd, qd) = (g_k.cols(), g_q.cols());
        for (k, g) in grads.iter_mut().enumerate() {
            axpy(
                1.0,
                &g_k.as_slice()[k * h * kd..(k + 1) * h * kd],
                g.w_k.as_mut_slice(),
            );
            axpy(
                1.0,
                &g_q.as_slice()[k * h * qd..(k + 1) * h * qd],
                g.w_q.as_mut_slice(),
            );
        }
    }
    for s in 0..b {
        let row = dz_sum.row(s);
        for (k, g) in grads.iter_mut().enumerate() {
            axpy(1.0, &row[k * h..(k + 1) * h], g.b.as_mut_slice());
        }
    }
}

impl SingleHeadParams {
    /// Batched [`SingleHeadParams::forward_trace`].
    pub fn forward_batch(&self, batch: &StepBatch) -> Result<BatchTrace> {
        let t = stacked_forward(&[self], batch)?;
        Ok(BatchTrace {
            hidden: t.hidden,
            weights: t.weights.into_iter().next().expect("one head"),
            outputs: t.outputs.into_iter().next().expect("one head"),
        })
    }

    /// Batched [`SingleHeadParams::accumulate_backward`] for parameter
    /// gradients; `upstream` has one row per step. The trace's hidden matrix
    /// is reused as scratch.
    pub fn accumulate_backward_batch(
        &self,
        batch: &StepBatch,
        trace: BatchTrace,
        upstream: &Matrix,
        grads: &mut SingleHeadParams,
    ) {
        stacked_backward(
            &[self],
            batch,
            trace.hidden,
            &[&trace.weights],
            core::slice::from_ref(upstream),
            &mut [grads],
        );
    }
}

impl ParamSet for SingleHeadParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w_q, &self.w_k, &self.w_v, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.b]
    }

    fn tensor_names(&self) -> Vec<String> {
        ["w_q", "w_k", "w_v", "b"]
            .iter()
            .map(|s| String::from(*s))
            .collect()
    }
}

/// Activations of a single-head forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleHeadTrace {
    /// `tanh(W_q q + W_k k_i + b)`, one row per candidate.
    pub hidden: Matrix,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gradients with respect to the inputs of an [`EnsembleStep`].
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub query: Vec<f64>,
    pub keys: Matrix,
    pub values: Matrix,
}

impl InputGrads {
    pub fn zeros_for(step: &EnsembleStep) -> Self {
        Self {
            query: vec![0.0; step.query.len()],
            keys: Matrix::zeros(step.keys.rows(), step.keys.cols()),
            values: Matrix::zeros(step.values.rows(), step.values.cols()),
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| math::exp(s - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Raw additive-attention scores, one per key row.
pub fn attention_scores(
    params: &SingleHeadParams,
    query: &[f64],
    keys: &Matrix,
) -> Result<Vec<f64>> {
    params.check_inputs(query, keys)?;
    let mut base = params.w_q.matvec(query);
    axpy(1.0, params.b.as_slice(), &mut base);
    let mut z = vec![0.0; params.hidden()];
    Ok((0..keys.rows())
        .map(|i| {
            params.w_k.matvec_into(keys.row(i), &mut z);
            z.iter()
                .zip(&base)
                .zip(params.w_v.as_slice())
                .map(|((zr, br), wr)| wr * math::tanh(zr + br))
                .sum()
        })
        .collect())
}

/// Pooling weights: the softmax of [`attention_scores`] across candidates.
pub fn attention_weights(
    params: &SingleHeadParams,
    query: &[f64],
    keys: &Matrix,
) -> Result<Vec<f64>> {
    Ok(softmax(&attention_scores(params, query, keys)?))
}

/// `sum_i weights[i] * values[i]`.
pub fn pool_single_head(weights: &[f64], values: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != values.rows() {
        return Err(Error::Shape {
            context: "pool_single_head",
            expected: (weights.len(), values.cols()),
            actual: values.shape(),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "pooling weights sum to {total}, expected 1"
        )));
    }
    let mut out = vec![0.0; values.cols()];
    for (i, &a) in weights.iter().enumerate() {
        axpy(a, values.row(i), &mut out);
    }
    Ok(out)
}

/// `P` additive-attention heads mixed by `W_0` (`d x d*P`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    pub heads: Vec<SingleHeadParams>,
    pub w_0: Matrix,
}

impl MultiHeadParams {
    /// Heads get independent fan-in initialisations; `W_0` starts as the
    /// average of the heads, `[I/P, ..., I/P]`.
    pub fn init<R: Rng + ?Sized>(
        num_heads: usize,
        hidden: usize,
        query_dim: usize,
        key_dim: usize,
        value_dim: usize,
        rng: &mut R,
    ) -> Self {
        let heads = (0..num_heads)
            .map(|_| SingleHeadParams::init(hidden, query_dim, key_dim, rng))
            .collect();
        let mut w_0 = Matrix::zeros(value_dim, value_dim * num_heads);
        for p in 0..num_heads {
            for r in 0..value_dim {
                w_0.set(r, p * value_dim + r, 1.0 / num_heads as f64);
            }
        }
        Self { heads, w_0 }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn value_dim(&self) -> usize {
        self.w_0.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.heads.first().ok_or_else(|| {
            Error::InvalidArgument("multi-head block needs at least one head".into())
        })?;
        for h in &self.heads {
            h.validate()?;
            if h.w_q.shape() != first.w_q.shape() || h.w_k.shape() != first.w_k.shape() {
                return Err(Error::Shape {
                    context: "multi-head head shapes",
                    expected: first.w_k.shape(),
                    actual: h.w_k.shape(),
                });
            }
        }
        let d = self.value_dim();
        self.w_0.ensure_shape("W_0", d, d * self.num_heads())
    }

    pub fn forward_trace(&self, step: &EnsembleStep) -> Result<MultiHeadTrace> {
        let d = step.value_dim();
        if self.w_0.cols() != d * self.num_heads() {
            return Err(Error::Shape {
                context: "W_0 vs value dim",
                expected: (d, d * self.num_heads()),
                actual: self.w_0.shape(),
            });
        }
        let heads = self
            .heads
            .iter()
            .map(|h| h.forward_trace(step))
            .collect::<Result<Vec<_>>>()?;
        let concat: Vec<f64> = heads
            .iter()
            .flat_map(|t| t.output.iter().copied())
            .collect();
        let output = self.w_0.matvec(&concat);
        Ok(MultiHeadTrace {
            heads,
            concat,
            output,
        })
    }

    pub fn accumulate_backward(
        &self,
        step: &EnsembleStep,
        trace: &MultiHeadTrace,
        upstream: &[f64],
        grads: &mut MultiHeadParams,
        mut inputs: Option<&mut InputGrads>,
    ) {
        let d = step.value_dim();
        grads.w_0.add_outer(1.0, upstream, &trace.concat);
        let mut dconcat = vec![0.0; trace.concat.len()];
        self.w_0.matvec_t_acc(upstream, &mut dconcat);
        for (p, head) in self.heads.iter().enumerate() {
            head.accumulate_backward(
                step,
                &trace.heads[p],
                &dconcat[p * d..(p + 1) * d],
                &mut grads.heads[p],
                inputs.as_deref_mut(),
            );
        }
    }
}

/// Activations of a batched multi-head pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadBatchTrace {
    /// Row `s * m + i`: every head's hidden activations side by side.
    pub hidden: Matrix,
    /// Per head, one row per step.
    pub weights: Vec<Matrix>,
    /// `[y^1, ..., y^P]`, one row per step.
    pub concat: Matrix,
    pub outputs: Matrix,
}

impl MultiHeadParams {
    pub fn forward_batch(&self, batch: &StepBatch) -> Result<MultiHeadBatchTrace> {
        let d = batch.values.cols();
        let p = self.num_heads();
        self.w_0.ensure_shape("W_0", d, d * p)?;
        let heads: Vec<&SingleHeadParams> = self.heads.iter().collect();
        let t = stacked_forward(&heads, batch)?;
        let mut concat = Matrix::zeros(batch.len(), d * p);
        for s in 0..batch.len() {
            let row = concat.row_mut(s);
            for (k, out) in t.outputs.iter().enumerate() {
                row[k * d..(k + 1) * d].copy_from_slice(out.row(s));
            }
        }
        let mut outputs = Matrix::zeros(batch.len(), d);
        gemm(1.0, &concat, false, &self.w_0, true, 0.0, &mut outputs);
        Ok(MultiHeadBatchTrace {
            hidden: t.hidden,
            weights: t.weights,
            concat,
            outputs,
        })
    }

    pub fn accumulate_backward_batch(
        &self,
        batch: &StepBatch,
        trace: MultiHeadBatchTrace,
        upstream: &Matrix,
        grads: &mut MultiHeadParams,
    ) {
        let d = batch.values.cols();
        gemm(
            1.0,
            upstream,
            true,
            &trace.concat,
            false,
            1.0,
            &mut grads.w_0,
        );
        let mut dconcat = Matrix::zeros(batch.len(), trace.concat.cols());
        gemm(1.0, upstream, false, &self.w_0, false, 0.0, &mut dconcat);
        let head_up: Vec<Matrix> = (0..self.num_heads())
            .map(|k| {
                let mut m = Matrix::zeros(batch.len(), d);
                for s in 0..batch.len() {
                    m.row_mut(s)
                        .copy_from_slice(&dconcat.row(s)[k * d..(k + 1) * d]);
                }
                m
            })
            .collect();
        let heads: Vec<&SingleHeadParams> = self.heads.iter().collect();
        let weights: Vec<&Matrix> = trace.weights.iter().collect();
        let mut g: Vec<&mut SingleHeadParams> = grads.heads.iter_mut().collect();
        stacked_backward(&heads, batch, trace.hidden, &weights, &head_up, &mut g);
    }
}

impl ParamSet for MultiHeadParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.heads.iter().flat_map(|h| h.tensors()).collect();
        out.push(&self.w_0);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self
            .heads
            .iter_mut()
            .flat_map(|h| h.tensors_mut())
            .collect();
        out.push(&mut self.w_0);
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .heads
            .iter()
            .enumerate()
            .flat_map(|(p, h)| {
                h.tensor_names()
                    .into_iter()
                    .map(move |n| format!("head{p}.{n}"))
            })
            .collect();
        out.push("w_0".into());
        out
    }
}

/// Activations of a multi-head forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadTrace {
    pub heads: Vec<SingleHeadTrace>,
    pub concat: Vec<f64>,
    pub output: Vec<f64>,
}

/// Concatenated per-head pools mixed by `W_0`.
pub fn forward_multi_head(params: &MultiHeadParams, step: &EnsembleStep) -> Result<Vec<f64>> {
    Ok(params.forward_trace(step)?.output)
}

/// Single-head backward pass (recomputes the forward activations).
pub fn backward(
    params: &SingleHeadParams,
    step: &EnsembleStep,
    upstream: &[f64],
) -> Result<(SingleHeadParams, InputGrads)> {
    check_upstream(upstream, step.value_dim())?;
    let trace = params.forward_trace(step)?;
    let mut grads = params.zeros_like();
    let mut inputs = InputGrads::zeros_for(step);
    params.accumulate_backward(step, &trace, upstream, &mut grads, Some(&mut inputs));
    Ok((grads, inputs))
}

/// Multi-head backward pass (recomputes the forward activations).
pub fn backward_multi_head(
    params: &MultiHeadParams,
    step: &EnsembleStep,
    upstream: &[f64],
) -> Result<(MultiHeadParams, InputGrads)> {
    check_upstream(upstream, params.value_dim())?;
    let trace = params.forward_trace(step)?;
    let mut grads = params.zeros_like();
    let mut inputs = InputGrads::zeros_for(step);
    params.accumulate_backward(step, &trace, upstream, &mut grads, Some(&mut inputs));
    Ok((grads, inputs))
}

fn check_upstream(upstream: &[f64], d: usize) -> Result<()> {
    if upstream.len() != d {
        return Err(Error::Shape {
            context: "upstream gradient",
            expected: (d, 1),
            actual: (upstream.len(), 1),
        });
    }
    Ok(())
}

/// Hidden size that keeps the attention parameter count roughly fixed as the
/// delay length grows: `round(600 / l)`.
pub fn hidden_for_delay(l: usize) -> usize {
    math::round(600.0 / l.max(1) as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_step<R: Rng>(m: usize, q: usize, k: usize, d: usize, rng: &mut R) -> EnsembleStep {
        EnsembleStep::new(
            (0..q).map(|_| rng::uniform(rng, -1.0, 1.0)).collect(),
            Matrix::uniform(m, k, 1.0, rng),
            Matrix::uniform(m, d, 2.0, rng),
        )
        .unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn batched_passes_match_per_step() {
        let mut r = rng::stream(4, "batch");
        let steps: Vec<EnsembleStep> = (0..5).map(|_| random_step(4, 3, 6, 2, &mut r)).collect();
        let refs: Vec<&EnsembleStep> = steps.iter().collect();
        let batch = StepBatch::new(&refs).unwrap();
        let up = Matrix::uniform(5, 2, 1.0, &mut r);

        let single = SingleHeadParams::init(7, 3, 6, &mut r);
        let trace = single.forward_batch(&batch).unwrap();
        let mut g_ref = single.zeros_like();
        for (s, step) in steps.iter().enumerate() {
            let t = single.forward_trace(step).unwrap();
            assert!(max_diff(&t.output, trace.outputs.row(s)) < 1e-12);
            single.accumulate_backward(step, &t, up.row(s), &mut g_ref, None);
        }
        let mut g_batch = single.zeros_like();
        single.accumulate_backward_batch(&batch, trace, &up, &mut g_batch);
        for (a, b) in g_batch.tensors().iter().zip(g_ref.tensors()) {
            assert!(max_diff(a.as_slice(), b.as_slice()) < 1e-12);
        }

        let multi = MultiHeadParams::init(3, 5, 3, 6, 2, &mut r);
        let trace = multi.forward_batch(&batch).unwrap();
        let mut g_ref = multi.zeros_like();
        for (s, step) in steps.iter().enumerate() {
            let t = multi.forward_trace(step).unwrap();
            assert!(max_diff(&t.output, trace.outputs.row(s)) < 1e-12);
            multi.accumulate_backward(step, &t, up.row(s), &mut g_ref, None);
        }
        let mut g_batch = multi.zeros_like();
        multi.accumulate_backward_batch(&batch, trace, &up, &mut g_batch);
        for (a, b) in g_batch.tensors().iter().zip(g_ref.tensors()) {
            assert!(max_diff(a.as_slice(), b.as_slice()) < 1e-12);
        }

        let odd = random_step(3, 3, 6, 2, &mut r);
        assert!(StepBatch::new(&[&steps[0], &odd]).is_err());
    }

    #[test]
    fn embed_identity_and_order() {
        assert_eq!(embed(&[[1.0, 2.0, 3.0]], 1).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            embed(&[[4.0, 5.0, 6.0], [1.0, 2.0, 3.0]], 2).unwrap(),
            vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0]
        );
        assert!(matches!(
            embed(&[[1.0]], 2),
            Err(Error::InsufficientHistory {
                needed: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn delay_buffer_keeps_newest_first() {
        let mut d = DelayEmbedding::new(2, 1).unwrap();
        d.push(&[1.0]).unwrap();
        assert!(d.embedded().is_err());
        d.push(&[2.0]).unwrap();
        d.push(&[3.0]).unwrap();
        assert_eq!(d.embedded().unwrap(), vec![3.0, 2.0]);
        assert!(d.push(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn singleton_and_identical_keys() {
        let mut r = rng::stream(3, "t");
        let p = SingleHeadParams::init(4, 3, 2, &mut r);
        let w =
            attention_weights(&p, &[0.1, 0.2, 0.3], &Matrix::uniform(1, 2, 1.0, &mut r)).unwrap();
        assert_eq!(w, vec![1.0]);
        let keys = Matrix::from_vec(4, 2, [0.5, -0.2].repeat(4)).unwrap();
        let w = attention_weights(&p, &[0.1, 0.2, 0.3], &keys).unwrap();
        for wi in w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_match_straight_line_transcription() {
        let mut r = rng::stream(11, "t");
        let p = SingleHeadParams::init(4, 3, 5, &mut r);
        let q: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let keys = Matrix::uniform(3, 5, 1.0, &mut r);
        let got = attention_weights(&p, &q, &keys).unwrap();

        let mut scores = [0.0; 3];
        for (i, s) in scores.iter_mut().enumerate() {
            for hh in 0..4 {
                let mut z = p.b.get(hh, 0);
                for c in 0..3 {
                    z += p.w_q.get(hh, c) * q[c];
                }
                for c in 0..5 {
                    z += p.w_k.get(hh, c) * keys.get(i, c);
                }
                *s += p.w_v.get(hh, 0) * libm::tanh(z);
            }
        }
        let e: Vec<f64> = scores.iter().map(|s| libm::exp(*s)).collect();
        let total: f64 = e.iter().sum();
        for i in 0..3 {
            assert!((got[i] - e[i] / total).abs() < 1e-14);
        }
    }

    #[test]
    fn pooling_examples() {
        let values =
            Matrix::from_vec(3, 3, vec![0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 6.0, 6.0, 6.0]).unwrap();
        assert_eq!(
            pool_single_head(&[1.0, 0.0, 0.0], &values).unwrap(),
            vec![0.0; 3]
        );
        let third = 1.0 / 3.0;
        let mean = pool_single_head(&[third, third, third], &values).unwrap();
        for v in mean {
            assert!((v - 3.0).abs() < 1e-12);
        }
        assert!(pool_single_head(&[0.5, 0.5], &values).is_err());
        assert!(pool_single_head(&[0.5, 0.1, 0.1], &values).is_err());
    }

    #[test]
    fn pooling_matches_direct_summation() {
        let mut r = rng::stream(5, "pool");
        let values = Matrix::uniform(4, 3, 10.0, &mut r);
        let raw: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r, 0.1, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let got = pool_single_head(&w, &values).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for i in 0..4 {
                s += w[i] * values.get(i, c);
            }
            assert!((got[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_head_reductions() {
        let mut r = rng::stream(8, "mh");
        let step = random_step(3, 4, 6, 2, &mut r);
        let mut mh = MultiHeadParams::init(1, 5, 4, 6, 2, &mut r);
        mh.w_0 = Matrix::identity(2);
        let single = mh.heads[0].forward_trace(&step).unwrap().output;
        assert_eq!(forward_multi_head(&mh, &step).unwrap(), single);
        mh.w_0.fill(0.0);
        assert_eq!(forward_multi_head(&mh, &step).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn multi_head_matches_composition() {
        let mut r = rng::stream(9, "mh2");
        let step = random_step(3, 4, 6, 2, &mut r);
        let mut mh = MultiHeadParams::init(2, 5, 4, 6, 2, &mut r);
        mh.w_0 = Matrix::uniform(2, 4, 1.0, &mut r);
        let mut concat = Vec::new();
        for h in &mh.heads {
            let w = attention_weights(h, &step.query, &step.keys).unwrap();
            concat.extend(pool_single_head(&w, &step.values).unwrap());
        }
        let expected = mh.w_0.matvec(&concat);
        let got = forward_multi_head(&mh, &step).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng::stream(10, "bw");
        let step = random_step(3, 4, 6, 3, &mut r);
        let p = SingleHeadParams::init(5, 4, 6, &mut r);
        let (g, ig) = backward(&p, &step, &[0.0; 3]).unwrap();
        assert!(g
            .tensors()
            .iter()
            .all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
        assert!(ig.query.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_model_has_no_parameter_gradient() {
        let mut r = rng::stream(12, "bw1");
        let step = random_step(1, 4, 6, 3, &mut r);
        let p = SingleHeadParams::init(5, 4, 6, &mut r);
        let (g, ig) = backward(&p, &step, &[1.0, -2.0, 0.5]).unwrap();
        assert!(g
            .tensors()
            .iter()
            .all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
        assert_eq!(ig.values.row(0), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn hidden_size_rule() {
        assert_eq!(hidden_for_delay(5), 120);
        assert_eq!(hidden_for_delay(1), 600);
        assert_eq!(hidden_for_delay(4), 150);
        assert_eq!(hidden_for_delay(6), 100);
    }
}
