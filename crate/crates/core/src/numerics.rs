//! Dense row-major matrices, the Adam optimiser, and a central-difference
//! gradient oracle.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::{Error, Result};

/// Row-major `f64` matrix. Vectors are stored as `n x 1` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "Matrix::from_vec",
                expected: (rows, cols),
                actual: (data.len(), 1),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Matrix::from_vec entry {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| crate::rng::uniform(rng, -scale, scale))
            .collect();
        Self { rows, cols, data }
    }

    /// Scale-preserving initialisation: uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_fan_in<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        Self::uniform(rows, cols, 1.0 / math::sqrt(fan_in.max(1) as f64), rng)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn ensure_shape(&self, context: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::Shape {
                context,
                expected: (rows, cols),
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out = self * x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `out += self^T * y`.
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += alpha * x y^T`.
    pub fn add_outer(&mut self, alpha: f64, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            let a = alpha * xr;
            if a != 0.0 {
                axpy(a, y, self.row_mut(r));
            }
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(dot(&self.data, &self.data))
    }
}

/// Dot product with four running sums; summation order is fixed so results
/// are reproducible across builds.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally
/// transposes. A `beta` of zero ignores the prior contents of `c`.
pub fn gemm(alpha: f64, a: &Matrix, a_t: bool, b: &Matrix, b_t: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if a_t {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if b_t {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if b_t { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: the shapes above match the buffers: every index
    // i * rs + j * cs with i < rows, j < cols of each operand lies inside
    // its row-major buffer, and `c` is borrowed mutably for the call.
    #[allow(unsafe_code)]
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A model whose trainable tensors can be enumerated in a fixed order.
///
/// Gradients are stored in a value of the same type, so a `ParamSet` doubles
/// as its own gradient accumulator.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    fn tensor_names(&self) -> Vec<String>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn reset(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

/// Hyperparameters for [`AdamState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied directly to the parameter.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid Adam configuration {self:?}"
            )))
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step_count: 0,
            config,
        }
    }

    /// One Adam update of `param` in place. Bias correction uses `step_count + 1`.
    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix, name: &str) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m.shape() {
            return Err(Error::Shape {
                context: "adam_step",
                expected: self.m.shape(),
                actual: grad.shape(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            weight_decay: wd,
        } = self.config;
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - math::powi(b1, t);
        let bc2 = 1.0 - math::powi(b2, t);
        let p = param.as_mut_slice();
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(grad.as_slice()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * (m_hat / (math::sqrt(v_hat) + eps) + wd * *pi);
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(param: &Matrix, grad: &Matrix, state: &mut AdamState) -> Result<Matrix> {
    let mut p = param.clone();
    state.step(&mut p, grad, "param")?;
    Ok(p)
}

/// Adam over every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
    names: Vec<String>,
}

impl Adam {
    pub fn new<P: ParamSet>(params: &P, config: AdamConfig) -> Self {
        let states = params
            .tensors()
            .iter()
            .map(|t| AdamState::new(t.rows(), t.cols(), config))
            .collect();
        Self {
            states,
            names: params.tensor_names(),
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        for ((state, p), (g, name)) in self
            .states
            .iter_mut()
            .zip(params.tensors_mut())
            .zip(gs.into_iter().zip(&self.names))
        {
            state.step(p, g, name)?;
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step_count)
    }
}

/// Central-difference estimate of `d loss / d param`, one entry at a time.
pub fn finite_difference_gradient<F>(mut loss_fn: F, param: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step h must be positive, got {h}"
        )));
    }
    let mut probe = param.clone();
    let mut grad = Matrix::zeros(param.rows(), param.cols());
    for i in 0..param.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let minus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at entry {i}")));
        }
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Finite-difference gradients for every tensor of a [`ParamSet`].
pub fn finite_difference_param_set<P, F>(params: &P, mut loss_fn: F, h: f64) -> Result<P>
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    let mut out = params.zeros_like();
    let n = params.tensors().len();
    for t in 0..n {
        let base = params.tensors()[t].clone();
        let g = finite_difference_gradient(
            |m| {
                let mut probe = params.clone();
                *probe.tensors_mut()[t] = m.clone();
                loss_fn(&probe)
            },
            &base,
            h,
        )?;
        *out.tensors_mut()[t] = g;
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)` in the Frobenius norm; zero when both vanish.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut diff = a.clone();
    diff.add_scaled(-1.0, b);
    let denom = a.frobenius_norm().max(b.frobenius_norm());
    if denom == 0.0 {
        0.0
    } else {
        diff.frobenius_norm() / denom
    }
}

/// Solves `a x = b` for symmetric positive-definite `a` (Cholesky). `b` may
/// hold several right-hand sides as columns.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    a.ensure_shape("solve_spd matrix", n, n)?;
    if b.rows() != n {
        return Err(Error::Shape {
            context: "solve_spd rhs",
            expected: (n, b.cols()),
            actual: b.shape(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l.set(i, i, math::sqrt(s));
            } else {
                let v = s / l.get(j, j);
                l.set(i, j, v);
            }
        }
    }
    let k = b.cols();
    let mut x = b.clone();
    for c in 0..k {
        // forward: L y = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for j in 0..i {
                s -= l.get(i, j) * x.get(j, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for j in i + 1..n {
                s -= l.get(j, i) * x.get(j, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}
