//! Stationary and non-stationary Lorenz '63 systems.
//!
//! The true system has a Rayleigh parameter that oscillates in time,
//! `rho(t) = 38 - 10 cos(2 pi t / T)`. The candidate ensemble consists of
//! eleven stationary systems with `rho in {28, 30, ..., 48}`. Everything is
//! integrated with classical RK4 at `dt = 0.01` and sampled every ten steps.

use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng;
use crate::{Error, Result};

pub type State = [f64; 3];

pub const SIGMA: f64 = 10.0;
pub const BETA: f64 = 8.0 / 3.0;
/// Oscillation period of the true Rayleigh parameter.
pub const RHO_PERIOD: f64 = 1.577132;
pub const INTEGRATION_DT: f64 = 0.01;
pub const SUBSTEPS_PER_SAMPLE: usize = 10;
pub const SAMPLE_DT: f64 = INTEGRATION_DT * SUBSTEPS_PER_SAMPLE as f64;

/// Rayleigh parameter of the true, non-stationary system.
pub fn rho_true(t: f64) -> f64 {
    38.0 - 10.0 * math::cos(core::f64::consts::TAU * t / RHO_PERIOD)
}

/// Time dependence of the Rayleigh parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Constant(f64),
    /// `38 - 10 cos(2 pi t / T)`.
    Sinusoidal,
}

impl Rho {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Rho::Constant(r) => r,
            Rho::Sinusoidal => rho_true(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub beta: f64,
    pub rho: Rho,
}

impl LorenzParams {
    pub fn stationary(rho: f64) -> Self {
        Self {
            sigma: SIGMA,
            beta: BETA,
            rho: Rho::Constant(rho),
        }
    }

    pub fn non_stationary() -> Self {
        Self {
            sigma: SIGMA,
            beta: BETA,
            rho: Rho::Sinusoidal,
        }
    }
}

#[inline]
pub fn lorenz_derivative(u: &State, t: f64, p: &LorenzParams) -> State {
    let rho = p.rho.at(t);
    [
        p.sigma * (u[1] - u[0]),
        u[0] * (rho - u[2]) - u[1],
        u[0] * u[1] - p.beta * u[2],
    ]
}

#[inline]
fn add_scaled(u: &State, k: &State, s: f64) -> State {
    [u[0] + s * k[0], u[1] + s * k[1], u[2] + s * k[2]]
}

/// Classical RK4 step; `rho` is evaluated at the stage times.
pub fn rk4_step(u: &State, t: f64, dt: f64, p: &LorenzParams) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "dt must be positive, got {dt}"
        )));
    }
    let half = 0.5 * dt;
    let k1 = lorenz_derivative(u, t, p);
    let k2 = lorenz_derivative(&add_scaled(u, &k1, half), t + half, p);
    let k3 = lorenz_derivative(&add_scaled(u, &k2, half), t + half, p);
    let k4 = lorenz_derivative(&add_scaled(u, &k3, dt), t + dt, p);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = u[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::BlowUp { t: t + dt })
    }
}

/// How a time-varying `rho` enters the substeps of one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoSampling {
    /// Evaluated at every RK4 stage time.
    StageTimes,
    /// Held at its value at the start of the interval.
    #[default]
    HeldPerSample,
}

impl RhoSampling {
    pub fn name(&self) -> &'static str {
        match self {
            RhoSampling::StageTimes => "stage_times",
            RhoSampling::HeldPerSample => "held_per_sample",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [RhoSampling::StageTimes, RhoSampling::HeldPerSample]
            .into_iter()
            .find(|s| s.name() == name)
    }
}

/// Advances one sampling interval (ten RK4 substeps).
pub fn advance_sample(u: &State, t: f64, p: &LorenzParams) -> Result<State> {
    advance_sample_with(u, t, p, RhoSampling::StageTimes)
}

pub fn advance_sample_with(
    u: &State,
    t: f64,
    p: &LorenzParams,
    sampling: RhoSampling,
) -> Result<State> {
    let held;
    let p = match sampling {
        RhoSampling::StageTimes => p,
        RhoSampling::HeldPerSample => {
            held = LorenzParams {
                rho: Rho::Constant(p.rho.at(t)),
                ..*p
            };
            &held
        }
    };
    let mut s = *u;
    for k in 0..SUBSTEPS_PER_SAMPLE {
        s = rk4_step(&s, t + k as f64 * INTEGRATION_DT, INTEGRATION_DT, p)?;
    }
    Ok(s)
}

/// Uniformly sampled multivariate time series; `states[j]` is at `t0 + j*dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sub-trajectory `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            t0: self.time(start),
            dt: self.dt,
            states: self.states[start..start + len].to_vec(),
        }
    }
}

/// Records `n_samples` states after `u0`, starting the clock at `t0`.
pub fn integrate(u0: &State, t0: f64, n_samples: usize, p: &LorenzParams) -> Result<Trajectory> {
    integrate_with(u0, t0, n_samples, p, RhoSampling::StageTimes)
}

pub fn integrate_with(
    u0: &State,
    t0: f64,
    n_samples: usize,
    p: &LorenzParams,
    sampling: RhoSampling,
) -> Result<Trajectory> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let mut states = Vec::with_capacity(n_samples);
    let mut u = *u0;
    for j in 0..n_samples {
        u = advance_sample_with(&u, t0 + j as f64 * SAMPLE_DT, p, sampling)?;
        states.push(u);
    }
    Ok(Trajectory {
        t0: t0 + SAMPLE_DT,
        dt: SAMPLE_DT,
        states,
    })
}

/// Rayleigh parameters of the stationary candidate ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEnsemble {
    pub rho_values: Vec<f64>,
}

impl Default for CandidateEnsemble {
    /// `{28, 30, ..., 48}`.
    fn default() -> Self {
        Self {
            rho_values: (0..11).map(|m| 28.0 + 2.0 * m as f64).collect(),
        }
    }
}

impl CandidateEnsemble {
    pub fn len(&self) -> usize {
        self.rho_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_values.is_empty()
    }

    /// Every candidate's one-sample forecast from `u`.
    pub fn forecasts(&self, u: &State, t: f64) -> Result<Vec<State>> {
        self.rho_values
            .iter()
            .map(|&rho| candidate_one_step(u, t, rho))
            .collect()
    }
}

/// One-sample forecast of the stationary candidate with Rayleigh parameter `rho_m`.
pub fn candidate_one_step(u: &State, t: f64, rho_m: f64) -> Result<State> {
    advance_sample(u, t, &LorenzParams::stationary(rho_m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub t_transient: f64,
    pub t_train: f64,
    pub t_val: f64,
    pub n_val_segments: usize,
    pub segment_len: usize,
    /// Extra validation samples recorded before the first segment so every
    /// segment has warmup history.
    pub warmup: usize,
    pub rho_sampling: RhoSampling,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            t_transient: 100.0,
            t_train: 400.0,
            t_val: 2560.0,
            n_val_segments: 200,
            segment_len: 128,
            warmup: 8,
            rho_sampling: RhoSampling::HeldPerSample,
        }
    }
}

/// Training trajectory plus the validation run it is sliced from.
#[derive(Debug, Clone, PartialEq)]
pub struct LorenzDataset {
    pub train: Trajectory,
    /// `warmup + t_val/dt` samples; segment `k` starts at `warmup + k*stride`.
    pub validation: Trajectory,
    pub segment_starts: Vec<usize>,
    pub segment_len: usize,
}

impl LorenzDataset {
    /// Truth for validation segment `k`.
    pub fn segment(&self, k: usize) -> Trajectory {
        self.validation
            .window(self.segment_starts[k], self.segment_len)
    }

    /// The `n` true samples preceding segment `k`, oldest first.
    pub fn segment_history(&self, k: usize, n: usize) -> Result<Trajectory> {
        let start = self.segment_starts[k];
        if n > start {
            return Err(Error::InsufficientHistory {
                needed: n,
                available: start,
            });
        }
        Ok(self.validation.window(start - n, n))
    }
}

fn sample_count(duration: f64) -> usize {
    math::round(duration / SAMPLE_DT) as usize
}

/// Initial condition drawn from `[-10,10] x [-15,15] x [10,40]`.
pub fn random_initial_condition<R: Rng + ?Sized>(rng: &mut R) -> State {
    [
        rng::uniform(rng, -10.0, 10.0),
        rng::uniform(rng, -15.0, 15.0),
        rng::uniform(rng, 10.0, 40.0),
    ]
}

/// Runs the transient from `t = -t_transient` and records `n` samples from `t = 0`.
fn record_run(
    u0: &State,
    t_transient: f64,
    n: usize,
    p: &LorenzParams,
    sampling: RhoSampling,
) -> Result<Trajectory> {
    let n_transient = sample_count(t_transient);
    let start = if n_transient > 0 {
        let tr = integrate_with(
            u0,
            -(n_transient as f64) * SAMPLE_DT,
            n_transient,
            p,
            sampling,
        )?;
        tr.states[n_transient - 1]
    } else {
        *u0
    };
    let mut states = Vec::with_capacity(n);
    states.push(start);
    if n > 1 {
        states.extend(integrate_with(&start, 0.0, n - 1, p, sampling)?.states);
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: SAMPLE_DT,
        states,
    })
}

/// Generates the training trajectory and the validation run with evenly spaced segments.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<LorenzDataset> {
    if cfg.n_val_segments == 0 || cfg.segment_len == 0 {
        return Err(Error::InvalidArgument(
            "need at least one non-empty validation segment".into(),
        ));
    }
    let p = LorenzParams::non_stationary();
    let mut rng = rng::stream(cfg.seed, "lorenz/initial-conditions");
    let u_train = random_initial_condition(&mut rng);
    let u_val = random_initial_condition(&mut rng);
    let train = record_run(
        &u_train,
        cfg.t_transient,
        sample_count(cfg.t_train),
        &p,
        cfg.rho_sampling,
    )?;
    let n_val = sample_count(cfg.t_val);
    let validation = record_run(
        &u_val,
        cfg.t_transient,
        cfg.warmup + n_val,
        &p,
        cfg.rho_sampling,
    )?;
    let stride = n_val / cfg.n_val_segments;
    if stride < cfg.segment_len {
        return Err(Error::InvalidArgument(alloc::format!(
            "validation run of {n_val} samples cannot hold {} segments of {}",
            cfg.n_val_segments,
            cfg.segment_len
        )));
    }
    let segment_starts = (0..cfg.n_val_segments)
        .map(|k| cfg.warmup + k * stride)
        .collect();
    Ok(LorenzDataset {
        train,
        validation,
        segment_starts,
        segment_len: cfg.segment_len,
    })
}
