//! Open- and closed-loop forecasting of the non-stationary Lorenz system with
//! the stationary candidate ensemble.
//!
//! At target index `j` the attention inputs are
//! * query `q_j = u_{j-1}`,
//! * key of candidate `i`: its previous one-step error `F_{j-1}^(i) - u_{j-1}`,
//! * value of candidate `i`: its forecast `F_j^(i)` integrated from `u_{j-1}`,
//!
//! with queries and keys delay-embedded over `l` steps. Open loop takes
//! `u_{j-1}` from the truth; closed loop feeds back the pooled forecast.
//! Forming `l` keys needs `l + 1` past states, so closed-loop forecasts are
//! seeded with `l + 1` true samples.

use alloc::vec;
use alloc::vec::Vec;

use super::{FeedForwardNet, LinearPooler, Trainable};
use crate::attention::{DelayEmbedding, EnsembleStep, SingleHeadParams};
use crate::lorenz::{CandidateEnsemble, State, Trajectory, SAMPLE_DT};
use crate::numerics::Matrix;
use crate::{Error, Result};

/// How a trained attention model is used during a multi-step forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingVariant {
    /// Attention weights recomputed at every step.
    Additive,
    /// Weights frozen at their step-0 values.
    FixedAttention,
    /// Only the candidate with the largest step-0 weight.
    BestInitial,
}

/// Methods compared in the Lorenz experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Linear,
    FeedForward,
    Additive,
    FixedAttention,
    BestInitial,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Linear,
        MethodKind::FeedForward,
        MethodKind::Additive,
        MethodKind::FixedAttention,
        MethodKind::BestInitial,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Linear => "linear",
            MethodKind::FeedForward => "ffnn",
            MethodKind::Additive => "additive",
            MethodKind::FixedAttention => "fixed",
            MethodKind::BestInitial => "best_initial",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == name)
    }

    pub fn variant(&self) -> Option<PoolingVariant> {
        match self {
            MethodKind::Additive => Some(PoolingVariant::Additive),
            MethodKind::FixedAttention => Some(PoolingVariant::FixedAttention),
            MethodKind::BestInitial => Some(PoolingVariant::BestInitial),
            _ => None,
        }
    }
}

/// A trained model that produces one-step Lorenz forecasts.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    Attention(SingleHeadParams),
    Linear(LinearPooler),
    FeedForward(FeedForwardNet),
}

impl Forecaster {
    /// Delay length of the model's embedded inputs.
    pub fn delay(&self) -> usize {
        match self {
            Forecaster::Attention(p) => p.query_dim() / 3,
            Forecaster::FeedForward(n) => n.input_dim() / 3,
            Forecaster::Linear(_) => 1,
        }
    }
}

/// Rolling construction of queries, keys, and values from observed states.
#[derive(Debug, Clone)]
pub struct LorenzFeatures {
    ensemble: CandidateEnsemble,
    states: DelayEmbedding,
    keys: Vec<DelayEmbedding>,
    forecasts: Option<Vec<State>>,
}

impl LorenzFeatures {
    pub fn new(ensemble: &CandidateEnsemble, l: usize) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::InvalidArgument("candidate ensemble is empty".into()));
        }
        Ok(Self {
            ensemble: ensemble.clone(),
            states: DelayEmbedding::new(l, 3)?,
            keys: (0..ensemble.len())
                .map(|_| DelayEmbedding::new(l, 3))
                .collect::<Result<_>>()?,
            forecasts: None,
        })
    }

    pub fn delay(&self) -> usize {
        self.states.length()
    }

    /// Observes `u_{j-1}` (true or forecast) at time `t` and integrates the
    /// candidates forward from it.
    pub fn observe(&mut self, s: &State, t: f64) -> Result<()> {
        if let Some(prev) = &self.forecasts {
            for (buf, f) in self.keys.iter_mut().zip(prev) {
                buf.push(&[f[0] - s[0], f[1] - s[1], f[2] - s[2]])?;
            }
        }
        self.states.push(s)?;
        self.forecasts = Some(self.ensemble.forecasts(s, t)?);
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.keys[0].is_ready()
    }

    /// Candidate forecasts for the next index.
    pub fn forecasts(&self) -> Result<&[State]> {
        self.forecasts.as_deref().ok_or(Error::InsufficientHistory {
            needed: 1,
            available: 0,
        })
    }

    /// Attention inputs for the next index.
    pub fn step(&self) -> Result<EnsembleStep> {
        if !self.is_ready() {
            return Err(Error::InsufficientHistory {
                needed: self.delay() + 1,
                available: self.states.history().count(),
            });
        }
        let l = self.delay();
        let m = self.keys.len();
        let mut keys = Matrix::zeros(m, 3 * l);
        for (i, buf) in self.keys.iter().enumerate() {
            buf.embedded_into(keys.row_mut(i))?;
        }
        let f = self.forecasts()?;
        let values = Matrix::from_vec(m, 3, f.iter().flat_map(|s| s.iter().copied()).collect())?;
        EnsembleStep::new(self.states.embedded()?, keys, values)
    }

    /// Delay vector of past states (feed-forward input).
    pub fn state_embedding(&self) -> Result<Vec<f64>> {
        self.states.embedded()
    }

    /// Flattened candidate forecasts (linear pooler input).
    pub fn stacked_forecasts(&self) -> Result<Vec<f64>> {
        Ok(self
            .forecasts()?
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect())
    }
}

/// One-step training samples built from a true trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LorenzTrainingSet {
    pub steps: Vec<EnsembleStep>,
    pub state_embeddings: Vec<Vec<f64>>,
    pub stacked_forecasts: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Trajectory index of each target.
    pub target_indices: Vec<usize>,
}

impl LorenzTrainingSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Every target `u_j` with `j >= l + 1` together with its inputs.
pub fn lorenz_training_set(
    truth: &Trajectory,
    ensemble: &CandidateEnsemble,
    l: usize,
) -> Result<LorenzTrainingSet> {
    let mut feats = LorenzFeatures::new(ensemble, l)?;
    let mut set = LorenzTrainingSet {
        steps: Vec::new(),
        state_embeddings: Vec::new(),
        stacked_forecasts: Vec::new(),
        targets: Vec::new(),
        target_indices: Vec::new(),
    };
    for j in 0..truth.len().saturating_sub(1) {
        feats.observe(&truth.states[j], truth.time(j))?;
        if feats.is_ready() {
            set.steps.push(feats.step()?);
            set.state_embeddings.push(feats.state_embedding()?);
            set.stacked_forecasts.push(feats.stacked_forecasts()?);
            set.targets.push(truth.states[j + 1].to_vec());
            set.target_indices.push(j + 1);
        }
    }
    if set.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: l + 2,
            available: truth.len(),
        });
    }
    Ok(set)
}

fn predict_with(
    model: &Forecaster,
    feats: &LorenzFeatures,
    variant: PoolingVariant,
    frozen: &mut Option<Vec<f64>>,
) -> Result<(State, Option<Vec<f64>>)> {
    let out = match model {
        Forecaster::Attention(params) => {
            let step = feats.step()?;
            let weights = match frozen {
                Some(w) => w.clone(),
                None => {
                    let w = params.forward_trace(&step)?.weights;
                    match variant {
                        PoolingVariant::Additive => w,
                        PoolingVariant::FixedAttention => {
                            *frozen = Some(w.clone());
                            w
                        }
                        PoolingVariant::BestInitial => {
                            let mut onehot = vec![0.0; w.len()];
                            onehot[argmax(&w)] = 1.0;
                            *frozen = Some(onehot.clone());
                            onehot
                        }
                    }
                }
            };
            let y = crate::attention::pool_single_head(&weights, &step.values)?;
            return Ok(([y[0], y[1], y[2]], Some(weights)));
        }
        Forecaster::Linear(p) => p.predict(&feats.stacked_forecasts()?)?,
        Forecaster::FeedForward(n) => n.predict(&feats.state_embedding()?)?,
    };
    Ok(([out[0], out[1], out[2]], None))
}

/// Index of the largest entry (first on ties).
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Result of an autonomous multi-step forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopForecast {
    pub predictions: Vec<State>,
    /// Pooling weights used at each step (`steps x M`); attention models only.
    pub weights: Option<Matrix>,
    /// Set when a candidate or the pooled forecast blew up and the forecast
    /// was cut short.
    pub truncated: bool,
}

/// Autonomous forecast of `horizon` steps seeded with `l + 1` true samples
/// (`history`, oldest first). `t_first` is the time of the first forecast.
pub fn closed_loop_forecast(
    model: &Forecaster,
    variant: PoolingVariant,
    ensemble: &CandidateEnsemble,
    history: &[State],
    t_first: f64,
    horizon: usize,
) -> Result<ClosedLoopForecast> {
    let l = model.delay();
    if history.len() != l + 1 {
        return Err(Error::InsufficientHistory {
            needed: l + 1,
            available: history.len(),
        });
    }
    let mut feats = LorenzFeatures::new(ensemble, l)?;
    let n_hist = history.len();
    for (k, s) in history.iter().enumerate() {
        feats.observe(s, t_first - (n_hist - k) as f64 * SAMPLE_DT)?;
    }
    let mut predictions = Vec::with_capacity(horizon);
    let mut weight_rows: Vec<f64> = Vec::new();
    let mut has_weights = false;
    let mut frozen = None;
    let mut truncated = false;
    for step in 0..horizon {
        let (y, w) = match predict_with(model, &feats, variant, &mut frozen) {
            Ok(v) => v,
            Err(Error::BlowUp { .. }) | Err(Error::NonFinite(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if !y.iter().all(|v| v.is_finite()) {
            truncated = true;
            break;
        }
        if let Some(w) = w {
            has_weights = true;
            weight_rows.extend_from_slice(&w);
        }
        predictions.push(y);
        if step + 1 < horizon {
            match feats.observe(&y, t_first + step as f64 * SAMPLE_DT) {
                Ok(()) => {}
                Err(Error::BlowUp { .. }) => {
                    truncated = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    let weights = if has_weights {
        Some(Matrix::from_vec(
            predictions.len(),
            ensemble.len(),
            weight_rows,
        )?)
    } else {
        None
    };
    Ok(ClosedLoopForecast {
        predictions,
        weights,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopForecast {
    pub predictions: Vec<State>,
    pub weights: Option<Matrix>,
}

/// One-step forecasts of `truth[start..start+count]`, each using only truth
/// strictly before its index.
pub fn open_loop_forecast(
    model: &Forecaster,
    ensemble: &CandidateEnsemble,
    truth: &Trajectory,
    start: usize,
    count: usize,
) -> Result<OpenLoopForecast> {
    let l = model.delay();
    if start < l + 1 || start + count > truth.len() {
        return Err(Error::InsufficientHistory {
            needed: l + 1,
            available: start.min(truth.len()),
        });
    }
    let mut feats = LorenzFeatures::new(ensemble, l)?;
    for j in start - l - 1..start {
        feats.observe(&truth.states[j], truth.time(j))?;
    }
    let mut predictions = Vec::with_capacity(count);
    let mut weight_rows = Vec::new();
    for j in start..start + count {
        let (y, w) = predict_with(model, &feats, PoolingVariant::Additive, &mut None)?;
        predictions.push(y);
        if let Some(w) = w {
            weight_rows.extend(w);
        }
        if j + 1 < start + count {
            feats.observe(&truth.states[j], truth.time(j))?;
        }
    }
    let weights = if weight_rows.is_empty() {
        None
    } else {
        Some(Matrix::from_vec(count, ensemble.len(), weight_rows)?)
    };
    Ok(OpenLoopForecast {
        predictions,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorenz::{integrate, LorenzParams};
    use crate::rng;

    fn truth() -> Trajectory {
        integrate(&[1.0, 2.0, 20.0], 0.0, 60, &LorenzParams::non_stationary()).unwrap()
    }

    #[test]
    fn features_need_l_plus_one_observations() {
        let ens = CandidateEnsemble::default();
        let mut f = LorenzFeatures::new(&ens, 3).unwrap();
        let tr = truth();
        for j in 0..3 {
            f.observe(&tr.states[j], tr.time(j)).unwrap();
            assert!(!f.is_ready());
        }
        f.observe(&tr.states[3], tr.time(3)).unwrap();
        let step = f.step().unwrap();
        assert_eq!(step.query.len(), 9);
        assert_eq!(step.keys.shape(), (11, 9));
        assert_eq!(step.values.shape(), (11, 3));
        // newest-first query
        assert_eq!(&step.query[..3], &tr.states[3]);
        assert_eq!(&step.query[6..], &tr.states[1]);
        // key_i = F_{j-1}^(i) - u_{j-1}, with F_{j-1} integrated from u_{j-2}
        let f2 = ens.forecasts(&tr.states[2], tr.time(2)).unwrap();
        for i in 0..11 {
            for c in 0..3 {
                assert_eq!(step.keys.get(i, c), f2[i][c] - tr.states[3][c]);
            }
        }
    }

    #[test]
    fn delay_embedding_matches_index_assembly() {
        let ens = CandidateEnsemble::default();
        let tr = truth();
        let set = lorenz_training_set(&tr, &ens, 3).unwrap();
        let j = set.target_indices[5];
        let step = &set.steps[5];
        for tau in 0..3 {
            for c in 0..3 {
                assert_eq!(step.query[3 * tau + c], tr.states[j - 1 - tau][c]);
            }
            let f = ens.forecasts(&tr.states[j - 2 - tau], 0.0).unwrap();
            for i in 0..11 {
                for c in 0..3 {
                    assert_eq!(
                        step.keys.get(i, 3 * tau + c),
                        f[i][c] - tr.states[j - 1 - tau][c]
                    );
                }
            }
        }
        assert_eq!(set.target_indices[0], 4);
    }

    #[test]
    fn closed_loop_requires_exact_history() {
        let mut r = rng::stream(1, "t");
        let model = Forecaster::Attention(SingleHeadParams::init(4, 6, 6, &mut r));
        let ens = CandidateEnsemble::default();
        let tr = truth();
        assert!(closed_loop_forecast(
            &model,
            PoolingVariant::Additive,
            &ens,
            &tr.states[..2],
            0.3,
            5
        )
        .is_err());
        let out = closed_loop_forecast(
            &model,
            PoolingVariant::Additive,
            &ens,
            &tr.states[..3],
            0.3,
            5,
        )
        .unwrap();
        assert_eq!(out.predictions.len(), 5);
        let w = out.weights.unwrap();
        for s in 0..5 {
            assert!((w.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
