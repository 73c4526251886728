//! Training and closed-loop validation for the non-stationary Lorenz task.

use alloc::format;
use alloc::vec::Vec;

use super::{
    closed_loop_forecast, lorenz_training_set, train, ClosedLoopForecast, FeedForwardNet,
    Forecaster, LinearPooler, MethodKind, Mse, PoolingVariant, TrainConfig, TrainReport,
};
use crate::attention::SingleHeadParams;
use crate::evaluation::{pearson, valid_time_from_errors, ValidTimeConfig};
use crate::lorenz::{rho_true, CandidateEnsemble, LorenzDataset, State, Trajectory};
use crate::rng;
use crate::{Error, Result};

/// Hyperparameters of one trained Lorenz model. `hidden` is ignored by the
/// linear pooler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzModelSpec {
    pub kind: MethodKind,
    pub delay: usize,
    pub hidden: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLorenzModel {
    pub spec: LorenzModelSpec,
    pub model: Forecaster,
    pub report: TrainReport,
}

/// Trains one model with Adam on one-step MSE. Fixed-attention and
/// best-initial specs train the additive model they are evaluated with.
/// Initialisation and shuffling use the streams `lorenz/init/{kind}/l{l}`
/// and `lorenz/shuffle/{kind}/l{l}`.
pub fn train_lorenz_model(
    spec: &LorenzModelSpec,
    train_truth: &Trajectory,
    ensemble: &CandidateEnsemble,
    seed: u64,
) -> Result<TrainedLorenzModel> {
    let kind = match spec.kind {
        MethodKind::FixedAttention | MethodKind::BestInitial => MethodKind::Additive,
        k => k,
    };
    let l = spec.delay;
    let set = lorenz_training_set(train_truth, ensemble, l)?;
    let mut init = rng::stream(seed, &format!("lorenz/init/{}/l{l}", kind.name()));
    let mut shuffle = rng::stream(seed, &format!("lorenz/shuffle/{}/l{l}", kind.name()));
    let no_guard = |_| Ok(());
    let (model, report) = match kind {
        MethodKind::Additive => {
            let mut p = SingleHeadParams::init(spec.hidden, 3 * l, 3 * l, &mut init);
            let r = train(
                &mut p,
                &set.steps,
                &set.targets,
                &Mse,
                &spec.train,
                &mut shuffle,
                no_guard,
            )?;
            (Forecaster::Attention(p), r)
        }
        MethodKind::Linear => {
            if l != 1 {
                return Err(Error::InvalidArgument(
                    "the Lorenz linear pooler uses the current forecasts only (l = 1)".into(),
                ));
            }
            let mut p = LinearPooler::averaging(ensemble.len(), 3, l);
            let r = train(
                &mut p,
                &set.stacked_forecasts,
                &set.targets,
                &Mse,
                &spec.train,
                &mut shuffle,
                no_guard,
            )?;
            (Forecaster::Linear(p), r)
        }
        MethodKind::FeedForward => {
            let mut p = FeedForwardNet::init(3 * l, spec.hidden, 3, &mut init);
            let r = train(
                &mut p,
                &set.state_embeddings,
                &set.targets,
                &Mse,
                &spec.train,
                &mut shuffle,
                no_guard,
            )?;
            (Forecaster::FeedForward(p), r)
        }
        MethodKind::FixedAttention | MethodKind::BestInitial => unreachable!(),
    };
    Ok(TrainedLorenzModel {
        spec: *spec,
        model,
        report,
    })
}

/// Closed-loop forecast of one validation segment and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub segment: usize,
    /// Time of the first forecast sample.
    pub t_first: f64,
    pub forecast: ClosedLoopForecast,
    /// `|yhat_j - u_j|^2` per step; NaN after a truncation.
    pub sq_errors: Vec<f64>,
    pub valid_time: f64,
}

/// Forecasts segment `k` from its `l + 1` preceding true samples.
pub fn forecast_segment(
    model: &Forecaster,
    variant: PoolingVariant,
    ensemble: &CandidateEnsemble,
    data: &LorenzDataset,
    k: usize,
    vt: &ValidTimeConfig,
) -> Result<SegmentResult> {
    let truth = data.segment(k);
    let history = data.segment_history(k, model.delay() + 1)?;
    let t_first = truth.t0;
    let forecast = closed_loop_forecast(
        model,
        variant,
        ensemble,
        &history.states,
        t_first,
        truth.len(),
    )?;
    let sq_errors: Vec<f64> = truth
        .states
        .iter()
        .enumerate()
        .map(|(j, u)| match forecast.predictions.get(j) {
            Some(y) => squared_distance(y, u),
            None => f64::NAN,
        })
        .collect();
    let valid_time = valid_time_from_errors(sq_errors.iter().copied(), vt);
    Ok(SegmentResult {
        segment: k,
        t_first,
        forecast,
        sq_errors,
        valid_time,
    })
}

fn squared_distance(a: &State, b: &State) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pooling variant a Lorenz method is evaluated with.
pub fn variant_for(kind: MethodKind) -> PoolingVariant {
    kind.variant().unwrap_or(PoolingVariant::Additive)
}

/// Pearson correlation between the `rho` of the top-weighted candidate and
/// the true `rho(t)` over the forecast steps. `None` without weights, or when
/// either series is constant.
pub fn argmax_rho_correlation(
    result: &SegmentResult,
    ensemble: &CandidateEnsemble,
    dt: f64,
) -> Option<f64> {
    let w = result.forecast.weights.as_ref()?;
    let chosen: Vec<f64> = (0..w.rows())
        .map(|s| ensemble.rho_values[super::argmax(w.row(s))])
        .collect();
    let actual: Vec<f64> = (0..w.rows())
        .map(|s| rho_true(result.t_first + s as f64 * dt))
        .collect();
    pearson(&chosen, &actual)
}
