//! The non-stationary Lorenz experiment: data generation, training every
//! requested method, closed-loop validation, and the report tables.

use std::collections::BTreeMap;
use std::path::Path;

use attnpool_core::evaluation::{median_with_ci, ValidTimeConfig};
use attnpool_core::forecasting::{
    argmax_rho_correlation, forecast_segment, train_lorenz_model, variant_for, Forecaster,
    LorenzModelSpec, MethodKind, PoolingVariant, SegmentResult, TrainConfig, TrainedLorenzModel,
};
use attnpool_core::lorenz::{
    generate_dataset, CandidateEnsemble, DatasetConfig, LorenzDataset, SAMPLE_DT,
};
use attnpool_core::numerics::AdamConfig;
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{LorenzPlan, TrainSettings};
use crate::io::{num, read_json, read_trajectory, write_json, write_trajectory, CsvTable};
use crate::output::OutputDir;
use crate::RunError;

/// Contents of `dataset.json` written next to the trajectory CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub t_transient: f64,
    pub t_train: f64,
    pub t_val: f64,
    pub segments: usize,
    pub segment_len: usize,
    pub segment_warmup: usize,
    pub rho_sampling: String,
    pub segment_starts: Vec<usize>,
}

impl DatasetInfo {
    fn new(cfg: &DatasetConfig, segment_starts: Vec<usize>) -> Self {
        Self {
            seed: cfg.seed,
            t_transient: cfg.t_transient,
            t_train: cfg.t_train,
            t_val: cfg.t_val,
            segments: cfg.n_val_segments,
            segment_len: cfg.segment_len,
            segment_warmup: cfg.warmup,
            rho_sampling: cfg.rho_sampling.name().to_string(),
            segment_starts,
        }
    }
}

/// Writes `train.csv`, `validation.csv`, and `dataset.json`.
pub fn write_dataset(out: &mut OutputDir, cfg: &DatasetConfig) -> Result<LorenzDataset, RunError> {
    let data = generate_dataset(cfg)?;
    write_trajectory(&out.file("train.csv")?, &data.train)?;
    write_trajectory(&out.file("validation.csv")?, &data.validation)?;
    write_json(
        &out.file("dataset.json")?,
        &DatasetInfo::new(cfg, data.segment_starts.clone()),
    )?;
    Ok(data)
}

/// Loads a directory written by [`write_dataset`], checking that it was made
/// with the settings in `cfg`.
pub fn read_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<LorenzDataset, RunError> {
    let info: DatasetInfo = read_json(&dir.join("dataset.json"))?;
    if info != DatasetInfo::new(cfg, info.segment_starts.clone()) {
        return Err(RunError::Failed(format!(
            "{} was generated with different settings ({info:?}); regenerate it or update the lorenz section",
            dir.display()
        )));
    }
    let data = LorenzDataset {
        train: read_trajectory(&dir.join("train.csv"), SAMPLE_DT)?,
        validation: read_trajectory(&dir.join("validation.csv"), SAMPLE_DT)?,
        segment_starts: info.segment_starts,
        segment_len: info.segment_len,
    };
    let fits = data
        .segment_starts
        .iter()
        .all(|&s| s >= cfg.warmup && s + data.segment_len <= data.validation.len());
    if !fits {
        return Err(RunError::Failed(format!(
            "{}: segments do not fit the validation run",
            dir.display()
        )));
    }
    Ok(data)
}

/// Median valid time and its 95% order-statistic interval for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VtSummary {
    pub method: String,
    pub delay: usize,
    pub segments: usize,
    pub median: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorenzOutcome {
    pub summaries: Vec<VtSummary>,
    /// Per segment of the report model: `(valid_time, correlation)`.
    pub tracking: Vec<(f64, Option<f64>)>,
}

impl LorenzOutcome {
    pub fn median(&self, method: &str, delay: usize) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.delay == delay)
            .map(|s| s.median)
    }

    /// Fraction of segments with valid time at least `min_vt` whose
    /// correlation exceeds `r_min`, and how many segments qualified.
    pub fn tracking_fraction(&self, min_vt: f64, r_min: f64) -> (f64, usize) {
        let eligible: Vec<Option<f64>> = self
            .tracking
            .iter()
            .filter(|t| t.0 >= min_vt)
            .map(|t| t.1)
            .collect();
        let hits = eligible
            .iter()
            .filter(|r| r.is_some_and(|r| r > r_min))
            .count();
        (hits as f64 / eligible.len().max(1) as f64, eligible.len())
    }
}

fn train_config(s: &TrainSettings) -> TrainConfig {
    TrainConfig {
        epochs: s.epochs,
        batch_size: s.minibatch,
        adam: AdamConfig {
            learning_rate: s.learning_rate,
            weight_decay: s.weight_decay,
            ..AdamConfig::default()
        },
    }
}

/// `(method, delay)` pairs in report order.
pub fn method_runs(plan: &LorenzPlan) -> Vec<(MethodKind, usize)> {
    let mut runs = Vec::new();
    for kind in plan.methods() {
        match kind {
            MethodKind::Linear => runs.push((kind, plan.linear_delay)),
            MethodKind::FeedForward => runs.push((kind, plan.ffnn_delay)),
            _ => runs.extend(plan.attention_delays.iter().map(|&l| (kind, l))),
        }
    }
    runs
}

fn model_spec(plan: &LorenzPlan, kind: MethodKind, l: usize) -> LorenzModelSpec {
    let (hidden, train) = match kind {
        MethodKind::Linear => (0, &plan.linear_train),
        MethodKind::FeedForward => (plan.ffnn_hidden, &plan.ffnn_train),
        _ => (plan.hidden_for(l), &plan.attention_train),
    };
    LorenzModelSpec {
        kind,
        delay: l,
        hidden,
        train: train_config(train),
    }
}

/// Closed-loop forecasts of every segment, split over `threads` workers.
/// Results are returned in segment order regardless of the thread count.
pub fn evaluate_segments(
    model: &Forecaster,
    variant: PoolingVariant,
    ensemble: &CandidateEnsemble,
    data: &LorenzDataset,
    vt: &ValidTimeConfig,
    threads: usize,
) -> Result<Vec<SegmentResult>, RunError> {
    let n = data.segment_starts.len();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return Ok((0..n)
            .map(|k| forecast_segment(model, variant, ensemble, data, k, vt))
            .collect::<Result<_, _>>()?);
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<SegmentResult>, attnpool_core::Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(n))
                        .map(|k| forecast_segment(model, variant, ensemble, data, k, vt))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("segment worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn model_key(kind: MethodKind) -> MethodKind {
    match kind {
        MethodKind::FixedAttention | MethodKind::BestInitial => MethodKind::Additive,
        k => k,
    }
}

/// Runs the experiment and writes its report tables into `out`.
pub fn run_lorenz(
    plan: &LorenzPlan,
    out: &mut OutputDir,
    threads: usize,
) -> Result<LorenzOutcome, RunError> {
    let cfg = plan.dataset_config();
    let data = match &plan.data_dir {
        Some(dir) => read_dataset(dir, &cfg)?,
        None => generate_dataset(&cfg)?,
    };
    info!(
        "lorenz data: {} training samples, {} validation segments of {}",
        data.train.len(),
        data.segment_starts.len(),
        data.segment_len
    );
    let ensemble = CandidateEnsemble::default();
    let vt = ValidTimeConfig {
        epsilon_vt: plan.eps_vt,
        dt: SAMPLE_DT,
    };

    let mut vt_table = CsvTable::create(
        &out.file("valid_times.csv")?,
        &["method", "l", "segment_id", "valid_time"],
    )?;
    let mut loss_table = CsvTable::create(
        &out.file("loss_curve.csv")?,
        &["method", "l", "epoch", "loss"],
    )?;
    let mut trained: BTreeMap<(MethodKind, usize), TrainedLorenzModel> = BTreeMap::new();
    let mut summaries = Vec::new();
    let mut tracking = Vec::new();
    for (kind, l) in method_runs(plan) {
        let key = (model_key(kind), l);
        if !trained.contains_key(&key) {
            let spec = model_spec(plan, key.0, l);
            let start = std::time::Instant::now();
            let m = train_lorenz_model(&spec, &data.train, &ensemble, plan.seed)?;
            let curve = &m.report.loss_curve;
            info!(
                "trained {} l={l}: loss {:.4} -> {:.4} in {:.1}s",
                key.0.name(),
                curve.first().copied().unwrap_or(f64::NAN),
                curve.last().copied().unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
            for (e, v) in curve.iter().enumerate() {
                loss_table.row(&[
                    key.0.name().to_string(),
                    l.to_string(),
                    (e + 1).to_string(),
                    num(*v),
                ])?;
            }
            Checkpoint::of_forecaster(&m.model)
                .save(&out.file(&format!("models/{}_l{l}.json", key.0.name()))?)?;
            trained.insert(key, m);
        }
        let model = &trained[&key].model;
        let results = evaluate_segments(model, variant_for(kind), &ensemble, &data, &vt, threads)?;
        let vts: Vec<f64> = results.iter().map(|r| r.valid_time).collect();
        for r in &results {
            vt_table.row(&[
                kind.name().to_string(),
                l.to_string(),
                r.segment.to_string(),
                num(r.valid_time),
            ])?;
        }
        let ci = median_with_ci(&vts, 0.95)?;
        info!(
            "{} l={l}: median valid time {:.2} [{:.2}, {:.2}]",
            kind.name(),
            ci.median,
            ci.lower,
            ci.upper
        );
        summaries.push(VtSummary {
            method: kind.name().into(),
            delay: l,
            segments: vts.len(),
            median: ci.median,
            ci_lower: ci.lower,
            ci_upper: ci.upper,
            coverage: ci.coverage,
        });
        if kind == MethodKind::Additive && l == plan.report_delay {
            write_report_model(out, &results, &data, &ensemble)?;
            tracking = results
                .iter()
                .map(|r| {
                    (
                        r.valid_time,
                        argmax_rho_correlation(r, &ensemble, SAMPLE_DT),
                    )
                })
                .collect();
            let mut t = CsvTable::create(
                &out.file("tracking.csv")?,
                &["segment_id", "valid_time", "argmax_rho_correlation"],
            )?;
            for (r, (v, c)) in results.iter().zip(&tracking) {
                t.row(&[
                    r.segment.to_string(),
                    num(*v),
                    c.map(num).unwrap_or_default(),
                ])?;
            }
            t.finish()?;
        }
    }
    vt_table.finish()?;
    loss_table.finish()?;
    let mut t = CsvTable::create(
        &out.file("valid_time_summary.csv")?,
        &[
            "method", "l", "segments", "median", "ci_lower", "ci_upper", "coverage",
        ],
    )?;
    for s in &summaries {
        t.row(&[
            s.method.clone(),
            s.delay.to_string(),
            s.segments.to_string(),
            num(s.median),
            num(s.ci_lower),
            num(s.ci_upper),
            num(s.coverage),
        ])?;
    }
    t.finish()?;
    Ok(LorenzOutcome {
        summaries,
        tracking,
    })
}

/// Forecast and attention-weight tables for the additive model at the report delay.
fn write_report_model(
    out: &mut OutputDir,
    results: &[SegmentResult],
    data: &LorenzDataset,
    ensemble: &CandidateEnsemble,
) -> Result<(), RunError> {
    let mut f = CsvTable::create(
        &out.file("forecasts.csv")?,
        &[
            "segment_id",
            "step",
            "t",
            "yhat1",
            "yhat2",
            "yhat3",
            "true1",
            "true2",
            "true3",
        ],
    )?;
    let mut w = CsvTable::create(
        &out.file("attention_weights.csv")?,
        &["segment_id", "step", "t", "rho_m", "weight"],
    )?;
    for r in results {
        let truth = data.segment(r.segment);
        for (s, y) in r.forecast.predictions.iter().enumerate() {
            let u = truth.states[s];
            let t = num(truth.time(s));
            f.row(&[
                r.segment.to_string(),
                s.to_string(),
                t.clone(),
                num(y[0]),
                num(y[1]),
                num(y[2]),
                num(u[0]),
                num(u[1]),
                num(u[2]),
            ])?;
            if let Some(weights) = &r.forecast.weights {
                for (m, rho) in ensemble.rho_values.iter().enumerate() {
                    w.row(&[
                        r.segment.to_string(),
                        s.to_string(),
                        t.clone(),
                        num(*rho),
                        num(weights.get(s, m)),
                    ])?;
                }
            }
        }
    }
    f.finish()?;
    w.finish().map_err(RunError::from)
}
