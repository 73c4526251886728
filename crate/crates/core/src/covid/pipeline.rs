use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    is_monotone, sort_repair, Day, ForecastTable, Quantiles, TruthTable, ValidationPeriod,
    ASCENDING, NUM_QUANTILES, QUANTILE_LEVELS,
};
use crate::attention::{EnsembleStep, MultiHeadParams, SingleHeadParams};
use crate::evaluation::{WisConfig, WisIndex};
use crate::forecasting::{train, LinearPooler, Loss, TrainConfig, TrainReport, Trainable};
use crate::numerics::{AdamConfig, Matrix};
use crate::rng;
use crate::{Error, Result};

/// One `(location, week)` one-step-ahead pooling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CovidSample {
    pub location: usize,
    /// Index of the target week on the table grid.
    pub week: usize,
    pub target_day: Day,
    /// Query `[u_{j-1}, ..., u_{j-l}]`; per-model keys built from the last
    /// `l` forecast errors and spreads; values are the 21-quantile forecasts for week `j`.
    pub step: EnsembleStep,
    /// `[F_j, ..., F_{j-l+1}]` per model, model-major.
    pub linear_input: Vec<f64>,
    pub target: f64,
}

impl CovidSample {
    /// Copy with every count-valued input and the target divided by `s`.
    fn scaled(&self, s: f64) -> CovidSample {
        let mut out = self.clone();
        let inv = 1.0 / s;
        out.step.query.iter_mut().for_each(|v| *v *= inv);
        out.step.keys.scale(inv);
        out.step.values.scale(inv);
        out.linear_input.iter_mut().for_each(|v| *v *= inv);
        out.target *= inv;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkippedWeek {
    pub location: usize,
    pub week: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub models: Vec<String>,
    pub locations: Vec<String>,
    pub delay: usize,
    pub samples: Vec<CovidSample>,
    /// Target weeks dropped because an observation they need is missing.
    pub skipped: Vec<SkippedWeek>,
}

impl SampleSet {
    pub fn num_models(&self) -> usize {
        self.models.len()
    }
}

/// Builds every sample whose target and `delay` previous observations exist.
/// `forecasts` must be complete (see [`super::impute_missing`]).
pub fn build_samples(
    truth: &TruthTable,
    forecasts: &ForecastTable,
    delay: usize,
) -> Result<SampleSet> {
    if delay == 0 {
        return Err(Error::InvalidArgument("delay must be at least 1".into()));
    }
    if truth.weeks != forecasts.weeks || truth.locations != forecasts.locations {
        return Err(Error::InvalidArgument(
            "truth and forecast tables use different grids".into(),
        ));
    }
    if !forecasts.is_complete() {
        return Err(Error::InvalidArgument(format!(
            "forecast table has {} missing cells; impute first",
            forecasts.missing_cells()
        )));
    }
    let m = forecasts.num_models();
    if m == 0 {
        return Err(Error::InvalidArgument("no candidate models".into()));
    }
    let n = forecasts.num_weeks();
    let key_dim = NUM_QUANTILES * delay;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for loc in 0..forecasts.num_locations() {
        for j in delay..n {
            let observed: Option<Vec<f64>> =
                (0..=delay).map(|lag| truth.get(loc, j - lag)).collect();
            let Some(u) = observed else {
                skipped.push(SkippedWeek {
                    location: loc,
                    week: j,
                });
                continue;
            };
            let cell =
                |model: usize, w: usize| forecasts.get(model, loc, w).expect("table is complete");
            let query = u[1..].to_vec();
            let mut keys = Matrix::zeros(m, key_dim);
            let mut values = Matrix::zeros(m, NUM_QUANTILES);
            let mut linear_input = Vec::with_capacity(m * key_dim);
            for i in 0..m {
                let row = keys.row_mut(i);
                for tau in 0..delay {
                    let w = j - 1 - tau;
                    let f = cell(i, w);
                    let block = &mut row[tau * NUM_QUANTILES..(tau + 1) * NUM_QUANTILES];
                    block.copy_from_slice(f);
                    block[0] = f[0] - u[1 + tau];
                }
                values.row_mut(i).copy_from_slice(cell(i, j));
                for tau in 0..delay {
                    linear_input.extend_from_slice(cell(i, j - tau));
                }
            }
            samples.push(CovidSample {
                location: loc,
                week: j,
                target_day: forecasts.weeks[j],
                step: EnsembleStep::new(query, keys, values)?,
                linear_input,
                target: u[0],
            });
        }
    }
    Ok(SampleSet {
        models: forecasts.models.clone(),
        locations: forecasts.locations.clone(),
        delay,
        samples,
        skipped,
    })
}

/// Mean WIS computed on the sort-repaired prediction. The gradient is mapped
/// back through the sorting permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct WisLoss {
    index: WisIndex,
}

impl WisLoss {
    pub fn new(cfg: &WisConfig) -> Result<Self> {
        Ok(Self {
            index: WisIndex::new(&QUANTILE_LEVELS, cfg)?,
        })
    }

    pub fn hub() -> Self {
        Self::new(&WisConfig::hub()).expect("hub levels cover the hub alphas")
    }

    pub fn score(&self, q: &Quantiles, y: f64) -> Result<f64> {
        self.index.score(q, y)
    }
}

impl Loss for WisLoss {
    fn evaluate(&self, pred: &[f64], target: &[f64], grad: &mut [f64]) -> Result<f64> {
        if pred.len() != NUM_QUANTILES || target.len() != 1 {
            return Err(Error::Shape {
                context: "wis loss",
                expected: (NUM_QUANTILES, 1),
                actual: (pred.len(), target.len()),
            });
        }
        let q: Quantiles = pred.try_into().expect("length checked");
        grad.fill(0.0);
        if is_monotone(&q) {
            self.index.accumulate_gradient(&q, target[0], 1.0, grad)?;
            return self.index.score(&q, target[0]);
        }
        // perm[k]: which ascending slot supplies the k-th smallest value
        let mut perm: [usize; NUM_QUANTILES] = core::array::from_fn(|k| k);
        perm.sort_by(|&a, &b| q[ASCENDING[a]].total_cmp(&q[ASCENDING[b]]));
        let mut sorted = q;
        for (k, &p) in perm.iter().enumerate() {
            sorted[ASCENDING[k]] = q[ASCENDING[p]];
        }
        let mut g = [0.0; NUM_QUANTILES];
        self.index
            .accumulate_gradient(&sorted, target[0], 1.0, &mut g)?;
        for (k, &p) in perm.iter().enumerate() {
            grad[ASCENDING[p]] += g[ASCENDING[k]];
        }
        self.index.score(&sorted, target[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovidMethod {
    Linear,
    Additive,
    MultiHead,
}

impl CovidMethod {
    pub const ALL: [CovidMethod; 3] = [
        CovidMethod::Linear,
        CovidMethod::Additive,
        CovidMethod::MultiHead,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CovidMethod::Linear => "linear",
            CovidMethod::Additive => "additive",
            CovidMethod::MultiHead => "multi_head",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovidModelSpec {
    pub method: CovidMethod,
    pub delay: usize,
    pub hidden: usize,
    pub heads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Divide each location's counts by its mean training target.
    pub per_location_scaling: bool,
}

impl CovidModelSpec {
    pub fn defaults(method: CovidMethod) -> Self {
        let (hidden, heads, weight_decay) = match method {
            CovidMethod::Linear => (0, 1, 0.0),
            CovidMethod::Additive => (1000, 1, 1e-4),
            CovidMethod::MultiHead => (100, NUM_QUANTILES, 1e-5),
        };
        Self {
            method,
            delay: 5,
            hidden,
            heads,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-5,
            weight_decay,
            per_location_scaling: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "delay, epochs and batch size must be positive".into(),
            ));
        }
        if self.method != CovidMethod::Linear && self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden size must be positive".into(),
            ));
        }
        if self.method == CovidMethod::MultiHead && self.heads == 0 {
            return Err(Error::InvalidArgument("head count must be positive".into()));
        }
        self.train_config().adam.validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::default()
                .with_learning_rate(self.learning_rate)
                .with_weight_decay(self.weight_decay),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovidModel {
    Linear(LinearPooler),
    Additive(SingleHeadParams),
    MultiHead(MultiHeadParams),
}

impl CovidModel {
    fn init(spec: &CovidModelSpec, num_models: usize, rng: &mut rng::StreamRng) -> Self {
        let l = spec.delay;
        match spec.method {
            CovidMethod::Linear => {
                CovidModel::Linear(LinearPooler::averaging(num_models, NUM_QUANTILES, l))
            }
            CovidMethod::Additive => CovidModel::Additive(SingleHeadParams::init(
                spec.hidden,
                l,
                NUM_QUANTILES * l,
                rng,
            )),
            CovidMethod::MultiHead => CovidModel::MultiHead(MultiHeadParams::init(
                spec.heads,
                spec.hidden,
                l,
                NUM_QUANTILES * l,
                NUM_QUANTILES,
                rng,
            )),
        }
    }

    /// Raw model output, before any sort repair.
    pub fn predict_raw(&self, sample: &CovidSample) -> Result<Quantiles> {
        let y = match self {
            CovidModel::Linear(p) => p.predict(&sample.linear_input)?,
            CovidModel::Additive(p) => p.predict(&sample.step)?,
            CovidModel::MultiHead(p) => p.predict(&sample.step)?,
        };
        y.as_slice().try_into().map_err(|_| Error::Shape {
            context: "covid model output",
            expected: (NUM_QUANTILES, 1),
            actual: (y.len(), 1),
        })
    }

    /// Attention weights over candidates for single-head models.
    pub fn attention_weights(&self, sample: &CovidSample) -> Result<Option<Vec<f64>>> {
        match self {
            CovidModel::Additive(p) => Ok(Some(p.forward_trace(&sample.step)?.weights)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovidTrainOutput {
    pub spec: CovidModelSpec,
    pub period: ValidationPeriod,
    pub model: CovidModel,
    /// Per-location divisor applied to inputs; all ones when scaling is off.
    pub scales: Vec<f64>,
    pub report: TrainReport,
}

impl CovidTrainOutput {
    /// Sort-repaired forecast in counts, and whether a repair was needed.
    pub fn forecast(&self, sample: &CovidSample) -> Result<(Quantiles, bool)> {
        let s = self.scales[sample.location];
        let mut q = if s == 1.0 {
            self.model.predict_raw(sample)?
        } else {
            self.model.predict_raw(&sample.scaled(s))?.map(|v| v * s)
        };
        let repaired = sort_repair(&mut q);
        Ok((q, repaired))
    }
}

fn location_scales(set: &SampleSet, train_idx: &[usize], enabled: bool) -> Vec<f64> {
    let n = set.locations.len();
    if !enabled {
        return vec![1.0; n];
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for &i in train_idx {
        let s = &set.samples[i];
        sum[s.location] += s.target;
        count[s.location] += 1;
    }
    (0..n)
        .map(|l| {
            if count[l] == 0 {
                1.0
            } else {
                (sum[l] / count[l] as f64).max(1.0)
            }
        })
        .collect()
}

/// Trains on every sample whose target week lies outside `period`.
pub fn train_covid(
    spec: &CovidModelSpec,
    set: &SampleSet,
    period: &ValidationPeriod,
    seed: u64,
) -> Result<CovidTrainOutput> {
    spec.validate()?;
    if spec.delay != set.delay {
        return Err(Error::InvalidArgument(format!(
            "model delay {} does not match sample delay {}",
            spec.delay, set.delay
        )));
    }
    let train_idx: Vec<usize> = (0..set.samples.len())
        .filter(|&i| !period.contains(set.samples[i].target_day))
        .collect();
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "no training samples outside the held-out period".into(),
        ));
    }
    let scales = location_scales(set, &train_idx, spec.per_location_scaling);
    let train_samples: Vec<CovidSample> = train_idx
        .iter()
        .map(|&i| {
            let s = &set.samples[i];
            let f = scales[s.location];
            if f == 1.0 {
                s.clone()
            } else {
                s.scaled(f)
            }
        })
        .collect();
    let targets: Vec<Vec<f64>> = train_samples.iter().map(|s| vec![s.target]).collect();
    let label = format!("covid/{}/{}", spec.method.name(), period.start);
    let mut rng = rng::stream(seed, &label);
    let mut model = CovidModel::init(spec, set.num_models(), &mut rng);
    let loss = WisLoss::hub();
    let cfg = spec.train_config();
    let guard = |i: usize| {
        let day = train_samples[i].target_day;
        if period.contains(day) {
            Err(Error::Leakage { week: day.0 })
        } else {
            Ok(())
        }
    };
    let report = match &mut model {
        CovidModel::Linear(p) => {
            let inputs: Vec<Vec<f64>> = train_samples
                .iter()
                .map(|s| s.linear_input.clone())
                .collect();
            train(p, &inputs, &targets, &loss, &cfg, &mut rng, guard)?
        }
        CovidModel::Additive(p) => {
            let inputs: Vec<EnsembleStep> = train_samples.iter().map(|s| s.step.clone()).collect();
            train(p, &inputs, &targets, &loss, &cfg, &mut rng, guard)?
        }
        CovidModel::MultiHead(p) => {
            let inputs: Vec<EnsembleStep> = train_samples.iter().map(|s| s.step.clone()).collect();
            train(p, &inputs, &targets, &loss, &cfg, &mut rng, guard)?
        }
    };
    Ok(CovidTrainOutput {
        spec: *spec,
        period: *period,
        model,
        scales,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WisRow {
    pub location: usize,
    pub week: usize,
    pub target_day: Day,
    pub wis: f64,
    pub repaired: bool,
}

pub fn mean_wis(rows: &[WisRow]) -> f64 {
    rows.iter().map(|r| r.wis).sum::<f64>() / rows.len().max(1) as f64
}

fn held_out<'a>(
    set: &'a SampleSet,
    period: &'a ValidationPeriod,
) -> impl Iterator<Item = &'a CovidSample> {
    set.samples
        .iter()
        .filter(move |s| period.contains(s.target_day))
}

/// One-step WIS of a trained model on every held-out sample.
pub fn evaluate_covid(trained: &CovidTrainOutput, set: &SampleSet) -> Result<Vec<WisRow>> {
    let loss = WisLoss::hub();
    held_out(set, &trained.period)
        .map(|s| {
            let (q, repaired) = trained.forecast(s)?;
            Ok(WisRow {
                location: s.location,
                week: s.week,
                target_day: s.target_day,
                wis: loss.score(&q, s.target)?,
                repaired,
            })
        })
        .collect()
}

/// Held-out WIS of the equally weighted quantile mean (`"uniform_mean"`) and
/// of each candidate on its own (named after the candidate).
pub fn evaluate_baselines(
    set: &SampleSet,
    period: &ValidationPeriod,
) -> Result<Vec<(String, Vec<WisRow>)>> {
    let loss = WisLoss::hub();
    let m = set.num_models();
    let mut out: Vec<(String, Vec<WisRow>)> = Vec::with_capacity(m + 1);
    out.push((String::from("uniform_mean"), Vec::new()));
    for name in &set.models {
        out.push((name.clone(), Vec::new()));
    }
    for s in held_out(set, period) {
        let row = |wis| WisRow {
            location: s.location,
            week: s.week,
            target_day: s.target_day,
            wis,
            repaired: false,
        };
        let mut mean = [0.0; NUM_QUANTILES];
        for i in 0..m {
            let q: Quantiles = s.step.values.row(i).try_into().expect("21 columns");
            for (a, v) in mean.iter_mut().zip(&q) {
                *a += v / m as f64;
            }
            out[i + 1].1.push(row(loss.score(&q, s.target)?));
        }
        out[0].1.push(row(loss.score(&mean, s.target)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error};

    fn grid(n: usize) -> Vec<Day> {
        (0..n as i32).map(|k| Day(7 * k)).collect()
    }

    fn tables(
        models: usize,
        weeks: usize,
        f: impl Fn(usize, usize) -> Quantiles,
    ) -> (TruthTable, ForecastTable) {
        let names: Vec<String> = (0..models).map(|i| format!("m{i}")).collect();
        let mut t = TruthTable::new(vec!["A".into()], grid(weeks));
        let mut ft = ForecastTable::new(names, vec!["A".into()], grid(weeks));
        for w in 0..weeks {
            t.set(0, w, Some(10.0 + w as f64));
            for m in 0..models {
                ft.set(m, 0, w, Some(f(m, w)));
            }
        }
        (t, ft)
    }

    fn spread(center: f64, width: f64) -> Quantiles {
        core::array::from_fn(|k| center + width * (QUANTILE_LEVELS[k] - 0.5))
    }

    #[test]
    fn sample_layout() {
        let (truth, f) = tables(2, 9, |m, w| spread(100.0 * m as f64 + w as f64, 2.0));
        let set = build_samples(&truth, &f, 3).unwrap();
        assert_eq!(set.samples.len(), 6);
        let s = &set.samples[0];
        assert_eq!(s.week, 3);
        assert_eq!(s.step.query, vec![12.0, 11.0, 10.0]);
        assert_eq!(s.target, 13.0);
        // model 1, lag 0 -> week 2 forecast median 102 minus u_2 = 12
        assert_eq!(s.step.keys.get(1, 0), 90.0);
        assert_eq!(s.step.keys.get(1, 21), 101.0 - 11.0);
        assert_eq!(s.step.keys.get(1, 1), spread(102.0, 2.0)[1]);
        assert_eq!(s.step.values.row(1), &spread(103.0, 2.0)[..]);
        assert_eq!(s.linear_input.len(), 2 * 21 * 3);
        assert_eq!(s.linear_input[21 * 3], 103.0);
        assert_eq!(s.linear_input[21 * 4], 102.0);
    }

    #[test]
    fn missing_truth_skips_weeks() {
        let (mut truth, f) = tables(1, 8, |_, w| spread(w as f64, 1.0));
        truth.set(0, 4, None);
        let set = build_samples(&truth, &f, 2).unwrap();
        // targets 2..8 minus those needing week 4: targets 4, 5, 6
        assert_eq!(set.samples.len(), 3);
        assert_eq!(set.skipped.len(), 3);
        let mut incomplete = f.clone();
        incomplete.set(0, 0, 3, None);
        assert!(build_samples(&truth, &incomplete, 2).is_err());
    }

    #[test]
    fn wis_loss_gradient_through_sort() {
        let loss = WisLoss::hub();
        let mut pred: Vec<f64> = (0..21)
            .map(|k| 3.0 * QUANTILE_LEVELS[k] + 0.013 * k as f64)
            .collect();
        pred.swap(2, 15);
        let y = 1.37;
        let mut g = vec![0.0; 21];
        let v = loss.evaluate(&pred, &[y], &mut g).unwrap();
        let mut sorted: Quantiles = pred.as_slice().try_into().unwrap();
        sort_repair(&mut sorted);
        assert_eq!(v, loss.score(&sorted, y).unwrap());
        let p = Matrix::column(&pred);
        let fd = finite_difference_gradient(
            |m| {
                let mut scratch = vec![0.0; 21];
                loss.evaluate(m.as_slice(), &[y], &mut scratch).unwrap()
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&Matrix::column(&g), &fd) < 1e-6);
    }

    #[test]
    fn perfect_candidates_score_zero() {
        let (truth, f) = tables(3, 12, |_, w| [10.0 + w as f64; 21]);
        let set = build_samples(&truth, &f, 2).unwrap();
        let period = ValidationPeriod {
            start: Day(7 * 8),
            end: Day(7 * 11),
        };
        for (_, rows) in evaluate_baselines(&set, &period).unwrap() {
            assert_eq!(rows.len(), 4);
            assert_eq!(mean_wis(&rows), 0.0);
        }
        let mut spec = CovidModelSpec::defaults(CovidMethod::Additive);
        spec.hidden = 8;
        spec.delay = 2;
        spec.epochs = 2;
        let out = train_covid(&spec, &set, &period, 1).unwrap();
        assert!(mean_wis(&evaluate_covid(&out, &set).unwrap()) < 1e-9);
    }

    #[test]
    fn training_beats_uniform_mean_on_train_split() {
        // model 0 is exact, model 1 is biased; queries and keys separate them
        let (truth, f) = tables(2, 30, |m, w| {
            let c = 10.0 + w as f64 + if m == 1 { 15.0 } else { 0.0 };
            spread(c, 1.0)
        });
        let set = build_samples(&truth, &f, 2).unwrap();
        let far = ValidationPeriod {
            start: Day(7 * 1000),
            end: Day(7 * 1001),
        };
        let everything = ValidationPeriod {
            start: Day(0),
            end: Day(7 * 29),
        };
        let uniform = mean_wis(&evaluate_baselines(&set, &everything).unwrap()[0].1);
        for method in CovidMethod::ALL {
            let mut spec = CovidModelSpec::defaults(method);
            spec.delay = 2;
            spec.hidden = 16;
            spec.heads = 3;
            spec.epochs = 150;
            spec.batch_size = 8;
            spec.learning_rate = 1e-2;
            let mut out = train_covid(&spec, &set, &far, 3).unwrap();
            out.period = everything;
            let trained = mean_wis(&evaluate_covid(&out, &set).unwrap());
            assert!(
                trained < uniform,
                "{}: {trained} vs {uniform}",
                method.name()
            );
        }
    }

    #[test]
    fn single_candidate_passes_through() {
        let (truth, f) = tables(1, 10, |_, w| spread(8.0 + 1.5 * w as f64, 4.0));
        let set = build_samples(&truth, &f, 2).unwrap();
        let period = ValidationPeriod {
            start: Day(7 * 6),
            end: Day(7 * 9),
        };
        let mut spec = CovidModelSpec::defaults(CovidMethod::Additive);
        spec.hidden = 4;
        spec.delay = 2;
        spec.epochs = 1;
        let out = train_covid(&spec, &set, &period, 5).unwrap();
        let rows = evaluate_covid(&out, &set).unwrap();
        let base = evaluate_baselines(&set, &period).unwrap();
        for (a, b) in rows.iter().zip(&base[1].1) {
            assert!((a.wis - b.wis).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_round_trips() {
        let (truth, f) = tables(2, 12, |m, w| spread(50.0 + 3.0 * w as f64 + m as f64, 6.0));
        let set = build_samples(&truth, &f, 2).unwrap();
        let period = ValidationPeriod {
            start: Day(7 * 9),
            end: Day(7 * 11),
        };
        let mut spec = CovidModelSpec::defaults(CovidMethod::Linear);
        spec.delay = 2;
        spec.epochs = 1;
        spec.learning_rate = 1e-12;
        spec.per_location_scaling = true;
        let out = train_covid(&spec, &set, &period, 5).unwrap();
        assert!(out.scales[0] > 10.0);
        let rows = evaluate_covid(&out, &set).unwrap();
        let uniform = &evaluate_baselines(&set, &period).unwrap()[0].1;
        for (a, b) in rows.iter().zip(uniform) {
            assert!((a.wis - b.wis).abs() < 1e-6 * b.wis.max(1.0));
        }
    }
}
