//! Experiment configuration: a TOML file parsed into [`ExperimentConfig`] and
//! resolved into a fully specified [`Plan`].
//!
//! Every problem found is reported with the dotted key it concerns. Unknown
//! keys are errors and carry a suggestion when a valid key is close.

use std::fmt;
use std::path::{Path, PathBuf};

use attnpool_core::attention::hidden_for_delay;
use attnpool_core::covid::{CovidMethod, CovidModelSpec, Day, SyntheticConfig, ValidationPeriod};
use attnpool_core::forecasting::{ffnn_hidden_for_params, MethodKind};
use attnpool_core::lorenz::{DatasetConfig, RhoSampling};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Lorenz,
    Covid,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Lorenz => "lorenz",
            ExperimentKind::Covid => "covid",
        }
    }
}

/// Per-method hyperparameters; each falls back to the `[model]` value and
/// then to the experiment default.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
pub struct MethodOverrides {
    pub delay: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub minibatch: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
pub struct ModelConfig {
    pub methods: Option<Vec<String>>,
    /// Delay lengths swept by the attention methods (Lorenz).
    pub delays: Option<Vec<usize>>,
    pub delay: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub minibatch: Option<usize>,
    pub per_location_scaling: Option<bool>,
    pub linear: Option<MethodOverrides>,
    pub ffnn: Option<MethodOverrides>,
    pub additive: Option<MethodOverrides>,
    pub multi_head: Option<MethodOverrides>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
pub struct LorenzSection {
    pub t_transient: Option<f64>,
    pub t_train: Option<f64>,
    pub t_val: Option<f64>,
    pub segments: Option<usize>,
    pub segment_len: Option<usize>,
    pub segment_warmup: Option<usize>,
    /// `held_per_sample` (default) or `stage_times`.
    pub rho_sampling: Option<String>,
    pub eps_vt: Option<f64>,
    /// Delay of the attention model whose forecasts and weights are written out.
    pub report_delay: Option<usize>,
    /// Directory written by `lorenz-data`; generated in memory when absent.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct PeriodConfig {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
pub struct CovidSection {
    pub synthetic: Option<bool>,
    pub forecasts: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub locations: Option<usize>,
    pub weeks: Option<usize>,
    pub models: Option<usize>,
    pub first_week: Option<String>,
    pub periods: Option<Vec<PeriodConfig>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    pub lorenz: Option<LorenzSection>,
    pub covid: Option<CovidSection>,
}

/// Every key the parser accepts; `*` stands for a list index.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "output",
    "model",
    "model.methods",
    "model.delays",
    "model.delay",
    "model.hidden",
    "model.heads",
    "model.epochs",
    "model.learning_rate",
    "model.weight_decay",
    "model.minibatch",
    "model.per_location_scaling",
    "model.linear",
    "model.ffnn",
    "model.additive",
    "model.multi_head",
    "model.*.delay",
    "model.*.hidden",
    "model.*.heads",
    "model.*.epochs",
    "model.*.learning_rate",
    "model.*.weight_decay",
    "model.*.minibatch",
    "lorenz",
    "lorenz.t_transient",
    "lorenz.t_train",
    "lorenz.t_val",
    "lorenz.segments",
    "lorenz.segment_len",
    "lorenz.segment_warmup",
    "lorenz.rho_sampling",
    "lorenz.eps_vt",
    "lorenz.report_delay",
    "lorenz.data_dir",
    "covid",
    "covid.synthetic",
    "covid.forecasts",
    "covid.truth",
    "covid.locations",
    "covid.weeks",
    "covid.models",
    "covid.first_week",
    "covid.periods",
    "covid.periods.*.start",
    "covid.periods.*.end",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ConfigErrors {
    pub fn keys(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.key.as_str()).collect()
    }
}

fn err(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.into(),
    }
}

/// Nearest known key to an unknown one, compared within the same parent table.
pub fn suggest_key(path: &str) -> Option<String> {
    let segs: Vec<&str> = path.split('.').collect();
    let (leaf, parents) = segs.split_last()?;
    let pattern_parent: Vec<&str> = parents
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let is_index = s.parse::<usize>().is_ok();
            let is_method = i == 1 && parents[0] == "model";
            if is_index || is_method {
                "*"
            } else {
                s
            }
        })
        .collect();
    let parent = pattern_parent.join(".");
    let (best, dist) = KNOWN_KEYS
        .iter()
        .filter_map(|k| {
            let (p, l) = k.rsplit_once('.').unwrap_or(("", k));
            (p == parent && l != "*").then_some(l)
        })
        .map(|l| (l, strsim::levenshtein(leaf, l)))
        .min_by_key(|&(_, d)| d)?;
    if dist == 0 || dist > 2.max(leaf.len() / 3) {
        return None;
    }
    let mut out: Vec<&str> = parents.to_vec();
    out.push(best);
    Some(out.join("."))
}

/// Parses configuration text. Relative paths are resolved against `base_dir`.
pub fn parse_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::new(text);
    let mut track = |p: serde_ignored::Path<'_>| {
        let key: Vec<String> = p
            .to_string()
            .split('.')
            .filter(|s| *s != "?")
            .map(str::to_string)
            .collect();
        unknown.push(key.join("."));
    };
    let parsed: Result<ExperimentConfig, _> =
        serde_path_to_error::deserialize(serde_ignored::Deserializer::new(de, &mut track));
    let mut errors: Vec<ConfigError> = unknown
        .iter()
        .map(|k| {
            let hint = suggest_key(k)
                .map(|s| format!(" (did you mean `{s}`?)"))
                .unwrap_or_default();
            err(k.clone(), format!("unknown key{hint}"))
        })
        .collect();
    let mut cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            let key = e.path().to_string();
            let key = if key == "." {
                String::from("(file)")
            } else {
                key
            };
            let inner = e.into_inner();
            errors.push(err(key, inner.message().trim().to_string()));
            return Err(ConfigErrors(errors));
        }
    };
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base_dir.join(&*p);
        }
    };
    if let Some(p) = cfg.output.as_mut() {
        resolve(p);
    }
    if let Some(l) = cfg.lorenz.as_mut() {
        if let Some(p) = l.data_dir.as_mut() {
            resolve(p);
        }
    }
    if let Some(c) = cfg.covid.as_mut() {
        if let Some(p) = c.forecasts.as_mut() {
            resolve(p);
        }
        if let Some(p) = c.truth.as_mut() {
            resolve(p);
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![err(
            path.display().to_string(),
            format!("cannot read config: {e}"),
        )])
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_str(&text, base)
}

/// Adam settings for one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub minibatch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LorenzPlan {
    pub seed: u64,
    pub t_transient: f64,
    pub t_train: f64,
    pub t_val: f64,
    pub segments: usize,
    pub segment_len: usize,
    pub segment_warmup: usize,
    pub rho_sampling: String,
    pub eps_vt: f64,
    pub report_delay: usize,
    pub data_dir: Option<PathBuf>,
    /// Requested methods in canonical order.
    pub methods: Vec<String>,
    /// Delays at which the attention model is trained.
    pub attention_delays: Vec<usize>,
    /// Fixed hidden size; `None` uses `round(600 / l)`.
    pub attention_hidden: Option<usize>,
    pub attention_train: TrainSettings,
    pub linear_delay: usize,
    pub linear_train: TrainSettings,
    pub ffnn_delay: usize,
    pub ffnn_hidden: usize,
    pub ffnn_train: TrainSettings,
}

impl LorenzPlan {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            t_transient: self.t_transient,
            t_train: self.t_train,
            t_val: self.t_val,
            n_val_segments: self.segments,
            segment_len: self.segment_len,
            warmup: self.segment_warmup,
            rho_sampling: RhoSampling::from_name(&self.rho_sampling).unwrap_or_default(),
        }
    }

    pub fn methods(&self) -> Vec<MethodKind> {
        self.methods
            .iter()
            .filter_map(|m| MethodKind::from_name(m))
            .collect()
    }

    pub fn hidden_for(&self, l: usize) -> usize {
        self.attention_hidden.unwrap_or_else(|| hidden_for_delay(l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CovidSource {
    Synthetic {
        locations: usize,
        weeks: usize,
        models: usize,
        first_week: String,
    },
    Files {
        forecasts: PathBuf,
        truth: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovidMethodPlan {
    pub name: String,
    pub delay: usize,
    pub hidden: usize,
    pub heads: usize,
    pub train: TrainSettings,
    pub per_location_scaling: bool,
}

impl CovidMethodPlan {
    pub fn spec(&self) -> CovidModelSpec {
        CovidModelSpec {
            method: CovidMethod::from_name(&self.name).expect("validated method name"),
            delay: self.delay,
            hidden: self.hidden,
            heads: self.heads,
            epochs: self.train.epochs,
            batch_size: self.train.minibatch,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            per_location_scaling: self.per_location_scaling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovidPlan {
    pub seed: u64,
    pub source: CovidSource,
    /// `(start, end)` as `YYYY-MM-DD`.
    pub periods: Vec<(String, String)>,
    pub methods: Vec<CovidMethodPlan>,
}

impl CovidPlan {
    pub fn synthetic_config(&self) -> Option<SyntheticConfig> {
        match &self.source {
            CovidSource::Synthetic {
                locations,
                weeks,
                models,
                first_week,
            } => Some(SyntheticConfig {
                seed: self.seed,
                num_locations: *locations,
                num_weeks: *weeks,
                first_week: first_week.parse().expect("validated date"),
                num_models: *models,
            }),
            CovidSource::Files { .. } => None,
        }
    }

    pub fn validation_periods(&self) -> Vec<ValidationPeriod> {
        self.periods
            .iter()
            .map(|(a, b)| ValidationPeriod {
                start: a.parse().expect("validated date"),
                end: b.parse().expect("validated date"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Plan {
    Lorenz(LorenzPlan),
    Covid(CovidPlan),
}

impl Plan {
    /// SHA-256 of the resolved plan, independent of output location.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        match self {
            Plan::Lorenz(p) => p.seed,
            Plan::Covid(p) => p.seed,
        }
    }
}

struct Checker {
    errors: Vec<ConfigError>,
}

impl Checker {
    fn positive_f(&mut self, key: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.errors
                .push(err(key, format!("must be a positive number, got {v}")));
        }
    }

    fn non_negative_f(&mut self, key: &str, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.errors
                .push(err(key, format!("must be a non-negative number, got {v}")));
        }
    }

    fn positive(&mut self, key: &str, v: usize) {
        if v == 0 {
            self.errors.push(err(key, "must be at least 1"));
        }
    }
}

const LORENZ_METHODS: [&str; 5] = ["linear", "ffnn", "additive", "fixed", "best_initial"];
const COVID_METHODS: [&str; 3] = ["linear", "additive", "multi_head"];
const MAX_DELAY: usize = 52;

fn method_list(cfg: &ModelConfig, allowed: &[&str], c: &mut Checker) -> Vec<String> {
    let Some(list) = &cfg.methods else {
        return allowed.iter().map(|s| s.to_string()).collect();
    };
    if list.is_empty() {
        c.errors
            .push(err("model.methods", "must name at least one method"));
    }
    for (i, m) in list.iter().enumerate() {
        if !allowed.contains(&m.as_str()) {
            let near = allowed
                .iter()
                .min_by_key(|a| strsim::levenshtein(a, m))
                .filter(|a| strsim::levenshtein(a, m) <= 3)
                .map(|a| format!(" (did you mean `{a}`?)"))
                .unwrap_or_default();
            c.errors.push(err(
                format!("model.methods.{i}"),
                format!(
                    "unknown method `{m}`; expected one of {}{near}",
                    allowed.join(", ")
                ),
            ));
        } else if list[..i].contains(m) {
            c.errors.push(err(
                format!("model.methods.{i}"),
                format!("method `{m}` listed twice"),
            ));
        }
    }
    allowed
        .iter()
        .filter(|a| list.iter().any(|m| m == *a))
        .map(|s| s.to_string())
        .collect()
}

struct Defaults {
    epochs: usize,
    learning_rate: f64,
    weight_decay: f64,
    minibatch: usize,
}

fn train_settings(
    cfg: &ModelConfig,
    name: &str,
    o: Option<&MethodOverrides>,
    d: Defaults,
    c: &mut Checker,
) -> TrainSettings {
    let pick = |key: &str| -> String {
        if o.map(|o| match key {
            "epochs" => o.epochs.is_some(),
            "learning_rate" => o.learning_rate.is_some(),
            "weight_decay" => o.weight_decay.is_some(),
            _ => o.minibatch.is_some(),
        })
        .unwrap_or(false)
        {
            format!("model.{name}.{key}")
        } else {
            format!("model.{key}")
        }
    };
    let s = TrainSettings {
        epochs: o.and_then(|o| o.epochs).or(cfg.epochs).unwrap_or(d.epochs),
        learning_rate: o
            .and_then(|o| o.learning_rate)
            .or(cfg.learning_rate)
            .unwrap_or(d.learning_rate),
        weight_decay: o
            .and_then(|o| o.weight_decay)
            .or(cfg.weight_decay)
            .unwrap_or(d.weight_decay),
        minibatch: o
            .and_then(|o| o.minibatch)
            .or(cfg.minibatch)
            .unwrap_or(d.minibatch),
    };
    c.positive(&pick("epochs"), s.epochs);
    c.positive_f(&pick("learning_rate"), s.learning_rate);
    c.non_negative_f(&pick("weight_decay"), s.weight_decay);
    c.positive(&pick("minibatch"), s.minibatch);
    s
}

fn check_delay(key: &str, l: usize, c: &mut Checker) {
    if l == 0 || l > MAX_DELAY {
        c.errors.push(err(
            key,
            format!("delay must be in 1..={MAX_DELAY}, got {l}"),
        ));
    }
}

impl ExperimentConfig {
    /// Validates the configuration and fills in every default.
    pub fn plan(&self) -> Result<Plan, ConfigErrors> {
        let mut c = Checker { errors: Vec::new() };
        if self.output.is_none() {
            c.errors.push(err(
                "output",
                "no output directory; set `output` or pass --output",
            ));
        }
        let plan = match self.experiment {
            ExperimentKind::Lorenz => {
                if self.covid.is_some() {
                    c.errors
                        .push(err("covid", "section is only used by covid experiments"));
                }
                if self.model.heads.is_some() || self.model.multi_head.is_some() {
                    c.errors.push(err(
                        "model.heads",
                        "multi-head pooling is only available for covid experiments",
                    ));
                }
                if self.model.per_location_scaling.is_some() {
                    c.errors.push(err(
                        "model.per_location_scaling",
                        "only used by covid experiments",
                    ));
                }
                Plan::Lorenz(self.lorenz_plan(&mut c))
            }
            ExperimentKind::Covid => {
                if self.lorenz.is_some() {
                    c.errors
                        .push(err("lorenz", "section is only used by lorenz experiments"));
                }
                if self.model.delays.is_some() {
                    c.errors.push(err(
                        "model.delays",
                        "covid experiments use a single `model.delay`",
                    ));
                }
                if self.model.ffnn.is_some() {
                    c.errors.push(err(
                        "model.ffnn",
                        "the feed-forward baseline is only used by lorenz experiments",
                    ));
                }
                Plan::Covid(self.covid_plan(&mut c))
            }
        };
        if c.errors.is_empty() {
            Ok(plan)
        } else {
            Err(ConfigErrors(c.errors))
        }
    }

    fn lorenz_plan(&self, c: &mut Checker) -> LorenzPlan {
        let s = self.lorenz.clone().unwrap_or_default();
        let m = &self.model;
        let methods = method_list(m, &LORENZ_METHODS, c);
        let attention_delays = match (&m.delays, m.delay) {
            (Some(d), _) => d.clone(),
            (None, Some(l)) => vec![l],
            (None, None) => (1..=6).collect(),
        };
        if attention_delays.is_empty() {
            c.errors
                .push(err("model.delays", "must list at least one delay"));
        }
        for (i, &l) in attention_delays.iter().enumerate() {
            check_delay(&format!("model.delays.{i}"), l, c);
        }
        let additive = m.additive.as_ref();
        let attention_hidden = additive.and_then(|o| o.hidden).or(m.hidden);
        if let Some(h) = attention_hidden {
            c.positive(
                if additive.and_then(|o| o.hidden).is_some() {
                    "model.additive.hidden"
                } else {
                    "model.hidden"
                },
                h,
            );
        }
        let lorenz_defaults = |epochs| Defaults {
            epochs,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            minibatch: 128,
        };
        let attention_train = train_settings(m, "additive", additive, lorenz_defaults(500), c);
        let linear = m.linear.as_ref();
        let linear_delay = linear.and_then(|o| o.delay).unwrap_or(1);
        check_delay("model.linear.delay", linear_delay, c);
        let linear_train = train_settings(m, "linear", linear, lorenz_defaults(500), c);
        let ffnn = m.ffnn.as_ref();
        let ffnn_delay = ffnn.and_then(|o| o.delay).unwrap_or(5);
        check_delay("model.ffnn.delay", ffnn_delay, c);
        let matched = ffnn_hidden_for_params(
            attention_param_count(
                attention_hidden.unwrap_or_else(|| hidden_for_delay(ffnn_delay.max(1))),
                ffnn_delay,
            ),
            3 * ffnn_delay,
            3,
        );
        let ffnn_hidden = ffnn.and_then(|o| o.hidden).unwrap_or(matched);
        c.positive("model.ffnn.hidden", ffnn_hidden);
        let ffnn_train = train_settings(m, "ffnn", ffnn, lorenz_defaults(800), c);
        for (name, o) in [("linear", linear), ("ffnn", ffnn), ("additive", additive)] {
            if o.is_some_and(|o| o.heads.is_some()) {
                c.errors.push(err(
                    format!("model.{name}.heads"),
                    "heads only apply to multi-head pooling",
                ));
            }
        }
        if additive.is_some_and(|o| o.delay.is_some()) {
            c.errors.push(err(
                "model.additive.delay",
                "set the attention delays with `model.delays`",
            ));
        }
        if linear.is_some_and(|o| o.hidden.is_some()) {
            c.errors.push(err(
                "model.linear.hidden",
                "the linear pooler has no hidden layer",
            ));
        }

        let plan = LorenzPlan {
            seed: self.seed,
            t_transient: s.t_transient.unwrap_or(100.0),
            t_train: s.t_train.unwrap_or(400.0),
            t_val: s.t_val.unwrap_or(2560.0),
            segments: s.segments.unwrap_or(200),
            segment_len: s.segment_len.unwrap_or(128),
            segment_warmup: s.segment_warmup.unwrap_or(8),
            rho_sampling: s
                .rho_sampling
                .clone()
                .unwrap_or_else(|| RhoSampling::default().name().to_string()),
            eps_vt: s.eps_vt.unwrap_or(40.0),
            report_delay: s.report_delay.unwrap_or_else(|| {
                if attention_delays.contains(&5) {
                    5
                } else {
                    attention_delays.last().copied().unwrap_or(5)
                }
            }),
            data_dir: s.data_dir.clone(),
            methods,
            attention_delays,
            attention_hidden,
            attention_train,
            linear_delay,
            linear_train,
            ffnn_delay,
            ffnn_hidden,
            ffnn_train,
        };
        if RhoSampling::from_name(&plan.rho_sampling).is_none() {
            c.errors.push(err(
                "lorenz.rho_sampling",
                format!(
                    "unknown value `{}`; expected held_per_sample or stage_times",
                    plan.rho_sampling
                ),
            ));
        }
        c.non_negative_f("lorenz.t_transient", plan.t_transient);
        c.positive_f("lorenz.t_train", plan.t_train);
        c.positive_f("lorenz.t_val", plan.t_val);
        if plan.segments < 6 {
            c.errors.push(err(
                "lorenz.segments",
                format!(
                    "the median interval needs at least 6 segments, got {}",
                    plan.segments
                ),
            ));
        }
        c.positive("lorenz.segment_len", plan.segment_len);
        c.positive_f("lorenz.eps_vt", plan.eps_vt);
        if plan.t_val.is_finite() && plan.segments > 0 {
            let stride =
                (plan.t_val / attnpool_core::lorenz::SAMPLE_DT).round() as usize / plan.segments;
            if stride < plan.segment_len {
                c.errors.push(err(
                    "lorenz.segments",
                    format!(
                        "{} segments of {} samples do not fit in t_val = {}",
                        plan.segments, plan.segment_len, plan.t_val
                    ),
                ));
            }
        }
        let max_delay = plan
            .attention_delays
            .iter()
            .copied()
            .chain([plan.linear_delay, plan.ffnn_delay])
            .max()
            .unwrap_or(1);
        if plan.segment_warmup < max_delay + 1 {
            c.errors.push(err(
                "lorenz.segment_warmup",
                format!(
                    "must be at least {} to seed delay {max_delay}",
                    max_delay + 1
                ),
            ));
        }
        let uses_attention = plan
            .methods
            .iter()
            .any(|m| ["additive", "fixed", "best_initial"].contains(&m.as_str()));
        if uses_attention && !plan.attention_delays.contains(&plan.report_delay) {
            c.errors.push(err(
                "lorenz.report_delay",
                format!("{} is not among model.delays", plan.report_delay),
            ));
        }
        if let Some(d) = &plan.data_dir {
            if !d.is_dir() {
                c.errors.push(err(
                    "lorenz.data_dir",
                    format!("{} is not a directory", d.display()),
                ));
            }
        }
        plan
    }

    fn covid_plan(&self, c: &mut Checker) -> CovidPlan {
        let s = self.covid.clone().unwrap_or_default();
        let m = &self.model;
        let names = method_list(m, &COVID_METHODS, c);
        let scaling = m.per_location_scaling.unwrap_or(false);
        let mut methods = Vec::new();
        for name in &names {
            let method = CovidMethod::from_name(name).expect("filtered names");
            let d = CovidModelSpec::defaults(method);
            let o = match method {
                CovidMethod::Linear => m.linear.as_ref(),
                CovidMethod::Additive => m.additive.as_ref(),
                CovidMethod::MultiHead => m.multi_head.as_ref(),
            };
            let key = |k: &str, own: bool| {
                if own {
                    format!("model.{name}.{k}")
                } else {
                    format!("model.{k}")
                }
            };
            let delay = o.and_then(|o| o.delay).or(m.delay).unwrap_or(d.delay);
            check_delay(
                &key("delay", o.is_some_and(|o| o.delay.is_some())),
                delay,
                c,
            );
            let hidden = o.and_then(|o| o.hidden).or(m.hidden).unwrap_or(d.hidden);
            let heads = o.and_then(|o| o.heads).or(m.heads).unwrap_or(d.heads);
            match method {
                CovidMethod::Linear => {
                    if o.is_some_and(|o| o.hidden.is_some() || o.heads.is_some()) {
                        c.errors.push(err(
                            "model.linear",
                            "the linear pooler has no hidden size or heads",
                        ));
                    }
                }
                CovidMethod::Additive => {
                    c.positive(
                        &key("hidden", o.is_some_and(|o| o.hidden.is_some())),
                        hidden,
                    );
                    if o.is_some_and(|o| o.heads.is_some()) {
                        c.errors.push(err(
                            "model.additive.heads",
                            "single-head pooling has one head",
                        ));
                    }
                }
                CovidMethod::MultiHead => {
                    c.positive(
                        &key("hidden", o.is_some_and(|o| o.hidden.is_some())),
                        hidden,
                    );
                    c.positive(&key("heads", o.is_some_and(|o| o.heads.is_some())), heads);
                }
            }
            let train = train_settings(
                m,
                name,
                o,
                Defaults {
                    epochs: d.epochs,
                    learning_rate: d.learning_rate,
                    weight_decay: d.weight_decay,
                    minibatch: d.batch_size,
                },
                c,
            );
            methods.push(CovidMethodPlan {
                name: name.clone(),
                delay,
                hidden: if method == CovidMethod::Linear {
                    0
                } else {
                    hidden
                },
                heads: if method == CovidMethod::MultiHead {
                    heads
                } else {
                    1
                },
                train,
                per_location_scaling: scaling,
            });
        }

        let files = s.forecasts.is_some() || s.truth.is_some();
        let synthetic = s.synthetic.unwrap_or(!files);
        let source = if synthetic {
            if files {
                c.errors.push(err(
                    "covid.synthetic",
                    "synthetic data requested together with input files",
                ));
            }
            let d = SyntheticConfig::default();
            let src = CovidSource::Synthetic {
                locations: s.locations.unwrap_or(d.num_locations),
                weeks: s.weeks.unwrap_or(d.num_weeks),
                models: s.models.unwrap_or(d.num_models),
                first_week: s
                    .first_week
                    .clone()
                    .unwrap_or_else(|| d.first_week.to_string()),
            };
            if let CovidSource::Synthetic {
                locations,
                weeks,
                models,
                first_week,
            } = &src
            {
                c.positive("covid.locations", *locations);
                if *weeks < 100 {
                    c.errors.push(err(
                        "covid.weeks",
                        "synthetic data needs at least 100 weeks",
                    ));
                }
                if *models < 3 {
                    c.errors.push(err(
                        "covid.models",
                        "synthetic data needs at least 3 models",
                    ));
                }
                if first_week.parse::<Day>().is_err() {
                    c.errors.push(err(
                        "covid.first_week",
                        format!("expected YYYY-MM-DD, got {first_week:?}"),
                    ));
                }
            }
            src
        } else {
            for (k, v) in [
                ("covid.locations", s.locations),
                ("covid.weeks", s.weeks),
                ("covid.models", s.models),
            ] {
                if v.is_some() {
                    c.errors.push(err(k, "only used for synthetic data"));
                }
            }
            if s.first_week.is_some() {
                c.errors
                    .push(err("covid.first_week", "only used for synthetic data"));
            }
            let mut path = |key: &str, p: &Option<PathBuf>| match p {
                Some(p) if p.is_file() => p.clone(),
                Some(p) => {
                    c.errors
                        .push(err(key, format!("{} does not exist", p.display())));
                    p.clone()
                }
                None => {
                    c.errors
                        .push(err(key, "required unless covid.synthetic = true"));
                    PathBuf::new()
                }
            };
            CovidSource::Files {
                forecasts: path("covid.forecasts", &s.forecasts),
                truth: path("covid.truth", &s.truth),
            }
        };

        let periods: Vec<(String, String)> = match &s.periods {
            Some(list) => list
                .iter()
                .map(|p| (p.start.clone(), p.end.clone()))
                .collect(),
            None => ValidationPeriod::defaults()
                .iter()
                .map(|p| (p.start.to_string(), p.end.to_string()))
                .collect(),
        };
        if periods.is_empty() {
            c.errors
                .push(err("covid.periods", "must list at least one period"));
        }
        let mut parsed = Vec::new();
        for (i, (a, b)) in periods.iter().enumerate() {
            let day = |key: &str, v: &str, c: &mut Checker| match v.parse::<Day>() {
                Ok(d) => Some(d),
                Err(_) => {
                    c.errors.push(err(
                        format!("covid.periods.{i}.{key}"),
                        format!("expected YYYY-MM-DD, got {v:?}"),
                    ));
                    None
                }
            };
            if let (Some(start), Some(end)) = (day("start", a, c), day("end", b, c)) {
                parsed.push(ValidationPeriod { start, end });
            }
        }
        if parsed.len() == periods.len() {
            if let Err(e) = ValidationPeriod::check_disjoint(&parsed) {
                c.errors.push(err("covid.periods", e.to_string()));
            }
        }
        CovidPlan {
            seed: self.seed,
            source,
            periods,
            methods,
        }
    }
}

/// Parameter count of a single-head attention model on Lorenz inputs.
fn attention_param_count(hidden: usize, l: usize) -> usize {
    let dim = 3 * l;
    hidden * (2 * dim + 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
        parse_str(text, Path::new("/tmp"))
    }

    #[test]
    fn minimal_lorenz_config() {
        let cfg = parse("experiment = \"lorenz\"\nseed = 3\noutput = \"out\"\n").unwrap();
        let Plan::Lorenz(p) = cfg.plan().unwrap() else {
            panic!()
        };
        assert_eq!(p.attention_delays, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(p.methods.len(), 5);
        assert_eq!(p.hidden_for(5), 120);
        assert_eq!(p.ffnn_train.epochs, 800);
        assert_eq!(p.attention_train.epochs, 500);
        assert_eq!(cfg.output.unwrap(), PathBuf::from("/tmp/out"));
        // parameter-matched FF NN: 120 * 32 params at l = 5
        let ffnn = p.ffnn_hidden * 16 + 3 * p.ffnn_hidden + 3;
        assert!((ffnn as f64 - 3840.0).abs() / 3840.0 < 0.1);
    }

    #[test]
    fn minimal_covid_config() {
        let cfg = parse("experiment = \"covid\"\nseed = 1\noutput = \"o\"\n").unwrap();
        let Plan::Covid(p) = cfg.plan().unwrap() else {
            panic!()
        };
        assert_eq!(p.periods.len(), 4);
        let add = p.methods.iter().find(|m| m.name == "additive").unwrap();
        assert_eq!(
            (add.hidden, add.train.weight_decay, add.train.epochs),
            (1000, 1e-4, 200)
        );
        let mh = p.methods.iter().find(|m| m.name == "multi_head").unwrap();
        assert_eq!(
            (mh.hidden, mh.heads, mh.train.weight_decay),
            (100, 21, 1e-5)
        );
        assert!(matches!(
            p.source,
            CovidSource::Synthetic {
                locations: 8,
                weeks: 120,
                models: 9,
                ..
            }
        ));
    }

    #[test]
    fn negative_learning_rate_names_the_key() {
        let cfg = parse(
            "experiment = \"lorenz\"\nseed = 3\noutput = \"o\"\n[model]\nlearning_rate = -0.1\n",
        )
        .unwrap();
        let e = cfg.plan().unwrap_err();
        assert!(e.keys().contains(&"model.learning_rate"), "{e}");
        let cfg = parse("experiment = \"covid\"\nseed = 3\noutput = \"o\"\n[model.additive]\nlearning_rate = 0\n").unwrap();
        assert!(cfg
            .plan()
            .unwrap_err()
            .keys()
            .contains(&"model.additive.learning_rate"));
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let e = parse("experiment = \"lorenz\"\nseed = 3\n[model]\nhiddne = 4\n").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].key, "model.hiddne");
        assert!(e.0[0].message.contains("`model.hidden`"), "{e}");
        let e = parse("experiment = \"covid\"\nseed = 3\n[[covid.periods]]\nstrat = \"2021-01-02\"\nend = \"2021-02-06\"\n").unwrap_err();
        assert!(e.to_string().contains("covid.periods.0.start"), "{e}");
        let e = parse("experiment = \"covid\"\nseed = 3\n[model.additive]\nweight_decy = 1.0\n")
            .unwrap_err();
        assert!(e.to_string().contains("model.additive.weight_decay"), "{e}");
        assert_eq!(suggest_key("zzzzzz"), None);
    }

    #[test]
    fn type_errors_carry_the_path() {
        let e = parse("experiment = \"lorenz\"\nseed = 3\n[model]\nepochs = -5\n").unwrap_err();
        assert_eq!(e.0[0].key, "model.epochs");
        let e = parse("experiment = \"weather\"\nseed = 3\n").unwrap_err();
        assert_eq!(e.0[0].key, "experiment");
        let e = parse("seed = 3\n").unwrap_err();
        assert!(e.to_string().contains("experiment"), "{e}");
    }

    #[test]
    fn collects_every_problem() {
        let text = r#"
experiment = "covid"
seed = 3
[model]
methods = ["additive", "additiv", "linear", "linear"]
epochs = 0
[[covid.periods]]
start = "2021-01-02"
end = "2021-03-06"
[[covid.periods]]
start = "2021-02-06"
end = "2021-13-01"
"#;
        let e = parse(text).unwrap().plan().unwrap_err();
        let keys = e.keys();
        for k in [
            "output",
            "model.methods.1",
            "model.methods.3",
            "model.epochs",
            "covid.periods.1.end",
        ] {
            assert!(keys.contains(&k), "{k} missing from {e}");
        }
        assert!(e.to_string().contains("did you mean `additive`"));
    }

    #[test]
    fn overlapping_periods_rejected() {
        let text = r#"
experiment = "covid"
seed = 3
output = "o"
[[covid.periods]]
start = "2021-01-02"
end = "2021-03-06"
[[covid.periods]]
start = "2021-02-06"
end = "2021-04-03"
"#;
        assert_eq!(
            parse(text).unwrap().plan().unwrap_err().keys(),
            vec!["covid.periods"]
        );
    }

    #[test]
    fn hash_ignores_output_but_not_seed() {
        let a = parse("experiment = \"lorenz\"\nseed = 3\noutput = \"a\"\n")
            .unwrap()
            .plan()
            .unwrap();
        let b = parse("experiment = \"lorenz\"\nseed = 3\noutput = \"b\"\n")
            .unwrap()
            .plan()
            .unwrap();
        let c = parse("experiment = \"lorenz\"\nseed = 4\noutput = \"a\"\n")
            .unwrap()
            .plan()
            .unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
