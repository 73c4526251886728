use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{
    tables_from_records, Day, ForecastRecord, ForecastTable, ImputationRule, IngestReport,
    TruthRecord, TruthTable, IGNORED_HUB_LEVELS, QUANTILE_LEVELS,
};
use crate::math;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_locations: usize,
    pub num_weeks: usize,
    pub first_week: Day,
    /// At least 3: two regime experts plus biased persistence models.
    pub num_models: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2020,
            num_locations: 8,
            num_weeks: 120,
            first_week: Day::from_ymd(2020, 7, 25).expect("valid date"),
            num_models: 9,
        }
    }
}

/// A missing cell planted by the generator and the rule expected to fill it.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedGap {
    pub model: String,
    pub location: String,
    pub week_ending: Day,
    pub rule: ImputationRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHub {
    pub forecasts: Vec<ForecastRecord>,
    pub truth: Vec<TruthRecord>,
    pub gaps: Vec<InjectedGap>,
    /// `rising[location][week]`: whether the epidemic curve is growing.
    pub rising: Vec<Vec<bool>>,
}

impl SyntheticHub {
    pub fn tables(&self) -> Result<(ForecastTable, TruthTable, IngestReport)> {
        tables_from_records(&self.forecasts, &self.truth)
    }
}

/// Wave centres, widths and relative heights, in weeks from the first week.
const WAVES: [(f64, f64, f64); 4] = [
    (24.0, 5.0, 1.0),
    (56.0, 4.0, 0.6),
    (78.0, 4.0, 0.9),
    (104.0, 6.0, 0.35),
];
const PERSISTENCE_BIAS: [f64; 7] = [-0.15, 0.1, 0.25, -0.3, 0.4, 0.05, -0.05];
const PERSISTENCE_SPREAD: [f64; 7] = [0.2, 0.3, 0.15, 0.35, 0.25, 0.4, 0.1];

fn sech2(x: f64) -> f64 {
    let c = 0.5 * (math::exp(x) + math::exp(-x));
    1.0 / (c * c)
}

fn logit(p: f64) -> f64 {
    math::ln(p / (1.0 - p))
}

fn model_name(i: usize) -> String {
    match i {
        0 => "rise_expert".into(),
        1 => "fall_expert".into(),
        _ => format!("persistence_{}", i - 1),
    }
}

/// Seeded two-regime epidemic data in hub layout.
///
/// Weekly deaths follow a sum of bell-shaped waves per location. The model
/// `rise_expert` is sharp while the curve grows and overshoots while it
/// falls; `fall_expert` is the mirror image. The remaining models forecast
/// last week's count with a fixed bias. Hub records carry all 23 hub levels.
/// Gaps are planted so that each imputation rule is needed.
pub fn synthesize_hub_data(cfg: &SyntheticConfig) -> Result<SyntheticHub> {
    if cfg.num_models < 3 || cfg.num_locations == 0 || cfg.num_weeks < 100 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least 3 models, 1 location and 100 weeks".into(),
        ));
    }
    let n = cfg.num_weeks;
    let mut levels: Vec<f64> = QUANTILE_LEVELS
        .iter()
        .chain(&IGNORED_HUB_LEVELS)
        .copied()
        .collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    let locations: Vec<String> = (0..cfg.num_locations)
        .map(|l| format!("L{:02}", l + 1))
        .collect();
    let models: Vec<String> = (0..cfg.num_models).map(model_name).collect();
    let day = |w: usize| cfg.first_week.plus_days(7 * w as i32);

    let mut out = SyntheticHub {
        forecasts: Vec::new(),
        truth: Vec::new(),
        gaps: Vec::new(),
        rising: Vec::new(),
    };
    for (loc, loc_name) in locations.iter().enumerate() {
        let mut r: StreamRng = rng::stream(cfg.seed, &format!("synth/{loc_name}"));
        let peak = rng::uniform(&mut r, 30.0, 300.0);
        let shifts: Vec<(f64, f64)> = WAVES
            .iter()
            .map(|_| {
                (
                    rng::uniform(&mut r, -2.0, 2.0),
                    rng::uniform(&mut r, 0.7, 1.3),
                )
            })
            .collect();
        let smooth: Vec<f64> = (0..n)
            .map(|w| {
                let t = w as f64;
                let waves: f64 = WAVES
                    .iter()
                    .zip(&shifts)
                    .map(|(&(c, s, a), &(dc, da))| a * da * sech2((t - c - dc) / s))
                    .sum();
                peak * (0.08 + waves)
            })
            .collect();
        let observed: Vec<f64> = smooth
            .iter()
            .map(|&s| math::round(s + math::sqrt(s) * rng::normal(&mut r)).max(0.0))
            .collect();
        let rising: Vec<bool> = (0..n)
            .map(|w| w == 0 || smooth[w] >= smooth[w - 1])
            .collect();

        let missing = planted_gaps(loc, cfg.num_models);
        for (m, model) in models.iter().enumerate() {
            for w in 0..n {
                let (median, spread) = match m {
                    0 => (smooth[w] * if rising[w] { 1.0 } else { 1.5 }, 0.12),
                    1 => (smooth[w] * if rising[w] { 0.55 } else { 1.0 }, 0.12),
                    _ => {
                        let k = (m - 2) % PERSISTENCE_BIAS.len();
                        (
                            observed[w.saturating_sub(1)].max(1.0) * (1.0 + PERSISTENCE_BIAS[k]),
                            PERSISTENCE_SPREAD[k],
                        )
                    }
                };
                let noise = math::exp(0.05 * rng::normal(&mut r));
                if let Some(rule) = missing.iter().find(|g| g.0 == m && g.1 == w).map(|g| g.2) {
                    out.gaps.push(InjectedGap {
                        model: model.clone(),
                        location: loc_name.clone(),
                        week_ending: day(w),
                        rule,
                    });
                    continue;
                }
                for &q in &levels {
                    out.forecasts.push(ForecastRecord {
                        model: model.clone(),
                        location: loc_name.clone(),
                        target_end_date: day(w),
                        quantile: q,
                        value: median * noise * math::exp(spread * logit(q) / 1.7),
                    });
                }
            }
        }
        for (w, &v) in observed.iter().enumerate() {
            out.truth.push(TruthRecord {
                location: loc_name.clone(),
                week_ending: day(w),
                value: v,
            });
        }
        out.rising.push(rising);
    }
    Ok(out)
}

/// `(model, week, rule)` cells left out for one location.
fn planted_gaps(loc: usize, num_models: usize) -> Vec<(usize, usize, ImputationRule)> {
    let mut gaps = Vec::new();
    let short_a = loc % num_models;
    let short_b = (loc + 3) % num_models;
    let long = (loc + 5) % num_models;
    gaps.push((short_a, 20 + loc, ImputationRule::Interpolated));
    for w in 40..42 {
        gaps.push((short_b, w, ImputationRule::Interpolated));
    }
    for w in 60..64 {
        gaps.push((long, w, ImputationRule::EnsembleMean));
    }
    if loc % 4 == 0 {
        for m in 0..num_models {
            for w in 90..93 {
                gaps.push((m, w, ImputationRule::NearestValue));
            }
        }
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covid::impute_missing;

    #[test]
    fn deterministic_and_covers_every_rule() {
        let cfg = SyntheticConfig::default();
        let a = synthesize_hub_data(&cfg).unwrap();
        assert_eq!(a, synthesize_hub_data(&cfg).unwrap());
        let (table, truth, report) = a.tables().unwrap();
        assert_eq!(table.num_models(), 9);
        assert_eq!(table.num_locations(), 8);
        assert_eq!(table.num_weeks(), 120);
        assert_eq!(table.weeks.last().unwrap().to_string(), "2022-11-05");
        assert_eq!(report.partial_cells, 0);
        assert_eq!(table.missing_cells(), a.gaps.len());
        assert!(truth.get(3, 50).is_some());
        let (filled, log) = impute_missing(&table).unwrap();
        assert!(filled.is_complete());
        assert_eq!(log.len(), a.gaps.len());
        for g in &a.gaps {
            let m = table.models.iter().position(|x| *x == g.model).unwrap();
            let l = table
                .locations
                .iter()
                .position(|x| *x == g.location)
                .unwrap();
            let w = table.week_index(g.week_ending).unwrap();
            let entry = log
                .iter()
                .find(|e| (e.model, e.location, e.week) == (m, l, w))
                .unwrap();
            assert_eq!(entry.rule, g.rule, "{g:?}");
        }
        for rule in [
            ImputationRule::Interpolated,
            ImputationRule::EnsembleMean,
            ImputationRule::NearestValue,
        ] {
            assert!(log.iter().any(|e| e.rule == rule));
        }
        let other = synthesize_hub_data(&SyntheticConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.truth, other.truth);
    }
}
