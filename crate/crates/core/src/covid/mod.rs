//! Weekly quantile forecasts in hub layout: tables, missing-data imputation,
//! WIS-trained pooling, and a synthetic data generator.
//!
//! Quantile vectors always use the [`QUANTILE_LEVELS`] layout: the median
//! first, then the remaining levels in increasing order.

mod hub;
mod impute;
mod pipeline;
mod synth;

pub use hub::{tables_from_records, ForecastRecord, IngestReport, TruthRecord};
pub use impute::{impute_missing, ImputationEntry, ImputationLog, ImputationRule};
pub use pipeline::{
    build_samples, evaluate_baselines, evaluate_covid, mean_wis, train_covid, CovidMethod,
    CovidModel, CovidModelSpec, CovidSample, CovidTrainOutput, SampleSet, SkippedWeek, WisLoss,
    WisRow,
};
pub use synth::{synthesize_hub_data, InjectedGap, SyntheticConfig, SyntheticHub};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

pub const NUM_QUANTILES: usize = 21;

/// Modelled quantile levels, median first.
pub const QUANTILE_LEVELS: [f64; NUM_QUANTILES] = [
    0.5, 0.01, 0.025, 0.05, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8,
    0.85, 0.95, 0.975, 0.99,
];

/// Hub levels that are accepted on input but not modelled.
pub const IGNORED_HUB_LEVELS: [f64; 2] = [0.1, 0.9];

/// Positions of [`QUANTILE_LEVELS`] sorted by level.
pub const ASCENDING: [usize; NUM_QUANTILES] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20,
];

pub type Quantiles = [f64; NUM_QUANTILES];

/// Position of `level` in [`QUANTILE_LEVELS`].
pub fn level_index(level: f64) -> Option<usize> {
    QUANTILE_LEVELS
        .iter()
        .position(|&l| (l - level).abs() < 1e-9)
}

pub fn is_monotone(q: &Quantiles) -> bool {
    ASCENDING.windows(2).all(|w| q[w[0]] <= q[w[1]])
}

/// Sorts the values into level order; returns whether anything moved.
pub fn sort_repair(q: &mut Quantiles) -> bool {
    if is_monotone(q) {
        return false;
    }
    let mut vals: Vec<f64> = ASCENDING.iter().map(|&i| q[i]).collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    for (k, &i) in ASCENDING.iter().enumerate() {
        q[i] = vals[k];
    }
    true
}

/// Calendar day as a count of days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

impl Day {
    pub fn from_ymd(y: i32, m: u32, d: u32) -> Result<Self> {
        if !(1..=12).contains(&m) || d == 0 || d > days_in_month(y, m) {
            return Err(Error::InvalidArgument(alloc::format!(
                "invalid date {y:04}-{m:02}-{d:02}"
            )));
        }
        let y = if m <= 2 { y - 1 } else { y };
        let era = if y >= 0 { y } else { y - 399 } / 400;
        let yoe = (y - era * 400) as u32;
        let mp = if m > 2 { m - 3 } else { m + 9 };
        let doy = (153 * mp + 2) / 5 + d - 1;
        let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        Ok(Day(era * 146_097 + doe as i32 - 719_468))
    }

    pub fn ymd(&self) -> (i32, u32, u32) {
        let z = self.0 + 719_468;
        let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
        let doe = (z - era * 146_097) as u32;
        let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
        let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
        let mp = (5 * doy + 2) / 153;
        let d = doy - (153 * mp + 2) / 5 + 1;
        let m = if mp < 10 { mp + 3 } else { mp - 9 };
        let y = yoe as i32 + era * 400 + if m <= 2 { 1 } else { 0 };
        (y, m, d)
    }

    pub fn plus_days(&self, n: i32) -> Day {
        Day(self.0 + n)
    }
}

fn days_in_month(y: i32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 => 29,
        _ => 28,
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = self.ymd();
        write!(f, "{y:04}-{m:02}-{d:02}")
    }
}

impl FromStr for Day {
    type Err = Error;

    /// `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(alloc::format!("expected YYYY-MM-DD, got {s:?}"));
        let b = s.as_bytes();
        if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
            return Err(bad());
        }
        let y: i32 = s[0..4].parse().map_err(|_| bad())?;
        let m: u32 = s[5..7].parse().map_err(|_| bad())?;
        let d: u32 = s[8..10].parse().map_err(|_| bad())?;
        Day::from_ymd(y, m, d)
    }
}

/// Inclusive range of week-ending dates held out for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationPeriod {
    pub start: Day,
    pub end: Day,
}

impl ValidationPeriod {
    pub fn contains(&self, day: Day) -> bool {
        self.start <= day && day <= self.end
    }

    /// The four evaluation windows of the hub study.
    pub fn defaults() -> Vec<ValidationPeriod> {
        let p = |a: (i32, u32, u32), b: (i32, u32, u32)| ValidationPeriod {
            start: Day::from_ymd(a.0, a.1, a.2).expect("valid date"),
            end: Day::from_ymd(b.0, b.1, b.2).expect("valid date"),
        };
        vec![
            p((2020, 8, 29), (2021, 2, 20)),
            p((2021, 6, 5), (2021, 10, 30)),
            p((2021, 12, 21), (2022, 6, 18)),
            p((2022, 7, 9), (2022, 11, 5)),
        ]
    }

    pub fn check_disjoint(periods: &[ValidationPeriod]) -> Result<()> {
        for (i, a) in periods.iter().enumerate() {
            if a.start > a.end {
                return Err(Error::InvalidArgument(alloc::format!(
                    "period {i} ends before it starts"
                )));
            }
            for b in &periods[i + 1..] {
                if a.start <= b.end && b.start <= a.end {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "validation periods {}..{} and {}..{} overlap",
                        a.start,
                        a.end,
                        b.start,
                        b.end
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dense `(model, location, week)` table of quantile forecasts on a
/// consecutive weekly grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub models: Vec<String>,
    pub locations: Vec<String>,
    pub weeks: Vec<Day>,
    cells: Vec<Option<Quantiles>>,
}

impl ForecastTable {
    pub fn new(models: Vec<String>, locations: Vec<String>, weeks: Vec<Day>) -> Self {
        let n = models.len() * locations.len() * weeks.len();
        Self {
            models,
            locations,
            weeks,
            cells: vec![None; n],
        }
    }

    #[inline]
    fn idx(&self, m: usize, loc: usize, w: usize) -> usize {
        (m * self.locations.len() + loc) * self.weeks.len() + w
    }

    pub fn get(&self, m: usize, loc: usize, w: usize) -> Option<&Quantiles> {
        self.cells[self.idx(m, loc, w)].as_ref()
    }

    pub fn set(&mut self, m: usize, loc: usize, w: usize, q: Option<Quantiles>) {
        let i = self.idx(m, loc, w);
        self.cells[i] = q;
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn num_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn week_index(&self, day: Day) -> Option<usize> {
        self.weeks.binary_search(&day).ok()
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_cells() == 0
    }
}

/// Observed weekly incident deaths on the same grid as a [`ForecastTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub locations: Vec<String>,
    pub weeks: Vec<Day>,
    values: Vec<Option<f64>>,
}

impl TruthTable {
    pub fn new(locations: Vec<String>, weeks: Vec<Day>) -> Self {
        let n = locations.len() * weeks.len();
        Self {
            locations,
            weeks,
            values: vec![None; n],
        }
    }

    pub fn get(&self, loc: usize, w: usize) -> Option<f64> {
        self.values[loc * self.weeks.len() + w]
    }

    pub fn set(&mut self, loc: usize, w: usize, v: Option<f64>) {
        let n = self.weeks.len();
        self.values[loc * n + w] = v;
    }
}

/// Consecutive weekly grid from `first` through `last` inclusive.
pub fn weekly_grid(first: Day, last: Day) -> Result<Vec<Day>> {
    if (last.0 - first.0) % 7 != 0 || last < first {
        return Err(Error::InvalidArgument(alloc::format!(
            "dates {first} and {last} are not on a common weekly grid"
        )));
    }
    Ok((0..=(last.0 - first.0) / 7)
        .map(|k| first.plus_days(7 * k))
        .collect())
}
