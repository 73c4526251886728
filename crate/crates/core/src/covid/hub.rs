use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{
    level_index, sort_repair, weekly_grid, Day, ForecastTable, Quantiles, TruthTable,
    IGNORED_HUB_LEVELS, NUM_QUANTILES,
};
use crate::{Error, RecordKind, Result};

/// One row of a hub quantile-forecast file.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub model: String,
    pub location: String,
    pub target_end_date: Day,
    pub quantile: f64,
    pub value: f64,
}

/// One row of a hub truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub location: String,
    pub week_ending: Day,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// Records at accepted levels that are not modelled.
    pub dropped_records: usize,
    /// `(model, location, week)` cells with some but not all modelled levels;
    /// they are treated as missing.
    pub partial_cells: usize,
    /// Complete cells whose values were not monotone in level and were sorted.
    pub repaired_cells: usize,
}

/// Assembles dense tables from hub records. Models and locations are sorted
/// by name so the result does not depend on record order. Errors name the
/// offending record by its position in the input slice. No records at all
/// give empty tables.
pub fn tables_from_records(
    forecasts: &[ForecastRecord],
    truth: &[TruthRecord],
) -> Result<(ForecastTable, TruthTable, IngestReport)> {
    let record_err = |index: usize, message: String| Error::Record {
        kind: RecordKind::Forecast,
        index,
        message,
    };
    let truth_err = |index: usize, message: String| Error::Record {
        kind: RecordKind::Truth,
        index,
        message,
    };
    let mut report = IngestReport::default();
    let mut models = BTreeSet::new();
    let mut locations = BTreeSet::new();
    let mut days = BTreeSet::new();
    for r in forecasts {
        models.insert(r.model.as_str());
        locations.insert(r.location.as_str());
        days.insert(r.target_end_date);
    }
    for r in truth {
        locations.insert(r.location.as_str());
        days.insert(r.week_ending);
    }
    let (Some(&first), Some(&last)) = (days.first(), days.last()) else {
        return Ok((
            ForecastTable::new(Vec::new(), Vec::new(), Vec::new()),
            TruthTable::new(Vec::new(), Vec::new()),
            report,
        ));
    };
    let grid = weekly_grid(first, first.plus_days(7 * ((last.0 - first.0) / 7)))?;
    let week_of = |d: Day| -> Option<usize> {
        let off = d.0 - first.0;
        (off % 7 == 0).then_some((off / 7) as usize)
    };
    let models: Vec<String> = models.into_iter().map(String::from).collect();
    let locations: Vec<String> = locations.into_iter().map(String::from).collect();
    let model_idx: BTreeMap<&str, usize> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let loc_idx: BTreeMap<&str, usize> = locations
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();

    let mut cells: BTreeMap<(usize, usize, usize), [Option<f64>; NUM_QUANTILES]> = BTreeMap::new();
    for (i, r) in forecasts.iter().enumerate() {
        if !(r.value.is_finite() && r.value >= 0.0) {
            return Err(record_err(
                i,
                format!("forecast value {} is not a non-negative number", r.value),
            ));
        }
        let Some(w) = week_of(r.target_end_date) else {
            return Err(record_err(
                i,
                format!(
                    "date {} is off the weekly grid starting {first}",
                    r.target_end_date
                ),
            ));
        };
        let k = match level_index(r.quantile) {
            Some(k) => k,
            None if IGNORED_HUB_LEVELS
                .iter()
                .any(|l| (l - r.quantile).abs() < 1e-9) =>
            {
                report.dropped_records += 1;
                continue;
            }
            None => {
                return Err(record_err(
                    i,
                    format!("unsupported quantile level {}", r.quantile),
                ))
            }
        };
        let key = (model_idx[r.model.as_str()], loc_idx[r.location.as_str()], w);
        let cell = cells.entry(key).or_insert([None; NUM_QUANTILES]);
        if cell[k].is_some() {
            return Err(record_err(
                i,
                format!(
                    "duplicate quantile {} for {} {} {}",
                    r.quantile, r.model, r.location, r.target_end_date
                ),
            ));
        }
        cell[k] = Some(r.value);
    }
    let mut table = ForecastTable::new(models, locations.clone(), grid.clone());
    for ((m, l, w), cell) in cells {
        let full: Option<Vec<f64>> = cell.iter().copied().collect();
        match full {
            Some(v) => {
                let mut q: Quantiles = v.try_into().expect("21 levels");
                if sort_repair(&mut q) {
                    report.repaired_cells += 1;
                }
                table.set(m, l, w, Some(q));
            }
            None => report.partial_cells += 1,
        }
    }
    let mut truth_table = TruthTable::new(locations.clone(), grid);
    for (i, r) in truth.iter().enumerate() {
        if !(r.value.is_finite() && r.value >= 0.0) {
            return Err(truth_err(
                i,
                format!("incident deaths {} is not a non-negative number", r.value),
            ));
        }
        let Some(w) = week_of(r.week_ending) else {
            return Err(truth_err(
                i,
                format!(
                    "date {} is off the weekly grid starting {first}",
                    r.week_ending
                ),
            ));
        };
        let l = loc_idx[r.location.as_str()];
        if truth_table.get(l, w).is_some() {
            return Err(truth_err(
                i,
                format!("duplicate truth for {} {}", r.location, r.week_ending),
            ));
        }
        truth_table.set(l, w, Some(r.value));
    }
    Ok((table, truth_table, report))
}
