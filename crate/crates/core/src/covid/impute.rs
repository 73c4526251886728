use alloc::format;
use alloc::vec::Vec;

use super::{ForecastTable, Quantiles, NUM_QUANTILES};
use crate::{Error, Result};

/// Longest run of missing weeks that is bridged by interpolation.
const MAX_INTERPOLATED_GAP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImputationRule {
    /// Linear interpolation between the forecasts either side of a short gap.
    Interpolated,
    /// Mean of the other models' forecasts for the same location and week.
    EnsembleMean,
    /// Copy of the model's own nearest forecast in time.
    NearestValue,
}

impl ImputationRule {
    pub fn name(&self) -> &'static str {
        match self {
            ImputationRule::Interpolated => "interpolated",
            ImputationRule::EnsembleMean => "ensemble_mean",
            ImputationRule::NearestValue => "nearest_value",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImputationEntry {
    pub model: usize,
    pub location: usize,
    pub week: usize,
    pub rule: ImputationRule,
}

pub type ImputationLog = Vec<ImputationEntry>;

/// Fills every missing cell of `table`. Only cells present in the input are
/// used as sources, so the result does not depend on fill order.
pub fn impute_missing(table: &ForecastTable) -> Result<(ForecastTable, ImputationLog)> {
    let mut out = table.clone();
    let mut log = Vec::new();
    let n = table.num_weeks();
    for m in 0..table.num_models() {
        for loc in 0..table.num_locations() {
            let mut w = 0;
            while w < n {
                if table.get(m, loc, w).is_some() {
                    w += 1;
                    continue;
                }
                let start = w;
                while w < n && table.get(m, loc, w).is_none() {
                    w += 1;
                }
                fill_gap(table, &mut out, &mut log, m, loc, start, w)?;
            }
        }
    }
    Ok((out, log))
}

/// Fills weeks `start..end` of one model and location.
fn fill_gap(
    src: &ForecastTable,
    out: &mut ForecastTable,
    log: &mut ImputationLog,
    m: usize,
    loc: usize,
    start: usize,
    end: usize,
) -> Result<()> {
    let n = src.num_weeks();
    let len = end - start;
    if start > 0 && end < n && len <= MAX_INTERPOLATED_GAP {
        let a = *src.get(m, loc, start - 1).expect("gap is maximal");
        let b = *src.get(m, loc, end).expect("gap is maximal");
        for w in start..end {
            let t = (w + 1 - start) as f64 / (len + 1) as f64;
            let q: Quantiles = core::array::from_fn(|k| a[k] + t * (b[k] - a[k]));
            out.set(m, loc, w, Some(q));
            log.push(ImputationEntry {
                model: m,
                location: loc,
                week: w,
                rule: ImputationRule::Interpolated,
            });
        }
        return Ok(());
    }
    let past = start.checked_sub(1);
    let future = (end < n).then_some(end);
    if past.is_none() && future.is_none() {
        return Err(Error::InvalidArgument(format!(
            "model {} has no forecasts for location {}",
            src.models[m], src.locations[loc]
        )));
    }
    for w in start..end {
        let (q, rule) = match ensemble_mean(src, m, loc, w) {
            Some(q) => (q, ImputationRule::EnsembleMean),
            None => {
                let source = match (past, future) {
                    (Some(p), Some(f)) => {
                        if w - p <= f - w {
                            p
                        } else {
                            f
                        }
                    }
                    (Some(p), None) => p,
                    (None, Some(f)) => f,
                    (None, None) => unreachable!(),
                };
                (
                    *src.get(m, loc, source).expect("source is observed"),
                    ImputationRule::NearestValue,
                )
            }
        };
        out.set(m, loc, w, Some(q));
        log.push(ImputationEntry {
            model: m,
            location: loc,
            week: w,
            rule,
        });
    }
    Ok(())
}

fn ensemble_mean(src: &ForecastTable, m: usize, loc: usize, w: usize) -> Option<Quantiles> {
    let mut sum = [0.0; NUM_QUANTILES];
    let mut count = 0usize;
    for other in (0..src.num_models()).filter(|&o| o != m) {
        if let Some(q) = src.get(other, loc, w) {
            for (s, v) in sum.iter_mut().zip(q) {
                *s += v;
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.map(|s| s / count as f64))
}
