//! The COVID-19 hub experiment: ingestion, imputation, leave-one-period-out
//! training of each pooling method, and held-out WIS tables.

use std::collections::BTreeMap;

use attnpool_core::covid::{
    build_samples, evaluate_baselines, evaluate_covid, impute_missing, mean_wis,
    synthesize_hub_data, tables_from_records, ForecastRecord, ImputationLog, IngestReport,
    InjectedGap, SampleSet, TruthRecord, ValidationPeriod, WisRow,
};
use attnpool_core::RecordKind;
use log::info;

use crate::checkpoint::Checkpoint;
use crate::config::{CovidPlan, CovidSource};
use crate::io::{
    num, read_forecasts, read_truth, record_line, write_forecasts, write_truth, CsvTable, DataError,
};
use crate::output::OutputDir;
use crate::RunError;

pub struct HubData {
    pub forecasts: Vec<ForecastRecord>,
    pub truth: Vec<TruthRecord>,
    /// Present for generated data.
    pub gaps: Option<Vec<InjectedGap>>,
}

pub fn load_hub(plan: &CovidPlan) -> Result<HubData, RunError> {
    match &plan.source {
        CovidSource::Synthetic { .. } => {
            let hub = synthesize_hub_data(&plan.synthetic_config().expect("synthetic source"))?;
            Ok(HubData {
                forecasts: hub.forecasts,
                truth: hub.truth,
                gaps: Some(hub.gaps),
            })
        }
        CovidSource::Files { forecasts, truth } => Ok(HubData {
            forecasts: read_forecasts(forecasts)?,
            truth: read_truth(truth)?,
            gaps: None,
        }),
    }
}

/// Writes `forecasts.csv`, `truth.csv`, and `injected_gaps.csv` for generated data.
pub fn write_hub(out: &mut OutputDir, hub: &HubData) -> Result<(), RunError> {
    write_forecasts(&out.file("forecasts.csv")?, &hub.forecasts)?;
    write_truth(&out.file("truth.csv")?, &hub.truth)?;
    if let Some(gaps) = &hub.gaps {
        let mut t = CsvTable::create(
            &out.file("injected_gaps.csv")?,
            &["model", "location", "week", "rule"],
        )?;
        for g in gaps {
            t.row(&[
                g.model.clone(),
                g.location.clone(),
                g.week_ending.to_string(),
                g.rule.name().to_string(),
            ])?;
        }
        t.finish()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodResult {
    pub period: ValidationPeriod,
    pub method: String,
    pub mean_wis: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovidOutcome {
    pub ingest: IngestReport,
    pub imputation: ImputationLog,
    pub injected_gaps: Option<usize>,
    pub complete_after_imputation: bool,
    pub idempotent: bool,
    /// Trained methods plus `uniform_mean` and `best_single` per period.
    pub summary: Vec<PeriodResult>,
    /// Every candidate's held-out mean WIS per period.
    pub candidates: Vec<PeriodResult>,
    /// Held-out forecasts of each trained method that needed sorting.
    pub sort_repairs: BTreeMap<String, usize>,
    /// Pooled held-out rows across all periods.
    pub overall: BTreeMap<String, f64>,
}

impl CovidOutcome {
    pub fn mean(&self, method: &str, period: &ValidationPeriod) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.period == *period)
            .map(|r| r.mean_wis)
    }
}

fn record_error(e: attnpool_core::Error, plan: &CovidPlan) -> RunError {
    match (e, &plan.source) {
        (
            attnpool_core::Error::Record {
                kind,
                index,
                message,
            },
            CovidSource::Files { forecasts, truth },
        ) => RunError::Data(DataError::Row {
            path: match kind {
                RecordKind::Forecast => forecasts.clone(),
                RecordKind::Truth => truth.clone(),
            },
            line: record_line(index),
            message,
        }),
        (e, _) => RunError::Core(e),
    }
}

pub fn run_covid(plan: &CovidPlan, out: &mut OutputDir) -> Result<CovidOutcome, RunError> {
    let hub = load_hub(plan)?;
    let (table, truth, ingest) =
        tables_from_records(&hub.forecasts, &hub.truth).map_err(|e| record_error(e, plan))?;
    info!(
        "ingested {} models x {} locations x {} weeks; {} cells missing, {} sorted, {} partial",
        table.num_models(),
        table.num_locations(),
        table.num_weeks(),
        table.missing_cells(),
        ingest.repaired_cells,
        ingest.partial_cells
    );
    let (filled, log) = impute_missing(&table)?;
    let idempotent = impute_missing(&filled)?.0 == filled && impute_missing(&filled)?.1.is_empty();
    let mut t = CsvTable::create(
        &out.file("imputation_log.csv")?,
        &["model", "location", "week", "rule"],
    )?;
    for e in &log {
        t.row(&[
            table.models[e.model].clone(),
            table.locations[e.location].clone(),
            table.weeks[e.week].to_string(),
            e.rule.name().to_string(),
        ])?;
    }
    t.finish()?;

    let mut sets: BTreeMap<usize, SampleSet> = BTreeMap::new();
    for m in &plan.methods {
        if !sets.contains_key(&m.delay) {
            sets.insert(m.delay, build_samples(&truth, &filled, m.delay)?);
        }
    }
    let baseline_delay = *sets.keys().last().expect("at least one method");
    let periods = plan.validation_periods();

    let mut wis_table = CsvTable::create(
        &out.file("wis_by_week.csv")?,
        &["method", "location", "target_week", "wis"],
    )?;
    let mut loss_table = CsvTable::create(
        &out.file("loss_curve.csv")?,
        &["period_start", "period_end", "method", "epoch", "loss"],
    )?;
    let mut summary = Vec::new();
    let mut candidates = Vec::new();
    let mut sort_repairs: BTreeMap<String, usize> = BTreeMap::new();
    let mut pooled: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut write_rows = |method: &str,
                          set: &SampleSet,
                          rows: &[WisRow],
                          t: &mut CsvTable|
     -> Result<(), RunError> {
        for r in rows {
            t.row(&[
                method.to_string(),
                set.locations[r.location].clone(),
                r.target_day.to_string(),
                num(r.wis),
            ])?;
            let e = pooled.entry(method.to_string()).or_default();
            e.0 += r.wis;
            e.1 += 1;
        }
        Ok(())
    };
    for period in &periods {
        let push = |list: &mut Vec<PeriodResult>, method: &str, rows: &[WisRow]| {
            list.push(PeriodResult {
                period: *period,
                method: method.into(),
                mean_wis: mean_wis(rows),
                rows: rows.len(),
            })
        };
        for m in &plan.methods {
            let set = &sets[&m.delay];
            let start = std::time::Instant::now();
            let trained = attnpool_core::covid::train_covid(&m.spec(), set, period, plan.seed)?;
            let rows = evaluate_covid(&trained, set)?;
            let curve = &trained.report.loss_curve;
            info!(
                "{} held out {}..{}: train WIS {:.3} -> {:.3}, held-out WIS {:.3} ({:.1}s)",
                m.name,
                period.start,
                period.end,
                curve.first().copied().unwrap_or(f64::NAN),
                curve.last().copied().unwrap_or(f64::NAN),
                mean_wis(&rows),
                start.elapsed().as_secs_f64()
            );
            for (e, v) in curve.iter().enumerate() {
                loss_table.row(&[
                    period.start.to_string(),
                    period.end.to_string(),
                    m.name.clone(),
                    (e + 1).to_string(),
                    num(*v),
                ])?;
            }
            Checkpoint::of_covid(&trained.model)
                .save(&out.file(&format!("models/{}_{}.json", m.name, period.start))?)?;
            *sort_repairs.entry(m.name.clone()).or_default() +=
                rows.iter().filter(|r| r.repaired).count();
            write_rows(&m.name, set, &rows, &mut wis_table)?;
            push(&mut summary, &m.name, &rows);
        }
        let set = &sets[&baseline_delay];
        let baselines = evaluate_baselines(set, period)?;
        let (uniform, singles) = baselines.split_first().expect("uniform baseline first");
        write_rows(&uniform.0, set, &uniform.1, &mut wis_table)?;
        push(&mut summary, &uniform.0, &uniform.1);
        let mut best: Option<(&str, f64)> = None;
        for (name, rows) in singles {
            push(&mut candidates, name, rows);
            let v = mean_wis(rows);
            if best.is_none_or(|b| v < b.1) {
                best = Some((name, v));
            }
        }
        if let Some((name, _)) = best {
            let rows = &singles.iter().find(|s| s.0 == name).expect("present").1;
            write_rows("best_single", set, rows, &mut wis_table)?;
            push(&mut summary, "best_single", rows);
        }
    }
    wis_table.finish()?;
    loss_table.finish()?;
    let mut t = CsvTable::create(
        &out.file("period_summary.csv")?,
        &["period_start", "period_end", "method", "mean_wis"],
    )?;
    for r in &summary {
        t.row(&[
            r.period.start.to_string(),
            r.period.end.to_string(),
            r.method.clone(),
            num(r.mean_wis),
        ])?;
    }
    t.finish()?;
    let mut t = CsvTable::create(
        &out.file("candidate_summary.csv")?,
        &["period_start", "period_end", "model", "mean_wis"],
    )?;
    for r in &candidates {
        t.row(&[
            r.period.start.to_string(),
            r.period.end.to_string(),
            r.method.clone(),
            num(r.mean_wis),
        ])?;
    }
    t.finish()?;

    Ok(CovidOutcome {
        ingest,
        injected_gaps: hub.gaps.as_ref().map(|g| g.len()),
        complete_after_imputation: filled.is_complete(),
        idempotent,
        imputation: log,
        summary,
        candidates,
        sort_repairs,
        overall: pooled
            .into_iter()
            .map(|(k, (s, n))| (k, s / n.max(1) as f64))
            .collect(),
    })
}
