//! The `attnpool` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{self, ExperimentKind, Plan};
use crate::covid_run::{load_hub, run_covid, write_hub};
use crate::lorenz_run::{run_lorenz, write_dataset};
use crate::output::{finish_run, ManifestInfo, OutputDir, RunClock};
use crate::{ConfigError, ConfigErrors, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "attnpool",
    about = "Attention-pooled ensemble forecasting experiments",
    disable_version_flag = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads for validation forecasts.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the Lorenz training and validation trajectories.
    LorenzData(RunArgs),
    /// Train and validate every configured Lorenz method.
    LorenzRun(RunArgs),
    /// Generate synthetic hub-format forecast and truth files.
    CovidSynth(RunArgs),
    /// Leave-one-period-out training and evaluation on hub data.
    CovidRun(RunArgs),
    /// Check a configuration file and print the resolved settings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

fn load_plan(args: &RunArgs, want: ExperimentKind) -> Result<(Plan, PathBuf), RunError> {
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output = Some(out.clone());
    }
    if args.threads == 0 {
        return Err(ConfigErrors(vec![ConfigError {
            key: "--threads".into(),
            message: "must be at least 1".into(),
        }])
        .into());
    }
    if cfg.experiment != want {
        return Err(ConfigErrors(vec![ConfigError {
            key: "experiment".into(),
            message: format!(
                "this command needs a {} configuration, not {}",
                want.name(),
                cfg.experiment.name()
            ),
        }])
        .into());
    }
    let plan = cfg.plan()?;
    Ok((plan, cfg.output.expect("validated output")))
}

fn finish(
    out: OutputDir,
    clock: RunClock,
    command: &str,
    plan: &Plan,
    threads: usize,
    counters: BTreeMap<String, serde_json::Value>,
) -> Result<(), RunError> {
    let experiment = match plan {
        Plan::Lorenz(_) => "lorenz",
        Plan::Covid(_) => "covid",
    };
    let m = finish_run(
        out,
        clock,
        ManifestInfo {
            command,
            experiment,
            seed: plan.seed(),
            config_hash: plan.hash(),
            threads,
            counters,
        },
    )?;
    log::info!(
        "wrote {} files in {:.1}s",
        m.files.len() + 1,
        m.wall_clock_seconds
    );
    Ok(())
}

fn lorenz_data(args: &RunArgs) -> Result<(), RunError> {
    let (plan, root) = load_plan(args, ExperimentKind::Lorenz)?;
    let Plan::Lorenz(p) = &plan else {
        unreachable!()
    };
    let clock = RunClock::start();
    let mut out = OutputDir::create(&root)?;
    let data = write_dataset(&mut out, &p.dataset_config())?;
    let counters = BTreeMap::from([
        ("train_samples".to_string(), json!(data.train.len())),
        (
            "validation_samples".to_string(),
            json!(data.validation.len()),
        ),
        (
            "max_abs_state".to_string(),
            json!(data.train.max_abs().max(data.validation.max_abs())),
        ),
    ]);
    finish(out, clock, "lorenz-data", &plan, 1, counters)
}

fn lorenz_run(args: &RunArgs) -> Result<(), RunError> {
    let (plan, root) = load_plan(args, ExperimentKind::Lorenz)?;
    let Plan::Lorenz(p) = &plan else {
        unreachable!()
    };
    let clock = RunClock::start();
    let mut out = OutputDir::create(&root)?;
    let outcome = run_lorenz(p, &mut out, args.threads)?;
    let mut counters = BTreeMap::new();
    for s in &outcome.summaries {
        counters.insert(
            format!("median_valid_time/{}/l{}", s.method, s.delay),
            json!(s.median),
        );
    }
    finish(out, clock, "lorenz-run", &plan, args.threads, counters)
}

fn covid_synth(args: &RunArgs) -> Result<(), RunError> {
    let (plan, root) = load_plan(args, ExperimentKind::Covid)?;
    let Plan::Covid(p) = &plan else {
        unreachable!()
    };
    if p.synthetic_config().is_none() {
        return Err(ConfigErrors(vec![ConfigError {
            key: "covid.synthetic".into(),
            message: "covid-synth needs synthetic = true".into(),
        }])
        .into());
    }
    let clock = RunClock::start();
    let mut out = OutputDir::create(&root)?;
    let hub = load_hub(p)?;
    write_hub(&mut out, &hub)?;
    let counters = BTreeMap::from([
        ("forecast_records".to_string(), json!(hub.forecasts.len())),
        ("truth_records".to_string(), json!(hub.truth.len())),
        (
            "injected_gaps".to_string(),
            json!(hub.gaps.as_ref().map_or(0, |g| g.len())),
        ),
    ]);
    finish(out, clock, "covid-synth", &plan, 1, counters)
}

fn covid_run(args: &RunArgs) -> Result<(), RunError> {
    let (plan, root) = load_plan(args, ExperimentKind::Covid)?;
    let Plan::Covid(p) = &plan else {
        unreachable!()
    };
    let clock = RunClock::start();
    let mut out = OutputDir::create(&root)?;
    let outcome = run_covid(p, &mut out)?;
    let counters = BTreeMap::from([
        (
            "ingest_dropped_records".to_string(),
            json!(outcome.ingest.dropped_records),
        ),
        (
            "ingest_partial_cells".to_string(),
            json!(outcome.ingest.partial_cells),
        ),
        (
            "ingest_sorted_cells".to_string(),
            json!(outcome.ingest.repaired_cells),
        ),
        ("imputed_cells".to_string(), json!(outcome.imputation.len())),
        (
            "output_sort_repairs".to_string(),
            json!(outcome.sort_repairs),
        ),
        ("overall_mean_wis".to_string(), json!(outcome.overall)),
    ]);
    finish(out, clock, "covid-run", &plan, 1, counters)
}

fn validate(path: &Path) -> Result<(), RunError> {
    let plan = config::load(path)?.plan()?;
    println!(
        "{}",
        serde_json::to_string_pretty(&plan).expect("plan serializes")
    );
    println!("config hash {}", plan.hash());
    Ok(())
}

/// Runs the tool and returns the process exit code: 0 on success, 1 for
/// usage or configuration errors, 2 for failures while running.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::LorenzData(a) => lorenz_data(a),
        Command::LorenzRun(a) => lorenz_run(a),
        Command::CovidSynth(a) => covid_synth(a),
        Command::CovidRun(a) => covid_run(a),
        Command::Validate { config } => validate(config),
        Command::Version => {
            println!("attnpool {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                RunError::Config(errs) => {
                    for err in &errs.0 {
                        eprintln!("config error: {err}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}
