use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use stormbench_core::classify::{
    aggregate_ledger, observation_table, read_ledger, read_observations, ObservationTable, ValidWindow,
};
use stormbench_core::harness::{
    generate_season, load_history, operator_divergence, read_snapshot, run_experiment, write_divergence, write_season,
    GenOptions, HarnessError,
};
use stormbench_core::scoring::{climatology_triples, read_forecasts, scoreboard};
use stormbench_core::{Answer, ExperimentConfig, RunOptions, ScoreMode, ScoreOptions, Zone};

/// Run, score and replay severe-storm forecaster intercomparisons.
#[derive(Debug, Parser)]
#[command(name = "stormbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every registered forecaster over a season and score it.
    Run(RunArgs),
    /// Score a forecasts CSV against observations.
    Score(ScoreArgs),
    /// Generate a synthetic season with a ready-to-run config.
    Gen(GenArgs),
    /// Continue a run from a saved state snapshot.
    Replay(ReplayArgs),
    /// Compare forecasts across operators.
    Divergence(DivergenceArgs),
    /// Show how one forecaster reached one forecast.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's scenario directory.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Overrides the config's report ledger.
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recorded in the output; the run itself draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    /// Ask on the terminal for answers the scenario does not provide.
    #[arg(long)]
    interactive: bool,
    #[arg(long)]
    all_operators: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    forecasts: PathBuf,
    /// Observation table (date,zone,category) or raw report ledger.
    #[arg(long)]
    obs: PathBuf,
    /// Earlier observations for the climatology reference; in-sample when absent.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value = "binary")]
    mode: ScoreMode,
    #[arg(long)]
    merge_12: bool,
    #[arg(long = "exclude-zone")]
    exclude_zone: Vec<Zone>,
    /// Also write skill.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 32)]
    days: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Four comma-separated rates for Z1..Z4.
    #[arg(long, value_delimiter = ',')]
    base_rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2.0)]
    coupling: f64,
    #[arg(long)]
    shift_at: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    shift_base_rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    operators: usize,
    #[arg(long, default_value_t = 0.15)]
    operator_disagreement: f64,
    #[arg(long)]
    history_days: Option<usize>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    from_snapshot: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DivergenceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    forecaster: String,
    #[arg(long)]
    date: NaiveDate,
    #[arg(long)]
    zone: Option<Zone>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

fn load_config(path: &Path, out: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output = absolute(o)?;
    }
    Ok(cfg)
}

/// Bad arguments that clap cannot check by itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn four(v: Option<Vec<f64>>, flag: &str) -> Result<Option<[f64; 4]>> {
    match v {
        None => Ok(None),
        Some(v) => {
            let arr: [f64; 4] = v.try_into().map_err(|_| usage(format!("--{flag} needs four values")))?;
            if arr.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(usage(format!("--{flag} values must lie in [0, 1]")));
            }
            Ok(Some(arr))
        }
    }
}

fn prompt_stdin(question: &str) -> Option<Answer> {
    eprint!("{question}? ");
    let _ = std::io::stderr().flush();
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).ok()?;
    let line = line.trim();
    if line.is_empty() {
        return None;
    }
    Some(match line.parse::<f64>() {
        Ok(x) => Answer::Numeric(x),
        Err(_) => Answer::Categorical(line.to_string()),
    })
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, a.out.as_deref())?;
    if let Some(s) = &a.scenarios {
        cfg.scenarios = absolute(s)?;
    }
    if let Some(o) = &a.obs {
        cfg.observations = absolute(o)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let prompt = prompt_stdin;
    let opts = RunOptions {
        prompt: a.interactive.then_some(&prompt as _),
        all_operators: a.all_operators,
        write: true,
        ..RunOptions::default()
    };
    let summary = run_experiment(&cfg, opts)?;
    print!("{}", summary.skill.to_text());
    eprintln!(
        "{} days, {} forecasts, {} diagnostics; outputs in {}",
        summary.days,
        summary.forecasts.len(),
        summary.diagnostics.len(),
        summary.output_dir.display()
    );
    Ok(())
}

fn read_obs(path: &Path, dates: &[NaiveDate]) -> Result<ObservationTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    if header.contains("time_utc") {
        let reports = read_ledger(text.as_bytes()).with_context(|| path.display().to_string())?;
        Ok(observation_table(&aggregate_ledger(&reports, dates.iter().copied(), ValidWindow::default())?))
    } else {
        Ok(read_observations(text.as_bytes()).with_context(|| path.display().to_string())?)
    }
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let file = std::fs::File::open(&a.forecasts).with_context(|| format!("reading {}", a.forecasts.display()))?;
    let forecasts = read_forecasts(file).with_context(|| a.forecasts.display().to_string())?;
    let mut dates: Vec<NaiveDate> = forecasts.iter().map(|f| f.date).collect();
    dates.sort();
    dates.dedup();
    let observations = read_obs(&a.obs, &dates)?;
    let reference = match &a.history {
        Some(h) => climatology_triples(&load_history(h)?)?,
        None => {
            eprintln!("note: no --history given; reference climatology is in-sample");
            let pairs: Vec<_> = observations.iter().map(|((_, z), c)| (*z, *c)).collect();
            climatology_triples(&pairs)?
        }
    };
    let opts = ScoreOptions { mode: a.mode, merge_12: a.merge_12, exclude_zones: a.exclude_zone.into_iter().collect() };
    let report = scoreboard(&forecasts, &observations, &reference, &opts)?;
    print!("{}", report.to_text());
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out)?;
        let path = out.join("skill.csv");
        report.write_csv(std::fs::File::create(&path)?).with_context(|| path.display().to_string())?;
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let defaults = GenOptions::default();
    if a.operators == 0 {
        return Err(usage("--operators must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.operator_disagreement) {
        return Err(usage("--operator-disagreement must lie in [0, 1]"));
    }
    let shift = four(a.shift_base_rates, "shift-base-rates")?;
    if a.shift_at.is_some() != shift.is_some() {
        return Err(usage("--shift-at and --shift-base-rates go together"));
    }
    let opts = GenOptions {
        days: a.days,
        seed: a.seed,
        base_rates: four(a.base_rates, "base-rates")?.unwrap_or(defaults.base_rates),
        coupling: a.coupling,
        shift_at: a.shift_at,
        shift_base_rates: shift,
        operators: a.operators,
        operator_disagreement: a.operator_disagreement,
        history_days: a.history_days.unwrap_or(defaults.history_days),
        start: a.start.unwrap_or(defaults.start),
    };
    let season = generate_season(&opts);
    write_season(&season, &a.out)?;
    eprintln!("wrote {} days to {}", season.scenarios.len(), a.out.display());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.out.as_deref())?;
    let state = read_snapshot(&a.from_snapshot)?;
    let opts = RunOptions { resume: Some(state), write: true, ..RunOptions::default() };
    let summary = run_experiment(&cfg, opts)?;
    print!("{}", summary.skill.to_text());
    eprintln!("replayed {} days; outputs in {}", summary.days, summary.output_dir.display());
    Ok(())
}

fn cmd_divergence(a: DivergenceArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.out.as_deref())?;
    let summary =
        run_experiment(&cfg, RunOptions { all_operators: true, write: a.out.is_some(), ..RunOptions::default() })?;
    let rows = match summary.divergence {
        Some(rows) => rows,
        None => operator_divergence(&summary.operator_forecasts)?,
    };
    let mut out = Vec::new();
    write_divergence(&mut out, &rows)?;
    std::io::stdout().write_all(&out)?;
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let cfg = load_config(&a.config, None)?;
    if cfg.registration(&a.forecaster).is_none() {
        return Err(HarnessError::UnknownForecaster(a.forecaster).into());
    }
    let summary = run_experiment(&cfg, RunOptions { until: Some(a.date), ..RunOptions::default() })?;
    let record = summary.records.iter().find(|r| r.date == a.date).ok_or(HarnessError::UnknownDate(a.date))?;
    let Some(day) = record.forecasters.get(&a.forecaster) else {
        let why: Vec<&str> =
            record.diagnostics.iter().filter(|d| d.forecaster == a.forecaster).map(|d| d.message.as_str()).collect();
        bail!("{} issued no forecast on {}: {}", a.forecaster, a.date, why.join("; "));
    };
    let mut shown = 0;
    for (zone, detail) in &day.details {
        if a.zone.is_some_and(|z| z != *zone) {
            continue;
        }
        let t = day.set.entries[zone];
        println!("{} {} {} (operator {}): {}", a.forecaster, a.date, zone, record.operator, t);
        print!("{}", detail.explain());
        shown += 1;
    }
    if shown == 0 {
        bail!("{} does not forecast zone {}", a.forecaster, a.zone.map(|z| z.to_string()).unwrap_or_default());
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<Usage>() {
        return 1;
    }
    match e.downcast_ref::<HarnessError>() {
        Some(h) if !h.is_data_error() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Score(a) => cmd_score(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Divergence(a) => cmd_divergence(a),
        Command::Explain(a) => cmd_explain(a),
    });
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
