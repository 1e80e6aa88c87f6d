//! The `exmart` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! error.

use std::ffi::OsString;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::betting::run_martingale;
use crate::calibration::{
    barrier_slopes_from_maxima, check_candidates, decay_summary, lifespan_cap, percentiles,
    simulate_barrier_maxima, simulate_cusum_max, simulate_final_log10, simulate_sr_alarm_times,
    summarize_lifespans, threshold_for_alpha, CalibrationReport, IdealSimulation, Quantity,
};
use crate::config::{new_run_id, unix_millis, AlarmLogRecord, Command, RunConfig, OUTPUT_DIR_ENV};
use crate::conformity::{score, BuiltinScorer, Observation, ScorerKind};
use crate::detectors::{trace_path, DetectorKind};
use crate::error::{Error, ErrorKind, Result};
use crate::experiments::{
    run_delay_experiments, run_score_delay_experiments, run_threefold_paths, DelaySummary,
    DetectorSpec, ExperimentPlan,
};
use crate::io::{self, FoldTraceWriter, JsonlWriter, ObservationReader};
use crate::rng::simulation_rng;
use crate::schedules::{ScheduleConfig, ScheduleKind, ScoredSchedule};

#[derive(Debug, Parser)]
#[command(
    name = "exmart",
    version,
    about = "Online exchangeability testing with conformal test martingales"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Run a retraining schedule over a stream of observations.
    Monitor(MonitorArgs),
    /// Estimate alarm thresholds by simulation with uniform p-values.
    Calibrate(CalibrateArgs),
    /// Write ideal-setting martingale paths and detector traces.
    Simulate(SimulateArgs),
    /// Run the change-point delay experiment and three-fold paths.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML file with any of the run settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides EXMART_OUTPUT_DIR and the config file).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jump_rate: Option<f64>,
    /// Also write per-step traces.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Field delimiter, e.g. ';' for the Wine Quality files.
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// signed-1nn, abs-1nn, nd or fnd.
    #[arg(long, value_parser = parse_builtin)]
    pub scorer: Option<BuiltinScorer>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Training set, split into folds for the monitors.
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Observation stream (CSV with a header); standard input if absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column marking test-stream rows (0/false rows are skipped).
    #[arg(long)]
    pub test_flag_column: Option<String>,
    /// variable, fixed or middlegame-only.
    #[arg(long, value_parser = parse_schedule_kind)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub target_lifespan: Option<u64>,
    #[arg(long)]
    pub opening_threshold: Option<f64>,
    #[arg(long)]
    pub endgame_threshold: Option<f64>,
    #[arg(long)]
    pub endgame_alpha: Option<f64>,
    #[arg(long)]
    pub middlegame_slope: Option<f64>,
    #[arg(long)]
    pub middlegame_alpha: Option<f64>,
    #[arg(long)]
    pub quorum: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// cusum-max, barrier-slope, sr-alarm-time or jumper-final.
    #[arg(long, value_parser = parse_quantity)]
    pub quantity: Option<Quantity>,
    #[arg(long)]
    pub n_steps: Option<u64>,
    #[arg(long)]
    pub n_sims: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Comma-separated thresholds to check.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<f64>,
    /// Comma-separated, increasing horizons for barrier slopes.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<u64>,
    /// SR threshold for alarm times.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_steps: Option<u64>,
    #[arg(long)]
    pub n_sims: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Pre-change dataset, then optionally the post-change one.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    /// Predictions file per dataset, row for row.
    #[arg(long = "predictions")]
    pub predictions: Vec<PathBuf>,
    /// signed, abs or pit; applies to predictions files.
    #[arg(long, value_parser = parse_score_kind)]
    pub score_kind: Option<ScorerKind>,
    /// KIND:THRESHOLD, e.g. ville:100 or sr:1e6; repeatable.
    #[arg(long = "detector", value_parser = parse_detector)]
    pub detectors: Vec<DetectorSpec>,
    #[arg(long)]
    pub n_sims: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_calibration: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

fn parse_builtin(s: &str) -> std::result::Result<BuiltinScorer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_schedule_kind(s: &str) -> std::result::Result<ScheduleKind, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "variable" => Ok(ScheduleKind::Variable),
        "fixed" => Ok(ScheduleKind::Fixed),
        "middlegame-only" | "middlegame" => Ok(ScheduleKind::MiddlegameOnly),
        other => Err(format!("unknown schedule '{other}'")),
    }
}

fn parse_quantity(s: &str) -> std::result::Result<Quantity, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "cusum-max" | "cusum-max-percentile" => Ok(Quantity::CusumMaxPercentile),
        "barrier-slope" => Ok(Quantity::BarrierSlope),
        "sr-alarm-time" | "sr-lifespan" => Ok(Quantity::SrAlarmTime),
        "jumper-final" | "jumper-final-capital" => Ok(Quantity::JumperFinalCapital),
        other => Err(format!("unknown quantity '{other}'")),
    }
}

fn parse_score_kind(s: &str) -> std::result::Result<ScorerKind, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "signed" | "signed-residual" => Ok(ScorerKind::SignedResidual),
        "abs" | "absolute-residual" => Ok(ScorerKind::AbsoluteResidual),
        "pit" => Ok(ScorerKind::Pit),
        other => Err(format!("unknown score kind '{other}'")),
    }
}

fn parse_detector(s: &str) -> std::result::Result<DetectorSpec, String> {
    let (kind, threshold) = s
        .split_once(':')
        .ok_or_else(|| format!("expected KIND:THRESHOLD, got '{s}'"))?;
    let kind: DetectorKind = kind.parse().map_err(|e: Error| e.to_string())?;
    let threshold: f64 = threshold
        .parse()
        .map_err(|_| format!("bad threshold '{threshold}'"))?;
    Ok(DetectorSpec::new(kind, threshold))
}

fn base_config(command: Command, common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            if cfg.command != command {
                return Err(Error::invalid(format!(
                    "config file is for {:?}, not {:?}",
                    cfg.command, command
                )));
            }
            cfg
        }
        None => RunConfig::new(command),
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = dir.into();
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(j) = common.jump_rate {
        cfg.jump_rate = j;
    }
    cfg.trace |= common.trace;
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(d) = data.delimiter {
        cfg.delimiter = d;
    }
    if let Some(l) = &data.label_column {
        cfg.label_column = l.clone();
    }
    if let Some(s) = data.scorer {
        cfg.scorer = s;
    }
}

/// Merges flags over the config file into a validated [`RunConfig`].
pub fn build_config(sub: &Sub) -> Result<RunConfig> {
    let cfg = match sub {
        Sub::Monitor(a) => {
            let mut cfg = base_config(Command::Monitor, &a.common)?;
            apply_data(&mut cfg, &a.data);
            if let Some(t) = &a.training {
                cfg.datasets = vec![t.clone()];
            }
            if a.input.is_some() {
                cfg.input = a.input.clone();
            }
            if a.test_flag_column.is_some() {
                cfg.test_flag_column = a.test_flag_column.clone();
            }
            let mut s = match (cfg.schedule.take(), a.schedule) {
                (Some(s), None) => s,
                (Some(s), Some(kind)) if s.kind == kind => s,
                (_, kind) => {
                    let c = a.target_lifespan.unwrap_or(1000);
                    match kind.unwrap_or(ScheduleKind::Variable) {
                        ScheduleKind::Variable => ScheduleConfig::variable(c),
                        ScheduleKind::Fixed => ScheduleConfig {
                            kind: ScheduleKind::Fixed,
                            endgame_threshold: None,
                            ..ScheduleConfig::variable(c)
                        },
                        ScheduleKind::MiddlegameOnly => ScheduleConfig {
                            kind: ScheduleKind::MiddlegameOnly,
                            endgame_threshold: None,
                            ..ScheduleConfig::variable(c)
                        },
                    }
                }
            };
            if let Some(c) = a.target_lifespan {
                s.target_lifespan = c;
            }
            if let Some(v) = a.opening_threshold {
                s.opening_threshold = v;
            }
            if a.endgame_threshold.is_some() {
                s.endgame_threshold = a.endgame_threshold;
            }
            if a.endgame_alpha.is_some() {
                s.endgame_alpha = a.endgame_alpha;
            }
            if a.middlegame_slope.is_some() {
                s.middlegame_slope = a.middlegame_slope;
            }
            if a.middlegame_alpha.is_some() {
                s.middlegame_alpha = a.middlegame_alpha;
            }
            if let Some(q) = a.quorum {
                s.quorum = q;
            }
            if let Some(f) = a.folds {
                s.folds = f;
            }
            s.jump_rate = cfg.jump_rate;
            cfg.schedule = Some(s);
            cfg
        }
        Sub::Calibrate(a) => {
            let mut cfg = base_config(Command::Calibrate, &a.common)?;
            if let Some(q) = a.quantity {
                cfg.quantity = q;
            }
            cfg.n_steps = a.n_steps.or(cfg.n_steps);
            cfg.n_sims = a.n_sims.or(cfg.n_sims);
            if let Some(v) = a.alpha {
                cfg.alpha = v;
            }
            if let Some(v) = a.confidence {
                cfg.confidence = v;
            }
            if !a.candidates.is_empty() {
                cfg.candidates = a.candidates.clone();
            }
            if !a.horizons.is_empty() {
                cfg.horizons = a.horizons.clone();
            }
            cfg.threshold = a.threshold.or(cfg.threshold);
            cfg
        }
        Sub::Simulate(a) => {
            let mut cfg = base_config(Command::Simulate, &a.common)?;
            cfg.n_steps = a.n_steps.or(cfg.n_steps);
            cfg.n_sims = a.n_sims.or(cfg.n_sims);
            cfg
        }
        Sub::Replicate(a) => {
            let mut cfg = base_config(Command::Replicate, &a.common)?;
            apply_data(&mut cfg, &a.data);
            if !a.datasets.is_empty() {
                cfg.datasets = a.datasets.clone();
            }
            if !a.predictions.is_empty() {
                cfg.predictions = a.predictions.clone();
            }
            cfg.score_kind = a.score_kind.or(cfg.score_kind);
            if !a.detectors.is_empty() {
                cfg.detectors = a.detectors.clone();
            }
            cfg.n_sims = a.n_sims.or(cfg.n_sims);
            if let Some(v) = a.n_train {
                cfg.n_train = v;
            }
            if let Some(v) = a.n_calibration {
                cfg.n_calibration = v;
            }
            if let Some(v) = a.n_test {
                cfg.n_test = v;
            }
            cfg
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = build_config(&cli.command).and_then(|cfg| execute(&cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

pub fn execute(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    match cfg.command {
        Command::Monitor => monitor(cfg),
        Command::Calibrate => calibrate(cfg),
        Command::Simulate => simulate(cfg),
        Command::Replicate => replicate(cfg),
    }
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn is_test_row(flag: &str) -> bool {
    !matches!(
        flag.trim().to_ascii_lowercase().as_str(),
        "0" | "false" | "no" | ""
    )
}

fn monitor(cfg: &RunConfig) -> Result<()> {
    let delimiter = cfg.delimiter_byte()?;
    let training = io::load_dataset(&cfg.datasets[0], delimiter, &cfg.label_column)?;
    let schedule = cfg.schedule.clone().expect("validated");
    let (mut sched, calibration_events) =
        ScoredSchedule::build(schedule, &training.observations, cfg.scorer, cfg.seed)?;

    let hash = cfg.config_hash();
    let run_id = new_run_id(&hash);
    let mut log = JsonlWriter::new(io::append(&out(cfg, "alarms.jsonl"))?);
    let stdout = std::io::stdout();
    let mut echo = JsonlWriter::new(stdout.lock());
    let mut emit = |line: u64, events: Vec<crate::schedules::AlarmEvent>| -> Result<()> {
        for event in events {
            let rec = AlarmLogRecord {
                run_id: run_id.clone(),
                config_hash: hash.clone(),
                timestamp_ms: unix_millis(),
                input_line: line,
                event,
            };
            log.write(&rec)?;
            echo.write(&rec)?;
        }
        Ok(())
    };
    let mut trace = if cfg.trace {
        let mut t = FoldTraceWriter::new(io::create(&out(cfg, "fold_trace.csv"))?)?;
        t.write(&sched.schedule().snapshots())?;
        Some(t)
    } else {
        None
    };
    emit(0, calibration_events)?;

    let (reader, source): (Box<dyn Read>, PathBuf) = match &cfg.input {
        Some(p) => (Box::new(BufReader::new(io::open(p)?)), p.clone()),
        None => (Box::new(std::io::stdin().lock()), PathBuf::from("<stdin>")),
    };
    let extras: Vec<&str> = cfg.test_flag_column.iter().map(String::as_str).collect();
    let mut rows = ObservationReader::new(reader, &source, delimiter, &cfg.label_column, &extras)?;
    if rows.feature_names() != training.feature_names.as_slice() {
        return Err(Error::Parse {
            path: source,
            row: 1,
            message: format!(
                "feature columns {:?} differ from the training set's {:?}",
                rows.feature_names(),
                training.feature_names
            ),
        });
    }
    let mut fed = 0u64;
    while !sched.schedule().is_terminated() {
        let Some(row) = rows.next_row() else { break };
        let (obs, flags, line) = row?;
        if flags.first().is_some_and(|f| !is_test_row(f)) {
            continue;
        }
        let events = sched.observe(&obs)?;
        fed += 1;
        if let Some(t) = trace.as_mut() {
            t.write(&sched.schedule().snapshots())?;
        }
        emit(line as u64, events)?;
    }
    if let Some(t) = trace.as_mut() {
        t.flush()?;
    }
    eprintln!(
        "monitored {fed} test observations; {} alarm event(s)",
        sched.schedule().events().len()
    );
    Ok(())
}

fn write_rows<W: Write, R: Serialize>(writer: W, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn calibrate(cfg: &RunConfig) -> Result<()> {
    let sim = IdealSimulation {
        n_steps: cfg.n_steps(),
        n_sims: cfg.n_sims(),
        base_seed: cfg.seed,
        jump_rate: cfg.jump_rate,
    };
    let mut report = CalibrationReport::new(cfg.quantity, sim);
    match cfg.quantity {
        Quantity::CusumMaxPercentile => {
            let maxima = simulate_cusum_max(&sim)?;
            let threshold = threshold_for_alpha(&maxima, cfg.alpha)?;
            let candidates = if cfg.candidates.is_empty() {
                vec![threshold]
            } else {
                cfg.candidates.clone()
            };
            report.alpha = Some(cfg.alpha);
            report.threshold = Some(threshold);
            report.percentiles = percentiles(&maxima, &[0.5, 0.9, 0.95, 0.99, 0.999]);
            report.candidates = check_candidates(&maxima, &candidates, cfg.alpha, cfg.confidence)?;
            report.candidate_count = candidates.len();
            write_rows(
                io::create(&out(cfg, "cusum_maxima.csv"))?,
                maxima.iter().enumerate().map(|(i, m)| SimValue {
                    sim: i as u64,
                    value: *m,
                }),
            )?;
        }
        Quantity::BarrierSlope => {
            let horizons = cfg.effective_horizons();
            let maxima = simulate_barrier_maxima(&sim, &horizons)?;
            report.alpha = Some(cfg.alpha);
            report.slopes = barrier_slopes_from_maxima(&horizons, &maxima, cfg.alpha)?;
            let last: Vec<f64> = maxima.iter().map(|m| m[m.len() - 1]).collect();
            report.candidates =
                check_candidates(&last, &cfg.candidates, cfg.alpha, cfg.confidence)?;
            report.candidate_count = cfg.candidates.len();
            let mut w = csv::Writer::from_writer(io::create(&out(cfg, "barrier_maxima.csv"))?);
            let mut header = vec!["sim".to_string()];
            header.extend(horizons.iter().map(|h| format!("n{h}")));
            w.write_record(&header)?;
            for (i, m) in maxima.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(m.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io("barrier_maxima.csv", e))?;
        }
        Quantity::SrAlarmTime => {
            let threshold = cfg.threshold.expect("validated");
            let cap = lifespan_cap(threshold);
            let times = simulate_sr_alarm_times(&sim, threshold, cap)?;
            report.lifespan = Some(summarize_lifespans(threshold, cap, &times)?);
            write_rows(
                io::create(&out(cfg, "sr_alarm_times.csv"))?,
                times.iter().enumerate().map(|(i, t)| SimTime {
                    sim: i as u64,
                    alarm_time: *t,
                }),
            )?;
        }
        Quantity::JumperFinalCapital => {
            let finals = simulate_final_log10(&sim)?;
            report.decay = Some(decay_summary(sim.n_steps, &finals)?);
            report.percentiles = percentiles(&finals, &[0.25, 0.5, 0.75]);
            write_rows(
                io::create(&out(cfg, "final_log10.csv"))?,
                finals.iter().enumerate().map(|(i, v)| SimValue {
                    sim: i as u64,
                    value: *v,
                }),
            )?;
        }
    }
    io::write_json(&out(cfg, "calibration_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct SimValue {
    sim: u64,
    value: f64,
}

#[derive(Serialize)]
struct SimTime {
    sim: u64,
    alarm_time: Option<u64>,
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    use rand::Rng;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(io::create(&out(cfg, "ideal_paths.csv"))?);
    w.write_record(["sim", "step", "log10_s", "gamma", "psi", "psi_star"])?;
    let mut finals = Vec::new();
    for sim in 0..cfg.n_sims() {
        let mut rng = simulation_rng(cfg.seed, sim);
        let pvalues: Vec<f64> = (0..cfg.n_steps()).map(|_| rng.random::<f64>()).collect();
        let path = run_martingale(&pvalues, cfg.jump_rate)?;
        finals.push(path.final_log10());
        for row in trace_path(&path)? {
            w.serialize((sim, row.step, row.log10_s, row.gamma, row.psi, row.psi_star))?;
        }
    }
    w.flush().map_err(|e| Error::io("ideal_paths.csv", e))?;
    let summary = decay_summary(cfg.n_steps(), &finals)?;
    io::write_json(&out(cfg, "simulate_summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct ReplicateReport<'a> {
    config_hash: String,
    scorer: Option<BuiltinScorer>,
    score_kind: Option<ScorerKind>,
    scenario: u8,
    summaries: &'a [DelaySummary],
}

fn scores_from_predictions(
    cfg: &RunConfig,
    data: &[Observation],
    predictions: &Path,
    kind: ScorerKind,
) -> Result<Vec<f64>> {
    let preds = io::load_predictions(predictions, cfg.delimiter_byte()?)?;
    if preds.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: preds.len(),
        });
    }
    data.iter()
        .zip(&preds)
        .enumerate()
        .map(|(i, (o, p))| score(kind, o, p).map_err(|e| Error::at(i, e)))
        .collect()
}

fn replicate(cfg: &RunConfig) -> Result<()> {
    let delimiter = cfg.delimiter_byte()?;
    let pre = io::load_dataset(&cfg.datasets[0], delimiter, &cfg.label_column)?;
    let post = cfg
        .datasets
        .get(1)
        .map(|p| io::load_dataset(p, delimiter, &cfg.label_column))
        .transpose()?;
    let detectors = cfg.effective_detectors();
    let plan = ExperimentPlan {
        n_train: cfg.n_train,
        n_calibration: cfg.n_calibration,
        n_test: cfg.n_test,
        scorer: cfg.scorer,
        detector: detectors[0].kind,
        threshold: detectors[0].threshold,
        n_sims: cfg.n_sims(),
        base_seed: cfg.seed,
        jump_rate: cfg.jump_rate,
    };
    let summaries = match cfg.score_kind.filter(|_| !cfg.predictions.is_empty()) {
        Some(kind) => {
            let pre_scores =
                scores_from_predictions(cfg, &pre.observations, &cfg.predictions[0], kind)?;
            let post_scores = match &post {
                Some(p) => Some(scores_from_predictions(
                    cfg,
                    &p.observations,
                    &cfg.predictions[1],
                    kind,
                )?),
                None => None,
            };
            run_score_delay_experiments(&plan, &detectors, &pre_scores, post_scores.as_deref())?
        }
        None => run_delay_experiments(
            &plan,
            &detectors,
            &pre.observations,
            post.as_ref().map(|p| p.observations.as_slice()),
        )?,
    };
    let builtin = cfg.predictions.is_empty();
    let report = ReplicateReport {
        config_hash: cfg.config_hash(),
        scorer: builtin.then_some(cfg.scorer),
        score_kind: (!builtin).then_some(cfg.score_kind).flatten(),
        scenario: u8::from(post.is_some()),
        summaries: &summaries,
    };
    io::write_json(&out(cfg, "delay_summary.json"), &report)?;
    for s in &summaries {
        println!(
            "{} c={}: {} (no alarm {:.1}%)",
            s.detector.kind.name(),
            s.detector.threshold,
            s,
            100.0 * s.no_alarm_fraction
        );
    }
    if let (true, Some(post)) = (builtin, &post) {
        let paths = run_threefold_paths(
            &pre.observations,
            &post.observations,
            cfg.scorer,
            cfg.jump_rate,
            cfg.seed,
        )?;
        for p in &paths {
            let name = format!("paths/fold{}_scenario{}.csv", p.fold, p.scenario);
            let mut w = io::create(&out(cfg, &name))?;
            io::write_path_csv(&mut w, &p.path, Some(p.change_point))?;
            if cfg.trace {
                let name = format!("paths/fold{}_scenario{}_trace.csv", p.fold, p.scenario);
                io::write_trace_csv(io::create(&out(cfg, &name))?, &trace_path(&p.path)?)?;
            }
        }
    }
    Ok(())
}
