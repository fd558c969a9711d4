//! Command-line entry point: calibration, synthetic data, paired
//! simulation, training, evaluation and the frontier sweep.
//!
//! Every command buffers its outputs and writes them, together with a
//! manifest, only once the whole command has succeeded. Exit code 2 marks
//! a configuration or input problem, 1 a failure while running.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use execsim::calibration::{
    calibrate, candidate_seed, compute_stylised_facts, facts_from_event_log, fit_session_impact, generate_synthetic_target,
    simulate_facts, CalibrationResult,
};
use execsim::events::{read_event_log, read_trade_log, write_event_log, write_trade_log};
use execsim::execution::{sample_schedule, twap_schedule, vwap_schedule, write_fills_csv, ExecutionSchedule};
use execsim::experiment::{
    evaluate_table, frontier_sweep, train_policy, write_table_row, Day, EvaluationTable, ExperimentConfig, FrontierSweep, Scale,
    TABLE_HEADER,
};
use execsim::frontier::{
    reference_strategies, twap_costs, var_minimizer, var_tangent, write_frontier_csv, write_overlay_csv, write_sweep_csv,
    FrontierPoint, OverlayPoint, LAMBDA_95,
};
use execsim::policy::{write_episodes_csv, PolicyFile};
use execsim::rng::{derive_seed, stream_rng};
use execsim::series::MidSeries;
use execsim::sim::MarketConfig;
use execsim::slippage::{run_paired, BaselinePool, Objective};
use execsim::Error;

#[derive(Parser, Debug)]
#[command(name = "execsim", version, about = "Agent-based execution simulator")]
struct Cli {
    /// Experiment configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DayArg {
    Train,
    Test,
}

impl From<DayArg> for Day {
    fn from(d: DayArg) -> Day {
        match d {
            DayArg::Train => Day::Train,
            DayArg::Test => Day::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Slippage,
    Impact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Twap,
    Vwap,
    Policy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit demand parameters to a target session's stylised facts.
    Calibrate {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Write the event and trade logs of one background-only session.
    Generate {
        #[arg(long, value_enum, default_value = "train")]
        day: DayArg,
    },
    /// Run one paired baseline / counterfactual session.
    Simulate {
        #[arg(long, value_enum, default_value = "twap")]
        strategy: StrategyArg,
        /// TWAP window start (wall-clock ms); defaults to the open.
        #[arg(long)]
        start_ms: Option<i64>,
        /// TWAP window end (wall-clock ms); defaults to the close.
        #[arg(long)]
        end_ms: Option<i64>,
        /// Policy JSON written by `train`, for `--strategy policy`.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        day: DayArg,
    },
    /// Train a schedule distribution on the train day.
    Train {
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=2))]
        modes: Option<u64>,
        /// Confine mode k to the morning (k = 1) or afternoon (k = 2).
        #[arg(long)]
        bounded: bool,
        /// Train against the analytic stub instead of the simulator.
        #[arg(long)]
        stub: bool,
        #[arg(long)]
        max_episodes: Option<usize>,
    },
    /// Score TWAP, VWAP and trained policies on the test day.
    Evaluate {
        /// Policy JSON files to score next to the baselines.
        #[arg(long)]
        policy: Vec<PathBuf>,
    },
    /// Sweep TWAP windows and build the mean-variance frontier.
    Frontier {
        #[arg(long, value_enum, default_value = "test")]
        day: DayArg,
    },
}

/// How a command failed, which decides the exit code.
#[derive(Debug)]
enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Json(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Named files produced by a command, written together at the end.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Outcome<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(runtime)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let mut buf = serde_json::to_vec_pretty(value).map_err(runtime)?;
        buf.push(b'\n');
        self.files.push((name.to_string(), buf));
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: BTreeMap<String, String>,
}

fn write_outputs(dir: &Path, command: &str, cfg: &ExperimentConfig, mut out: Outputs) -> Outcome<()> {
    let config_bytes = serde_json::to_vec(cfg).map_err(runtime)?;
    out.files.push(("config.json".into(), serde_json::to_vec_pretty(cfg).map_err(runtime)?));
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        config_sha256: sha256_hex(&config_bytes),
        versions: BTreeMap::from([
            ("execsim", execsim_version()),
            ("execsim-cli", env!("CARGO_PKG_VERSION")),
        ]),
        outputs: out.files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
    };
    let mut m = serde_json::to_vec_pretty(&manifest).map_err(runtime)?;
    m.push(b'\n');
    out.files.push(("manifest.json".into(), m));
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    for (name, bytes) in &out.files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn execsim_version() -> &'static str {
    // Both crates are versioned together in the workspace.
    env!("CARGO_PKG_VERSION")
}

fn load_config(cli: &Cli) -> Outcome<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.scale {
        cfg.scale = match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        };
    }
    if let Command::Train {
        objective,
        modes,
        bounded,
        max_episodes,
        ..
    } = &cli.command
    {
        if let Some(o) = objective {
            cfg.train.objective = match o {
                ObjectiveArg::Slippage => Objective::Slippage,
                ObjectiveArg::Impact => Objective::Impact,
            };
        }
        if let Some(m) = modes {
            cfg.train.modes = *m as usize;
        }
        if *bounded {
            cfg.train.bounded = true;
        }
        if let Some(n) = max_episodes {
            cfg.train.max_episodes = *n;
        }
    }
    if let Command::Calibrate { budget: Some(b) } = &cli.command {
        cfg.calibration.budget = *b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_input(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Input(format!("cannot open {}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Outcome<PolicyFile> {
    let p: PolicyFile =
        serde_json::from_reader(open_input(path)?).map_err(|e| Failure::Input(format!("invalid policy {}: {e}", path.display())))?;
    p.params.validate()?;
    p.distribution().validate()?;
    Ok(p)
}

fn write_mid_csv(w: &mut Vec<u8>, mid: &MidSeries) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(w, "time_ms,mid")?;
    for (t, m) in mid.points() {
        writeln!(w, "{t},{m}")?;
    }
    Ok(())
}

fn write_profile_csv(w: &mut Vec<u8>, profile: &[f64]) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(w, "minute,volume")?;
    for (i, v) in profile.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

fn cmd_calibrate(cfg: &ExperimentConfig, out: &mut Outputs) -> Outcome<()> {
    let market = cfg.market(Day::Train)?;
    let session = &market.session;
    let (target, fit) = match &cfg.calibration.target_events {
        Some(path) => {
            let events = read_event_log(open_input(path)?, session.tick_size)?;
            let facts = match &cfg.calibration.target_trades {
                Some(tp) => {
                    let trades = read_trade_log(open_input(tp)?, session.tick_size)?;
                    let mid = execsim::calibration::replay_session(&events, session).mid;
                    let f = compute_stylised_facts(&trades, &mid, &events, session, None);
                    (f, fit_session_impact(&trades, &mid))
                }
                None => {
                    let r = execsim::calibration::replay_session(&events, session);
                    (facts_from_event_log(&events, session, None), fit_session_impact(&r.trades, &r.mid))
                }
            };
            facts
        }
        None => {
            let t = generate_synthetic_target(&market, derive_seed(cfg.seed, 5));
            let f = compute_stylised_facts(&t.trades, &t.mid, &t.events, session, None);
            (f, fit_session_impact(&t.trades, &t.mid))
        }
    };
    let sim_seed = candidate_seed(cfg.seed);
    let bins = target.bins;
    let mut result: CalibrationResult = calibrate(
        &target,
        &market.chiarella,
        &cfg.calibration.bounds,
        cfg.calibration.budget,
        cfg.seed,
        |p| simulate_facts(&market, p, sim_seed, &bins),
    )?;
    result.impact = fit.ok().map(|f| f.params());
    out.json("calibration.json", &result)?;
    out.json("target_facts.json", &target)?;
    Ok(())
}

fn cmd_generate(cfg: &ExperimentConfig, day: Day, out: &mut Outputs) -> Outcome<()> {
    let market = cfg.market(day)?;
    let t = generate_synthetic_target(&market, derive_seed(cfg.seed, 8));
    let tick = market.session.tick_size;
    out.add("events.csv", |w| write_event_log(w, &t.events, tick))?;
    out.add("trades.csv", |w| write_trade_log(w, &t.trades, tick))?;
    out.add("mid.csv", |w| write_mid_csv(w, &t.mid))?;
    let facts = compute_stylised_facts(&t.trades, &t.mid, &t.events, &market.session, None);
    out.json("facts.json", &facts)?;
    Ok(())
}

fn strategy_schedule(
    cfg: &ExperimentConfig,
    market: &Arc<MarketConfig>,
    strategy: StrategyArg,
    window: (Option<i64>, Option<i64>),
    policy: Option<&Path>,
) -> Outcome<ExecutionSchedule> {
    let s = &market.session;
    Ok(match strategy {
        StrategyArg::Twap => twap_schedule(&cfg.meta_order, s, window.0.unwrap_or(s.open_ms), window.1.unwrap_or(s.close_ms))?,
        StrategyArg::Vwap => vwap_schedule(&cfg.meta_order, s, &cfg.vwap_profile()?)?,
        StrategyArg::Policy => {
            let path = policy.ok_or_else(|| Failure::Input("--strategy policy needs --policy FILE".into()))?;
            let p = load_policy(path)?;
            sample_schedule(&cfg.meta_order, &p.distribution(), s, &mut stream_rng(derive_seed(cfg.seed, 7), 0))?
        }
    })
}

fn cmd_simulate(
    cfg: &ExperimentConfig,
    day: Day,
    strategy: StrategyArg,
    window: (Option<i64>, Option<i64>),
    policy: Option<&Path>,
    out: &mut Outputs,
) -> Outcome<()> {
    let market = cfg.market(day)?;
    let schedule = strategy_schedule(cfg, &market, strategy, window, policy)?;
    let seed = cfg.eval_seeds()[0];
    let run = run_paired(&market, &schedule, seed)?;
    let report = run.report()?;
    out.add("schedule.csv", |w| schedule.write_csv(w))?;
    out.add("fills.csv", |w| write_fills_csv(w, &run.fills))?;
    out.add("paths.csv", |w| run.write_paths_csv(w))?;
    out.json("report.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainingSummary {
    best_episode: usize,
    early_stopped_at: Option<usize>,
    episodes: usize,
    best_mean_loss: f64,
    environment: &'static str,
}

fn cmd_train(cfg: &ExperimentConfig, stub: bool, out: &mut Outputs) -> Outcome<()> {
    let tc = cfg.train_config();
    let outcome = train_policy(cfg, stub)?;
    let best_loss = outcome
        .episodes
        .get(outcome.best_episode)
        .map_or(f64::NAN, |e| e.mean_loss);
    out.json("policy.json", &PolicyFile::new(tc.clone(), outcome.best.clone()))?;
    out.add("episodes.csv", |w| write_episodes_csv(w, &outcome.episodes))?;
    out.json(
        "training.json",
        &TrainingSummary {
            best_episode: outcome.best_episode,
            early_stopped_at: outcome.early_stopped_at,
            episodes: outcome.episodes.len(),
            best_mean_loss: best_loss,
            environment: if stub { "stub" } else { "simulator" },
        },
    )?;
    if !stub {
        let profile = cfg.vwap_profile()?;
        out.add("volume_profile.csv", |w| write_profile_csv(w, &profile))?;
    }
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig, policies: &[PathBuf], out: &mut Outputs) -> Outcome<()> {
    let loaded: Vec<(String, PolicyFile)> = policies
        .iter()
        .map(|p| {
            let label = p.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned());
            load_policy(p).map(|f| (label, f))
        })
        .collect::<Outcome<_>>()?;
    let EvaluationTable {
        evaluations: evals,
        distances,
        sweep,
        vwap_profile: profile,
    } = evaluate_table(cfg, &loaded)?;
    let FrontierSweep { points, frontier, .. } = sweep;
    out.add("table.csv", |w| {
        use std::io::Write;
        writeln!(w, "{TABLE_HEADER}")?;
        for (e, d) in evals.iter().zip(&distances) {
            write_table_row(&mut *w, e, *d)?;
        }
        Ok(())
    })?;
    out.add("runs.csv", |w| {
        use std::io::Write;
        writeln!(w, "strategy,seed,zeta,zeta_mr,zeta_mi,executed_volume,unfilled_volume")?;
        for e in &evals {
            for r in &e.runs {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    e.label, r.seed, r.zeta, r.zeta_mr, r.zeta_mi, r.executed_volume, r.unfilled_volume
                )?;
            }
        }
        Ok(())
    })?;
    let overlay: Vec<OverlayPoint> = evals
        .iter()
        .zip(&distances)
        .map(|(e, d)| OverlayPoint {
            label: e.label.clone(),
            e: e.e,
            v: e.v,
            risk: e.risk,
            impact: e.impact,
            distance: *d,
        })
        .collect();
    out.add("overlay.csv", |w| write_overlay_csv(w, &overlay))?;
    out.add("sweep.csv", |w| write_sweep_csv(w, &points))?;
    out.add("frontier.csv", |w| write_frontier_csv(w, &points, &frontier))?;
    out.add("volume_profile.csv", |w| write_profile_csv(w, &profile))?;
    Ok(())
}

#[derive(Serialize)]
struct ReferencePoint {
    label: &'static str,
    start_ms: i64,
    end_ms: i64,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "V")]
    v: f64,
}

#[derive(Serialize)]
struct FrontierSummary {
    lambda_p: f64,
    vertex: usize,
    efficient: Vec<usize>,
    suboptimal: Vec<usize>,
    var_tangent: usize,
    var_minimizer: usize,
    reference: Vec<ReferencePoint>,
}

fn cmd_frontier(cfg: &ExperimentConfig, day: Day, out: &mut Outputs) -> Outcome<()> {
    let market = cfg.market(day)?;
    let pool = BaselinePool::new(&market, &cfg.frontier_seeds());
    let FrontierSweep { points, frontier, .. } = frontier_sweep(cfg, &pool)?;
    let reference = reference_strategies(&market.session)
        .iter()
        .map(|&(label, a, b)| {
            let costs = twap_costs(&pool, &cfg.meta_order, (a, b), Objective::Slippage)?;
            let p = FrontierPoint::from_samples(a, b, &costs)?;
            Ok(ReferencePoint {
                label,
                start_ms: a,
                end_ms: b,
                e: p.e,
                v: p.v,
            })
        })
        .collect::<Outcome<Vec<_>>>()?;
    out.add("sweep.csv", |w| write_sweep_csv(w, &points))?;
    out.add("frontier.csv", |w| write_frontier_csv(w, &points, &frontier))?;
    out.json(
        "frontier.json",
        &FrontierSummary {
            lambda_p: -LAMBDA_95,
            vertex: frontier.vertex,
            efficient: frontier.efficient.clone(),
            suboptimal: frontier.suboptimal.clone(),
            var_tangent: var_tangent(&points, LAMBDA_95),
            var_minimizer: var_minimizer(&points, LAMBDA_95),
            reference,
        },
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome<()> {
    let cfg = load_config(cli)?;
    let mut out = Outputs::default();
    let name = match &cli.command {
        Command::Calibrate { .. } => {
            cmd_calibrate(&cfg, &mut out)?;
            "calibrate"
        }
        Command::Generate { day } => {
            cmd_generate(&cfg, (*day).into(), &mut out)?;
            "generate"
        }
        Command::Simulate {
            strategy,
            start_ms,
            end_ms,
            policy,
            day,
        } => {
            cmd_simulate(&cfg, (*day).into(), *strategy, (*start_ms, *end_ms), policy.as_deref(), &mut out)?;
            "simulate"
        }
        Command::Train { stub, .. } => {
            cmd_train(&cfg, *stub, &mut out)?;
            "train"
        }
        Command::Evaluate { policy } => {
            cmd_evaluate(&cfg, policy, &mut out)?;
            "evaluate"
        }
        Command::Frontier { day } => {
            cmd_frontier(&cfg, (*day).into(), &mut out)?;
            "frontier"
        }
    };
    write_outputs(&cfg.output_dir, name, &cfg, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
