//! Experiment configuration and the glue between modules: building market
//! configurations for the train and test days, deriving seed sets, and
//! scoring strategies for the comparison table.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{estimate_arrival_profile, ArrivalProfile, ChiarellaParams, ConditionalOrderSampler};
use crate::calibration::{default_bounds, ParamBound};
use crate::events::{read_event_log, TradeRecord};
use crate::execution::{sample_schedule, twap_schedule, vwap_schedule, ExecutionSchedule, MetaOrder};
use crate::frontier::{
    build_frontier, check_dominance, desk_grid, distance_to_frontier, full_grid, mean_variance, sweep_strategies, Frontier,
    FrontierPoint, Standardizer,
};
use crate::impact::ImpactParams;
use crate::lob::{Qty, Time};
use crate::policy::{train, PolicyFile, SimEnvironment, StubEnvironment, TrainConfig, TrainOutcome};
use crate::rng::{derive_seed, stream_rng};
use crate::session::SessionTemplate;
use crate::sim::{run_baseline, KernelParams, MarketConfig, RecordOptions};
use crate::slippage::{BaselinePool, Objective, RunReport};
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Four-hour session at 10 ms steps.
    #[default]
    Desk,
    /// Full trading day at millisecond steps.
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale `{s}` (expected desk or full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Day {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayParams {
    pub chiarella: ChiarellaParams,
    pub impact: ImpactParams,
}

/// Where background arrival rates come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSource {
    /// U-shaped intraday profile with the given base rates per millisecond.
    Parametric { limit_per_ms: f64, market_per_ms: f64 },
    /// Per-minute counts measured from a recorded event log.
    EventLog { path: PathBuf },
}

/// Where the conditional order-size / depth / lifetime tables come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerSource {
    Bootstrap { volume_scale: Qty },
    EventLog { path: PathBuf },
}

/// Strategy grid for the frontier sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// Windows between tenths of the session.
    Desk,
    /// Windows between twentieths of the session.
    Full,
    Custom(Vec<(Time, Time)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarlo {
    /// Seeds per strategy on the test day.
    pub eval_seeds: usize,
    /// Seeds per strategy in the frontier sweep.
    pub frontier_seeds: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            eval_seeds: 10,
            frontier_seeds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub budget: usize,
    pub bounds: Vec<ParamBound>,
    /// Target event log; a synthetic train-day session is used when absent.
    pub target_events: Option<PathBuf>,
    /// Target trade log; rebuilt by replaying the event log when absent.
    pub target_trades: Option<PathBuf>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            budget: 50,
            bounds: default_bounds(),
            target_events: None,
            target_trades: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    /// Overrides the session implied by `scale`.
    pub session: Option<SessionTemplate>,
    pub train_day: DayParams,
    pub test_day: DayParams,
    pub arrivals: ArrivalSource,
    pub sampler: SamplerSource,
    pub kernel: KernelParams,
    pub meta_order: MetaOrder,
    pub train: TrainConfig,
    /// Defaults to the grid matching `scale`.
    pub grid: Option<GridSpec>,
    pub monte_carlo: MonteCarlo,
    pub calibration: CalibrationSettings,
    /// Where outputs go. Not serialised, so that it never changes an
    /// output byte or the configuration hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
}

pub const DESK_LIMIT_RATE_PER_MS: f64 = 0.001;
pub const DESK_MARKET_RATE_PER_MS: f64 = 0.000_25;
pub const DESK_VOLUME_SCALE: Qty = 6;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scale: Scale::Desk,
            session: None,
            train_day: DayParams {
                chiarella: ChiarellaParams::TRAIN_DAY,
                impact: ImpactParams::TRAIN_DAY,
            },
            test_day: DayParams {
                chiarella: ChiarellaParams::TEST_DAY,
                impact: ImpactParams::TEST_DAY,
            },
            arrivals: ArrivalSource::Parametric {
                limit_per_ms: DESK_LIMIT_RATE_PER_MS,
                market_per_ms: DESK_MARKET_RATE_PER_MS,
            },
            sampler: SamplerSource::Bootstrap {
                volume_scale: DESK_VOLUME_SCALE,
            },
            kernel: KernelParams::default(),
            meta_order: MetaOrder::DEFAULT,
            train: TrainConfig::default(),
            grid: None,
            monte_carlo: MonteCarlo::default(),
            calibration: CalibrationSettings::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn load_events(path: &Path, session: &SessionTemplate) -> Result<Vec<crate::events::BookEvent>, Error> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    read_event_log(BufReader::new(f), session.tick_size)
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, Error> {
        let f = File::open(path).map_err(|e| Error::Config(format!("cannot open config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn session(&self) -> SessionTemplate {
        self.session.clone().unwrap_or_else(|| match self.scale {
            Scale::Desk => SessionTemplate::desk(),
            Scale::Full => SessionTemplate::full(),
        })
    }

    pub fn day(&self, day: Day) -> &DayParams {
        match day {
            Day::Train => &self.train_day,
            Day::Test => &self.test_day,
        }
    }

    pub fn grid(&self) -> Vec<(Time, Time)> {
        let session = self.session();
        match self.grid.clone().unwrap_or(match self.scale {
            Scale::Desk => GridSpec::Desk,
            Scale::Full => GridSpec::Full,
        }) {
            GridSpec::Desk => desk_grid(&session),
            GridSpec::Full => full_grid(&session),
            GridSpec::Custom(g) => g,
        }
    }

    /// Checks everything that can be checked without simulating, including
    /// that referenced input files exist.
    pub fn validate(&self) -> Result<(), Error> {
        let session = self.session();
        session.validate()?;
        for d in [&self.train_day, &self.test_day] {
            d.chiarella.validate()?;
            d.impact.validate()?;
        }
        self.meta_order.validate()?;
        self.train.validate()?;
        if self.monte_carlo.eval_seeds == 0 || self.monte_carlo.frontier_seeds < 2 {
            return Err(Error::Config("need at least one evaluation seed and two frontier seeds".into()));
        }
        let grid = self.grid();
        if grid.is_empty() || grid.iter().any(|&(a, b)| a >= b || a < session.open_ms || b > session.close_ms) {
            return Err(Error::Config("grid windows must be non-empty and inside the session".into()));
        }
        if let ArrivalSource::Parametric { limit_per_ms, market_per_ms } = self.arrivals {
            if !(limit_per_ms > 0.0 && market_per_ms > 0.0 && limit_per_ms.is_finite() && market_per_ms.is_finite()) {
                return Err(Error::Config("arrival rates must be positive".into()));
            }
        }
        if let SamplerSource::Bootstrap { volume_scale } = self.sampler {
            if volume_scale == 0 {
                return Err(Error::Config("sampler volume scale must be positive".into()));
            }
        }
        let paths = [
            match &self.arrivals {
                ArrivalSource::EventLog { path } => Some(path),
                _ => None,
            },
            match &self.sampler {
                SamplerSource::EventLog { path } => Some(path),
                _ => None,
            },
            self.calibration.target_events.as_ref(),
            self.calibration.target_trades.as_ref(),
        ];
        for p in paths.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        if self.calibration.target_trades.is_some() && self.calibration.target_events.is_none() {
            return Err(Error::Config("a target trade log needs the matching event log".into()));
        }
        Ok(())
    }

    /// Market for one day. Arrival profile and sampler are shared by both
    /// days; only the demand and impact parameters differ.
    pub fn market(&self, day: Day) -> Result<Arc<MarketConfig>, Error> {
        let session = self.session();
        let profile = match &self.arrivals {
            ArrivalSource::Parametric { limit_per_ms, market_per_ms } => ArrivalProfile::parametric(&session, *limit_per_ms, *market_per_ms),
            ArrivalSource::EventLog { path } => estimate_arrival_profile(&load_events(path, &session)?, &session),
        };
        let sampler = match &self.sampler {
            SamplerSource::Bootstrap { volume_scale } => ConditionalOrderSampler::bootstrap(&session, *volume_scale),
            SamplerSource::EventLog { path } => ConditionalOrderSampler::from_event_log(&load_events(path, &session)?, &session)?,
        };
        let d = self.day(day);
        let cfg = MarketConfig {
            session,
            chiarella: d.chiarella,
            impact: d.impact,
            kernel: self.kernel.clone(),
            profile,
            sampler: Arc::new(sampler),
        };
        cfg.validate()?;
        Ok(Arc::new(cfg))
    }

    /// Seeds of the training Monte-Carlo pool.
    pub fn train_seeds(&self) -> Vec<u64> {
        seed_set(self.seed, 1, self.train.mc_samples)
    }

    /// Seeds of the test-day evaluation, disjoint in stream from training.
    pub fn eval_seeds(&self) -> Vec<u64> {
        seed_set(self.seed, 2, self.monte_carlo.eval_seeds)
    }

    pub fn frontier_seeds(&self) -> Vec<u64> {
        seed_set(self.seed, 3, self.monte_carlo.frontier_seeds)
    }

    /// Volume profile for VWAP, from a synthetic train-day session.
    pub fn vwap_profile(&self) -> Result<Vec<f64>, Error> {
        Ok(synthetic_volume_profile(&self.market(Day::Train)?, derive_seed(self.seed, 6)))
    }

    /// Training config with the master seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, 4),
            ..self.train.clone()
        }
    }
}

fn seed_set(master: u64, purpose: u64, n: usize) -> Vec<u64> {
    let base = derive_seed(master, purpose);
    (0..n as u64).map(|i| derive_seed(base, i)).collect()
}

/// Traded volume per trading-session minute.
pub fn minute_volumes(trades: &[TradeRecord], session: &SessionTemplate) -> Vec<f64> {
    let mut v = vec![0.0; session.num_minutes()];
    for t in trades {
        if session.is_trading(t.time) {
            v[session.minute_of(t.time)] += t.quantity as f64;
        }
    }
    v
}

/// Volume profile used by VWAP: the per-minute volume of one synthetic
/// train-day session.
pub fn synthetic_volume_profile(cfg: &Arc<MarketConfig>, seed: u64) -> Vec<f64> {
    let run = run_baseline(
        cfg,
        seed,
        RecordOptions {
            trades: true,
            ..Default::default()
        },
    );
    minute_volumes(&run.recorder.trades, &cfg.session)
}

/// A strategy scored in the comparison table.
#[derive(Clone, Debug)]
pub enum Strategy {
    Twap { start_ms: Time, end_ms: Time },
    Vwap { profile: Vec<f64> },
    /// A fresh schedule is drawn from the policy for every seed.
    Policy(Box<PolicyFile>),
}

impl Strategy {
    pub fn schedules(&self, meta: &MetaOrder, session: &SessionTemplate, n: usize, seed: u64) -> Result<Vec<ExecutionSchedule>, Error> {
        match self {
            Strategy::Twap { start_ms, end_ms } => {
                let s = twap_schedule(meta, session, *start_ms, *end_ms)?;
                Ok(vec![s; n])
            }
            Strategy::Vwap { profile } => {
                let s = vwap_schedule(meta, session, profile)?;
                Ok(vec![s; n])
            }
            Strategy::Policy(p) => {
                let dist = p.distribution();
                dist.validate()?;
                (0..n as u64)
                    .map(|i| sample_schedule(meta, &dist, session, &mut stream_rng(seed, i)))
                    .collect()
            }
        }
    }
}

/// Per-seed results of one strategy and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub label: String,
    pub runs: Vec<RunReport>,
    pub risk: f64,
    pub impact: f64,
    pub slippage: f64,
    /// Mean and variance of the slippage across seeds.
    pub e: f64,
    pub v: f64,
}

/// Scores a strategy on every seed of `pool`, schedule `i` on baseline `i`.
pub fn evaluate_strategy(pool: &BaselinePool, label: &str, schedules: &[ExecutionSchedule]) -> Result<StrategyEvaluation, Error> {
    if schedules.len() != pool.len() {
        return Err(Error::Config("one schedule per evaluation seed is required".into()));
    }
    let idx: Vec<usize> = (0..pool.len()).collect();
    let results = crate::parallel::par_map(&idx, |&i| pool.evaluate(i, &schedules[i]));
    let mut runs = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (d, unfilled) = r?;
        runs.push(RunReport {
            seed: pool.baseline(i).seed,
            zeta: d.zeta,
            zeta_mr: d.zeta_mr,
            zeta_mi: d.zeta_mi,
            executed_volume: d.executed_volume,
            unfilled_volume: unfilled,
        });
    }
    let zeta: Vec<f64> = runs.iter().map(|r| r.zeta).collect();
    let (e, v) = mean_variance(&zeta);
    let mean = |f: fn(&RunReport) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Ok(StrategyEvaluation {
        label: label.to_string(),
        risk: mean(|r| r.zeta_mr),
        impact: mean(|r| r.zeta_mi),
        slippage: e,
        e,
        v,
        runs,
    })
}

pub const TABLE_HEADER: &str = "strategy,risk,impact,slippage,E,V,distance,n";

pub fn write_table_row<W: Write>(mut w: W, ev: &StrategyEvaluation, distance: f64) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        ev.label,
        ev.risk,
        ev.impact,
        ev.slippage,
        ev.e,
        ev.v,
        distance,
        ev.runs.len()
    )
}

/// Objective used to score a set of runs.
pub fn mean_loss(runs: &[RunReport], objective: Objective) -> f64 {
    let f = |r: &RunReport| match objective {
        Objective::Slippage => r.zeta,
        Objective::Impact => r.zeta_mi,
    };
    runs.iter().map(f).sum::<f64>() / runs.len().max(1) as f64
}

/// Trains on the train day, against the simulator or the analytic stub.
pub fn train_policy(cfg: &ExperimentConfig, stub: bool) -> Result<TrainOutcome, Error> {
    let market = cfg.market(Day::Train)?;
    let tc = cfg.train_config();
    if stub {
        train(&tc, &StubEnvironment::default(), &market.session, &cfg.meta_order)
    } else {
        let env = SimEnvironment {
            pool: BaselinePool::new(&market, &cfg.train_seeds()),
            objective: tc.objective,
        };
        train(&tc, &env, &market.session, &cfg.meta_order)
    }
}

/// TWAP sweep over the configured grid and its frontier.
pub struct FrontierSweep {
    pub points: Vec<FrontierPoint>,
    pub frontier: Frontier,
    pub scale: Standardizer,
}

pub fn frontier_sweep(cfg: &ExperimentConfig, pool: &BaselinePool) -> Result<FrontierSweep, Error> {
    let points = sweep_strategies(pool, &cfg.meta_order, &cfg.grid())?;
    let frontier = build_frontier(&points)?;
    if !check_dominance(&points, &frontier) {
        return Err(Error::Invariant("frontier violates the dominance invariant".into()));
    }
    let scale = Standardizer::from_points(&points);
    Ok(FrontierSweep { points, frontier, scale })
}

pub struct EvaluationTable {
    /// TWAP over the whole session, VWAP, then each policy in order.
    pub evaluations: Vec<StrategyEvaluation>,
    pub distances: Vec<f64>,
    pub sweep: FrontierSweep,
    pub vwap_profile: Vec<f64>,
}

/// Scores the baselines and `policies` on the test day over the
/// evaluation seeds. Distances are measured to a frontier built from the
/// separate frontier seed set, so that a baseline which is also a grid
/// strategy is not scored against its own sample.
pub fn evaluate_table(cfg: &ExperimentConfig, policies: &[(String, PolicyFile)]) -> Result<EvaluationTable, Error> {
    let market = cfg.market(Day::Test)?;
    let s = &market.session;
    let pool = BaselinePool::new(&market, &cfg.eval_seeds());
    let n = pool.len();
    let meta = &cfg.meta_order;
    let profile = cfg.vwap_profile()?;
    let mut evaluations = vec![
        evaluate_strategy(&pool, "twap", &vec![twap_schedule(meta, s, s.open_ms, s.close_ms)?; n])?,
        evaluate_strategy(&pool, "vwap", &vec![vwap_schedule(meta, s, &profile)?; n])?,
    ];
    for (i, (label, p)) in policies.iter().enumerate() {
        let strategy = Strategy::Policy(Box::new(p.clone()));
        let schedules = strategy.schedules(meta, s, n, derive_seed(cfg.seed, 100 + i as u64))?;
        evaluations.push(evaluate_strategy(&pool, label, &schedules)?);
    }
    let sweep = frontier_sweep(cfg, &BaselinePool::new(&market, &cfg.frontier_seeds()))?;
    let distances = evaluations
        .iter()
        .map(|e| distance_to_frontier(e.v, e.e, &sweep.points, &sweep.frontier, &sweep.scale))
        .collect();
    Ok(EvaluationTable {
        evaluations,
        distances,
        sweep,
        vwap_profile: profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "scale": "full"}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.session(), SessionTemplate::full());
        assert_eq!(c.grid().len(), 190);
    }

    #[test]
    fn seed_sets_are_disjoint_and_deterministic() {
        let c = ExperimentConfig::default();
        let a = c.train_seeds();
        let b = c.eval_seeds();
        assert_eq!(a, c.train_seeds());
        assert!(a.iter().all(|s| !b.contains(s)));
        let other = ExperimentConfig { seed: 1, ..c.clone() };
        assert_ne!(other.eval_seeds(), b);
    }

    #[test]
    fn missing_input_file_is_a_config_error() {
        let mut c = ExperimentConfig::default();
        c.calibration.target_events = Some(PathBuf::from("/definitely/not/here.csv"));
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
