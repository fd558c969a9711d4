//! Paired baseline and counterfactual runs, and the split of slippage into
//! market risk and market impact.
//!
//! With fills `(t, p^E, v)`, baseline mid `p^B`, arrival price `p_R` and
//! executed volume `v_T`:
//!
//! * slippage `ζ = Σ p^E v / v_T − p_R`
//! * market risk `ζ_MR = Σ p^B v / v_T − p_R`
//! * market impact `ζ_MI = Σ (p^E − p^B) v / v_T`
//!
//! so `ζ = ζ_MR + ζ_MI`. All three are negated for sell meta-orders, making
//! a positive value an adverse cost for either side.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::execution::{execute_against_baseline, ExecutionSchedule};
use crate::lob::{Qty, Side, Time};
use crate::parallel::par_map;
use crate::series::MidSeries;
use crate::sim::{run_baseline, run_with_children, BaselineRun, ChildOrders, Fill, MarketConfig, RecordOptions};
use crate::Error;

pub const PATHS_HEADER: &str = "time_ms,baseline_mid,counterfactual_mid";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlippageDecomposition {
    pub zeta: f64,
    pub zeta_mr: f64,
    pub zeta_mi: f64,
    pub executed_volume: Qty,
}

/// Which part of the cost a schedule is trained or scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Slippage,
    Impact,
}

impl Objective {
    pub fn loss(self, d: &SlippageDecomposition) -> f64 {
        match self {
            Objective::Slippage => d.zeta,
            Objective::Impact => d.zeta_mi,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "slippage" => Ok(Objective::Slippage),
            "impact" => Ok(Objective::Impact),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected slippage or impact)"))),
        }
    }
}

pub fn decompose(fills: &[Fill], baseline_mid: &MidSeries, reference_price: f64, side: Side) -> Result<SlippageDecomposition, Error> {
    let volume: Qty = fills.iter().map(|f| f.volume).sum();
    if volume == 0 {
        return Err(Error::NoExecutedVolume);
    }
    let vt = volume as f64;
    let mut exec = 0.0;
    let mut base = 0.0;
    let mut diff = 0.0;
    for f in fills {
        let pb = baseline_mid
            .at(f.time)
            .ok_or_else(|| Error::Config(format!("baseline mid is not defined at {} ms", f.time)))?;
        let v = f.volume as f64;
        exec += f.price * v;
        base += pb * v;
        diff += (f.price - pb) * v;
    }
    let sign = side.sign() as f64;
    Ok(SlippageDecomposition {
        zeta: sign * (exec / vt - reference_price),
        zeta_mr: sign * (base / vt - reference_price),
        zeta_mi: sign * (diff / vt),
        executed_volume: volume,
    })
}

/// Both legs of one seed.
#[derive(Clone, Debug)]
pub struct PairedRun {
    pub seed: u64,
    pub side: Side,
    pub baseline_mid: MidSeries,
    pub counterfactual_mid: MidSeries,
    pub fills: Vec<Fill>,
    pub reference_price: f64,
    pub unfilled_volume: Qty,
    /// Fundamental value shared by both legs, one sample per demand tick.
    pub fundamental: Vec<(Time, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub zeta: f64,
    pub zeta_mr: f64,
    pub zeta_mi: f64,
    pub executed_volume: Qty,
    pub unfilled_volume: Qty,
}

impl PairedRun {
    pub fn decompose(&self) -> Result<SlippageDecomposition, Error> {
        decompose(&self.fills, &self.baseline_mid, self.reference_price, self.side)
    }

    pub fn report(&self) -> Result<RunReport, Error> {
        let d = self.decompose()?;
        Ok(RunReport {
            seed: self.seed,
            zeta: d.zeta,
            zeta_mr: d.zeta_mr,
            zeta_mi: d.zeta_mi,
            executed_volume: d.executed_volume,
            unfilled_volume: self.unfilled_volume,
        })
    }

    /// Both mids at every time either of them changes.
    pub fn write_paths_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{PATHS_HEADER}")?;
        let mut times: Vec<Time> = self
            .baseline_mid
            .points()
            .iter()
            .chain(self.counterfactual_mid.points())
            .map(|p| p.0)
            .collect();
        times.sort_unstable();
        times.dedup();
        for t in times {
            let b = self.baseline_mid.at(t).unwrap_or(f64::NAN);
            let c = self.counterfactual_mid.at(t).unwrap_or(f64::NAN);
            writeln!(w, "{t},{b},{c}")?;
        }
        Ok(())
    }
}

/// Simulates both legs in full and checks that they agree until the
/// executor's first child.
pub fn run_paired(cfg: &Arc<MarketConfig>, schedule: &ExecutionSchedule, seed: u64) -> Result<PairedRun, Error> {
    let options = RecordOptions {
        fundamental: true,
        ..Default::default()
    };
    let orders = schedule.orders();
    let children = ChildOrders {
        side: schedule.side,
        children: &orders,
    };
    let (baseline, counterfactual) = crate::parallel::join(
        || run_baseline(cfg, seed, options),
        || run_with_children(cfg, seed, children, options),
    );
    let first_child = orders.first().map_or(Time::MAX, |c| c.0);
    check_divergence(&baseline.recorder.mid, &counterfactual.mid, first_child)?;
    if baseline.recorder.fundamental != counterfactual.fundamental {
        let t = baseline
            .recorder
            .fundamental
            .iter()
            .zip(&counterfactual.fundamental)
            .find(|(a, b)| a != b)
            .map_or(0, |(a, _)| a.0);
        return Err(Error::LegDivergence(t));
    }
    Ok(PairedRun {
        seed,
        side: schedule.side,
        reference_price: baseline.reference_price(cfg),
        baseline_mid: baseline.recorder.mid,
        counterfactual_mid: counterfactual.mid,
        fills: counterfactual.fills,
        unfilled_volume: counterfactual.unfilled_volume,
        fundamental: baseline.recorder.fundamental,
    })
}

fn check_divergence(a: &MidSeries, b: &MidSeries, until: Time) -> Result<(), Error> {
    let pa = a.points().iter().take_while(|p| p.0 < until);
    let mut pb = b.points().iter().take_while(|p| p.0 < until);
    for x in pa {
        match pb.next() {
            Some(y) if y == x => {}
            Some(y) => return Err(Error::LegDivergence(x.0.min(y.0))),
            None => return Err(Error::LegDivergence(x.0)),
        }
    }
    if let Some(y) = pb.next() {
        return Err(Error::LegDivergence(y.0));
    }
    Ok(())
}

/// Baselines for a fixed seed set, reused across many schedules. Each
/// counterfactual resumes from the baseline checkpoint preceding its first
/// child, which is what makes Monte-Carlo training affordable.
pub struct BaselinePool {
    cfg: Arc<MarketConfig>,
    runs: Vec<BaselineRun>,
}

impl BaselinePool {
    pub fn new(cfg: &Arc<MarketConfig>, seeds: &[u64]) -> Self {
        let runs = par_map(seeds, |&s| run_baseline(cfg, s, RecordOptions::default()));
        BaselinePool { cfg: cfg.clone(), runs }
    }

    pub fn config(&self) -> &Arc<MarketConfig> {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn baseline(&self, index: usize) -> &BaselineRun {
        &self.runs[index]
    }

    pub fn evaluate(&self, index: usize, schedule: &ExecutionSchedule) -> Result<(SlippageDecomposition, Qty), Error> {
        let run = &self.runs[index];
        let exec = execute_against_baseline(run, schedule);
        let d = decompose(&exec.fills, run.mid(), run.reference_price(&self.cfg), schedule.side)?;
        Ok((d, exec.unfilled_volume))
    }

    /// Every (schedule, seed) pair, in schedule-major order.
    pub fn evaluate_all(&self, schedules: &[ExecutionSchedule]) -> Vec<Vec<Result<SlippageDecomposition, Error>>> {
        let n = self.runs.len();
        let jobs: Vec<(usize, usize)> = (0..schedules.len()).flat_map(|s| (0..n).map(move |r| (s, r))).collect();
        let flat = par_map(&jobs, |&(s, r)| self.evaluate(r, &schedules[s]).map(|x| x.0));
        let mut out: Vec<Vec<_>> = Vec::with_capacity(schedules.len());
        let mut it = flat.into_iter();
        for _ in 0..schedules.len() {
            out.push(it.by_ref().take(n).collect());
        }
        out
    }
}
