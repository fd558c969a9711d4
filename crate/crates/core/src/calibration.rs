//! Stylised facts of a session, the distance between two sets of facts, and
//! a derivative-free search for demand parameters that reproduce a target.
//!
//! Everything is measured from an event log: replaying it rebuilds the mid
//! path and the spread, so a recorded target and a simulated candidate go
//! through exactly the same code.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{estimate_arrival_profile, ChiarellaParams};
use crate::events::{apply_event, BookEvent, TradeRecord};
use crate::impact::{aggregate_imbalance, fit_impact, pool_observations, ImpactFit, ImpactParams};
use crate::lob::{OrderBook, Time, Trade};
use crate::parallel::par_map;
use crate::rng::{derive_seed, stream_rng};
use crate::series::MidSeries;
use crate::session::SessionTemplate;
use crate::sim::{run_baseline, MarketConfig, RecordOptions};
use crate::Error;

pub const ACF_LAGS: usize = 20;
pub const HISTOGRAM_BINS: usize = 101;
/// Spread histogram bins: 1 to 20 ticks, then one bin for wider or
/// one-sided books.
pub const SPREAD_BINS: usize = 21;
const SPREAD_SAMPLE_MS: Time = 1000;

/// Edges of one fixed-range histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRange {
    pub lo: f64,
    pub hi: f64,
}

impl BinRange {
    /// Mean plus or minus five standard deviations of `xs`.
    pub fn around(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let half = if sd > 0.0 { 5.0 * sd } else { 1e-9 };
        BinRange {
            lo: mean - half,
            hi: mean + half,
        }
    }

    /// Normalised counts; values outside the range land in the end bins.
    pub fn histogram(&self, xs: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; HISTOGRAM_BINS];
        if xs.is_empty() {
            return h;
        }
        let width = (self.hi - self.lo) / HISTOGRAM_BINS as f64;
        for &x in xs {
            let b = ((x - self.lo) / width).floor();
            let b = if b.is_nan() { 0 } else { b.clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize };
            h[b] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    }
}

/// Histogram ranges shared by a target and every candidate compared to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactBins {
    pub returns_1s: BinRange,
    pub returns_60s: BinRange,
    pub abs_returns_1s: BinRange,
    pub abs_returns_60s: BinRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedFacts {
    pub limit_arrival_rate: Vec<f64>,
    pub market_arrival_rate: Vec<f64>,
    pub spread_histogram: Vec<f64>,
    pub returns_hist_1s: Vec<f64>,
    pub returns_hist_60s: Vec<f64>,
    pub abs_returns_hist_1s: Vec<f64>,
    pub abs_returns_hist_60s: Vec<f64>,
    pub acf_returns_1s: Vec<f64>,
    pub acf_returns_60s: Vec<f64>,
    pub acf_abs_returns_1s: Vec<f64>,
    pub acf_abs_returns_60s: Vec<f64>,
    pub orderflow_persistence: Vec<f64>,
    pub bins: FactBins,
    /// Series whose autocorrelation was undefined and reported as zero.
    pub undefined_acf: Vec<String>,
}

impl StylizedFacts {
    fn components(&self) -> [(&'static str, &Vec<f64>); 12] {
        [
            ("limit_arrival_rate", &self.limit_arrival_rate),
            ("market_arrival_rate", &self.market_arrival_rate),
            ("spread_histogram", &self.spread_histogram),
            ("returns_hist_1s", &self.returns_hist_1s),
            ("returns_hist_60s", &self.returns_hist_60s),
            ("abs_returns_hist_1s", &self.abs_returns_hist_1s),
            ("abs_returns_hist_60s", &self.abs_returns_hist_60s),
            ("acf_returns_1s", &self.acf_returns_1s),
            ("acf_returns_60s", &self.acf_returns_60s),
            ("acf_abs_returns_1s", &self.acf_abs_returns_1s),
            ("acf_abs_returns_60s", &self.acf_abs_returns_60s),
            ("orderflow_persistence", &self.orderflow_persistence),
        ]
    }
}

/// Sample autocorrelation at lags `0..=max_lag`, or `None` for a series
/// with zero variance.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = xs.len();
    if n == 0 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let denom: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if !(denom > 0.0) {
        return None;
    }
    Some(
        (0..=max_lag)
            .map(|k| {
                if k >= n {
                    return 0.0;
                }
                let num: f64 = (0..n - k).map(|t| (xs[t] - mean) * (xs[t + k] - mean)).sum();
                (num / denom).clamp(-1.0, 1.0)
            })
            .collect(),
    )
}

/// Log returns over `horizon` within each trading stretch; no return spans
/// the lunch break.
pub fn log_returns(mid: &MidSeries, session: &SessionTemplate, horizon: Time) -> Vec<f64> {
    let stretches: Vec<(Time, Time)> = if session.lunch.is_some() {
        session.halves().to_vec()
    } else {
        vec![(session.open_ms, session.close_ms)]
    };
    let mut out = Vec::new();
    for (a, b) in stretches {
        let m = mid.sample(a, b + 1, horizon);
        out.extend(m.windows(2).filter(|w| w[0] > 0.0 && w[1] > 0.0).map(|w| (w[1] / w[0]).ln()));
    }
    out
}

/// Mid path, trades and once-a-second spreads rebuilt from an event log.
/// Expiries take effect exactly at their expiry time.
#[derive(Clone, Debug, Default)]
pub struct ReplayedSession {
    pub mid: MidSeries,
    pub trades: Vec<TradeRecord>,
    /// Spread in ticks sampled each second of trading; `None` for a
    /// one-sided book.
    pub spreads: Vec<Option<i64>>,
}

pub fn replay_session(events: &[BookEvent], session: &SessionTemplate) -> ReplayedSession {
    let mut book = OrderBook::new(session.tick_size);
    let mut out = ReplayedSession::default();
    let mut trades: Vec<Trade> = Vec::new();
    let mut expired = Vec::new();
    let mut last_mid: Option<f64> = None;
    let mut next_sample = session.open_ms;

    // Expires up to `t` and records the mid if the book changed.
    let mut advance = |book: &mut OrderBook, t: Time, out: &mut ReplayedSession, last_mid: &mut Option<f64>, force: bool| {
        expired.clear();
        book.expire_into(t, &mut expired);
        if force || !expired.is_empty() {
            if let Some(m) = book.mid() {
                *last_mid = Some(m);
            }
            if let Some(m) = *last_mid {
                out.mid.push(t, m * session.tick_size);
            }
        }
    };
    let mut i = 0;
    loop {
        let next_event = events.get(i).map_or(Time::MAX, |e| e.time);
        if let Some(x) = book.next_expiry().filter(|&x| x < next_event && x < next_sample.max(session.close_ms)) {
            if x < next_sample || next_sample >= session.close_ms {
                advance(&mut book, x, &mut out, &mut last_mid, false);
                continue;
            }
        }
        if next_sample < session.close_ms && next_sample < next_event {
            if session.is_trading(next_sample) {
                advance(&mut book, next_sample, &mut out, &mut last_mid, false);
                out.spreads.push(book.spread());
            }
            next_sample += SPREAD_SAMPLE_MS;
            continue;
        }
        let Some(e) = events.get(i) else { break };
        advance(&mut book, e.time, &mut out, &mut last_mid, false);
        trades.clear();
        if apply_event(&mut book, e, &mut trades).is_ok() {
            out.trades.extend(trades.iter().map(TradeRecord::from));
        }
        advance(&mut book, e.time, &mut out, &mut last_mid, true);
        i += 1;
    }
    out
}

/// Measures every fact over the session. With `bins` the return histograms
/// use those ranges; otherwise ranges are derived from this session.
pub fn compute_stylised_facts(
    trades: &[TradeRecord],
    mid: &MidSeries,
    events: &[BookEvent],
    session: &SessionTemplate,
    bins: Option<&FactBins>,
) -> StylizedFacts {
    let profile = estimate_arrival_profile(events, session);
    let spreads = replay_session(events, session).spreads;
    let mut spread_histogram = vec![0.0; SPREAD_BINS];
    for s in &spreads {
        let b = match s {
            Some(s) if (1..SPREAD_BINS as i64).contains(s) => (*s - 1) as usize,
            _ => SPREAD_BINS - 1,
        };
        spread_histogram[b] += 1.0;
    }
    if !spreads.is_empty() {
        let n = spreads.len() as f64;
        spread_histogram.iter_mut().for_each(|c| *c /= n);
    }

    let r1 = log_returns(mid, session, 1000);
    let r60 = log_returns(mid, session, 60_000);
    let a1: Vec<f64> = r1.iter().map(|x| x.abs()).collect();
    let a60: Vec<f64> = r60.iter().map(|x| x.abs()).collect();
    let bins = bins.copied().unwrap_or_else(|| FactBins {
        returns_1s: BinRange::around(&r1),
        returns_60s: BinRange::around(&r60),
        abs_returns_1s: BinRange::around(&a1),
        abs_returns_60s: BinRange::around(&a60),
    });
    let flow: Vec<f64> = trades
        .iter()
        .filter(|t| session.is_trading(t.time))
        .map(|t| t.aggressor_side.sign() as f64)
        .collect();

    let mut undefined_acf = Vec::new();
    let mut acf = |name: &str, xs: &[f64]| match autocorrelation(xs, ACF_LAGS) {
        Some(a) => a[1..].to_vec(),
        None => {
            undefined_acf.push(name.to_string());
            vec![0.0; ACF_LAGS]
        }
    };
    let acf_returns_1s = acf("returns_1s", &r1);
    let acf_returns_60s = acf("returns_60s", &r60);
    let acf_abs_returns_1s = acf("abs_returns_1s", &a1);
    let acf_abs_returns_60s = acf("abs_returns_60s", &a60);
    let orderflow_persistence = acf("orderflow", &flow);
    StylizedFacts {
        limit_arrival_rate: profile.limit_rate,
        market_arrival_rate: profile.market_rate,
        spread_histogram,
        returns_hist_1s: bins.returns_1s.histogram(&r1),
        returns_hist_60s: bins.returns_60s.histogram(&r60),
        abs_returns_hist_1s: bins.abs_returns_1s.histogram(&a1),
        abs_returns_hist_60s: bins.abs_returns_60s.histogram(&a60),
        acf_returns_1s,
        acf_returns_60s,
        acf_abs_returns_1s,
        acf_abs_returns_60s,
        orderflow_persistence,
        bins,
        undefined_acf,
    }
}

/// Facts of an event log alone, rebuilding mid and trades by replay.
pub fn facts_from_event_log(events: &[BookEvent], session: &SessionTemplate, bins: Option<&FactBins>) -> StylizedFacts {
    let r = replay_session(events, session);
    compute_stylised_facts(&r.trades, &r.mid, events, session, bins)
}

/// Sum over components of the L1 difference divided by the mean of the two
/// components' L1 norms. For histograms the divisor is 1.
pub fn facts_distance(a: &StylizedFacts, b: &StylizedFacts) -> f64 {
    a.components()
        .iter()
        .zip(b.components().iter())
        .map(|((_, x), (_, y))| component_distance(x, y))
        .sum()
}

/// Per-component contributions, for reporting.
pub fn facts_distance_breakdown(a: &StylizedFacts, b: &StylizedFacts) -> BTreeMap<String, f64> {
    a.components()
        .iter()
        .zip(b.components().iter())
        .map(|((name, x), (_, y))| (name.to_string(), component_distance(x, y)))
        .collect()
}

fn component_distance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().max(y.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let l1: f64 = (0..n).map(|i| (at(x, i) - at(y, i)).abs()).sum();
    let scale = 0.5 * (x.iter().map(|v| v.abs()).sum::<f64>() + y.iter().map(|v| v.abs()).sum::<f64>());
    if scale > 0.0 {
        l1 / scale
    } else {
        0.0
    }
}

/// Inclusive search range of one demand parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Search in log space; requires `lo > 0`.
    #[serde(default)]
    pub log: bool,
}

pub const CALIBRATED_NAMES: [&str; 9] = [
    "kappa", "alpha_L", "beta_L", "gamma_L", "alpha_H", "beta_H", "gamma_H", "sigma", "noise_weight",
];

fn slot<'a>(p: &'a mut ChiarellaParams, name: &str) -> Result<&'a mut f64, Error> {
    Ok(match name {
        "kappa" => &mut p.kappa,
        "alpha_L" => &mut p.alpha_l,
        "beta_L" => &mut p.beta_l,
        "gamma_L" => &mut p.gamma_l,
        "alpha_H" => &mut p.alpha_h,
        "beta_H" => &mut p.beta_h,
        "gamma_H" => &mut p.gamma_h,
        "sigma" => &mut p.sigma,
        "noise_weight" => &mut p.noise_weight,
        _ => return Err(Error::Config(format!("unknown calibration parameter `{name}`"))),
    })
}

impl ParamBound {
    pub fn new(name: &str, lo: f64, hi: f64, log: bool) -> Self {
        ParamBound {
            name: name.to_string(),
            lo,
            hi,
            log,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("bound for `{}` must be finite with lo <= hi", self.name)));
        }
        if self.log && !(self.lo > 0.0) {
            return Err(Error::Config(format!("log-scaled bound for `{}` needs lo > 0", self.name)));
        }
        let mut probe = ChiarellaParams::TRAIN_DAY;
        slot(&mut probe, &self.name).map(|_| ())
    }

    /// Maps `u` in `[0, 1]` into the range.
    fn value(&self, u: f64) -> f64 {
        if self.log {
            (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }
}

/// Ranges around the shipped train-day values.
pub fn default_bounds() -> Vec<ParamBound> {
    vec![
        ParamBound::new("kappa", 0.01, 0.2, true),
        ParamBound::new("beta_L", 1.0, 12.0, false),
        ParamBound::new("gamma_L", 1.0, 10.0, false),
        ParamBound::new("beta_H", 0.2, 4.0, false),
        ParamBound::new("gamma_H", 2e4, 8e5, true),
        ParamBound::new("sigma", 0.01, 0.5, true),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: ChiarellaParams,
    pub distance: f64,
    /// Set when the candidate could not be simulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub best_params: ChiarellaParams,
    /// Impact law fitted directly to the target's trades and mids.
    pub impact: Option<ImpactParams>,
    pub best_distance: f64,
    pub evaluation_log: Vec<Evaluation>,
}

/// Random search over `0.7 * budget` candidates, then per-parameter
/// golden-section refinement with the rest, starting from
/// `base` for parameters without a bound. `simulate` maps candidate
/// parameters to facts and may fail.
pub fn calibrate<F>(
    target: &StylizedFacts,
    base: &ChiarellaParams,
    bounds: &[ParamBound],
    budget: usize,
    seed: u64,
    simulate: F,
) -> Result<CalibrationResult, Error>
where
    F: Fn(&ChiarellaParams) -> Result<StylizedFacts, Error> + Sync,
{
    if budget == 0 {
        return Err(Error::Config("calibration budget must be at least one evaluation".into()));
    }
    if bounds.is_empty() {
        return Err(Error::Config("calibration needs at least one bounded parameter".into()));
    }
    for b in bounds {
        b.validate()?;
    }
    let candidate = |u: &[f64]| -> ChiarellaParams {
        let mut p = *base;
        for (b, &x) in bounds.iter().zip(u) {
            *slot(&mut p, &b.name).expect("validated") = b.value(x);
        }
        p
    };
    let evaluate = |p: &ChiarellaParams| -> Evaluation {
        let res = p.validate().and_then(|_| simulate(p));
        match res {
            Ok(f) => {
                let d = facts_distance(&f, target);
                Evaluation {
                    params: *p,
                    distance: if d.is_finite() { d } else { f64::INFINITY },
                    error: None,
                }
            }
            Err(e) => Evaluation {
                params: *p,
                distance: f64::INFINITY,
                error: Some(e.to_string()),
            },
        }
    };

    let n_random = ((budget as f64 * 0.7).round() as usize).clamp(1, budget);
    let mut rng = stream_rng(seed, 0xca1b);
    let draws: Vec<Vec<f64>> = (0..n_random).map(|_| bounds.iter().map(|_| rng.random::<f64>()).collect()).collect();
    let params: Vec<ChiarellaParams> = draws.iter().map(|u| candidate(u)).collect();
    let mut log: Vec<Evaluation> = par_map(&params, evaluate);
    let mut us = draws;

    let per_param = (budget - n_random) / bounds.len();
    if per_param >= 2 {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        for j in 0..bounds.len() {
            let start = us[argmin(&log)].clone();
            let mut probe = |x: f64| {
                let mut u = start.clone();
                u[j] = x;
                log.push(evaluate(&candidate(&u)));
                us.push(u);
                log.last().map_or(f64::INFINITY, |e| e.distance)
            };
            let (mut a, mut b) = (0.0, 1.0);
            let mut c = b - INV_PHI * (b - a);
            let mut d = a + INV_PHI * (b - a);
            let mut fc = probe(c);
            let mut fd = probe(d);
            for _ in 2..per_param {
                if fc <= fd {
                    (b, d, fd) = (d, c, fc);
                    c = b - INV_PHI * (b - a);
                    fc = probe(c);
                } else {
                    (a, c, fc) = (c, d, fd);
                    d = a + INV_PHI * (b - a);
                    fd = probe(d);
                }
            }
        }
    }
    let best_i = argmin(&log);
    let best = &log[best_i];
    Ok(CalibrationResult {
        best_params: best.params,
        impact: None,
        best_distance: best.distance,
        evaluation_log: log.clone(),
    })
}

fn argmin(log: &[Evaluation]) -> usize {
    let mut best = 0;
    for (i, e) in log.iter().enumerate() {
        if e.distance < log[best].distance {
            best = i;
        }
    }
    best
}

/// Event and trade logs of one background-only session.
pub struct SyntheticTarget {
    pub events: Vec<BookEvent>,
    pub trades: Vec<TradeRecord>,
    pub mid: MidSeries,
}

pub fn generate_synthetic_target(cfg: &Arc<MarketConfig>, seed: u64) -> SyntheticTarget {
    let run = run_baseline(
        cfg,
        seed,
        RecordOptions {
            trades: true,
            events: true,
            fundamental: false,
        },
    );
    SyntheticTarget {
        events: run.recorder.events,
        trades: run.recorder.trades,
        mid: run.recorder.mid,
    }
}

/// Simulates one session with `params` and measures it against `bins`.
pub fn simulate_facts(cfg: &Arc<MarketConfig>, params: &ChiarellaParams, seed: u64, bins: &FactBins) -> Result<StylizedFacts, Error> {
    let mut c = (**cfg).clone();
    c.chiarella = *params;
    c.validate()?;
    let t = generate_synthetic_target(&Arc::new(c), seed);
    Ok(compute_stylised_facts(&t.trades, &t.mid, &t.events, &cfg.session, Some(bins)))
}

/// Aggregate impact law of a recorded session: imbalance per second,
/// pooled into log bins, fitted by weighted least squares.
pub fn fit_session_impact(trades: &[TradeRecord], mid: &MidSeries) -> Result<ImpactFit, Error> {
    let obs = aggregate_imbalance(trades, mid, 1000);
    fit_impact(&pool_observations(&obs, 10))
}

/// Seed used for every candidate of one calibration run.
pub fn candidate_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xfac7)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_series_has_unit_negative_first_lag() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = autocorrelation(&xs, 3).unwrap();
        assert!((acf[1] + 1.0).abs() < 0.01, "{acf:?}");
        assert!((acf[2] - 1.0).abs() < 0.01);
    }

    #[test]
    fn white_noise_has_small_autocorrelation() {
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() - 0.5).collect();
        let acf = autocorrelation(&xs, ACF_LAGS).unwrap();
        assert!(acf[1..].iter().all(|a| a.abs() < 0.05), "{acf:?}");
    }

    #[test]
    fn constant_series_autocorrelation_is_undefined() {
        assert!(autocorrelation(&[2.0; 50], 5).is_none());
        assert!(autocorrelation(&[], 5).is_none());
    }

    #[test]
    fn histogram_clamps_and_normalises() {
        let r = BinRange { lo: 0.0, hi: 1.01 };
        let h = r.histogram(&[-5.0, 0.005, 0.5, 7.0]);
        assert_eq!(h.len(), HISTOGRAM_BINS);
        assert_eq!(h[0], 0.5);
        assert_eq!(h[50], 0.25);
        assert_eq!(h[100], 0.25);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_range_concentrates_at_the_centre() {
        let r = BinRange::around(&[0.0; 10]);
        let h = r.histogram(&[0.0; 10]);
        assert_eq!(h[HISTOGRAM_BINS / 2], 1.0);
    }

    #[test]
    fn component_distance_is_symmetric_and_scaled() {
        assert_eq!(component_distance(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        assert_eq!(component_distance(&[0.0, 1.0], &[1.0, 0.0]), 2.0);
        assert_eq!(component_distance(&[0.0], &[0.0]), 0.0);
        assert_eq!(component_distance(&[2.0], &[4.0]), 2.0 / 3.0);
    }

    fn toy_facts(x: f64) -> StylizedFacts {
        let bins = FactBins {
            returns_1s: BinRange { lo: -1.0, hi: 1.0 },
            returns_60s: BinRange { lo: -1.0, hi: 1.0 },
            abs_returns_1s: BinRange { lo: 0.0, hi: 1.0 },
            abs_returns_60s: BinRange { lo: 0.0, hi: 1.0 },
        };
        let v = vec![x, 1.0];
        StylizedFacts {
            limit_arrival_rate: v.clone(),
            market_arrival_rate: v.clone(),
            spread_histogram: v.clone(),
            returns_hist_1s: v.clone(),
            returns_hist_60s: v.clone(),
            abs_returns_hist_1s: v.clone(),
            abs_returns_hist_60s: v.clone(),
            acf_returns_1s: v.clone(),
            acf_returns_60s: v.clone(),
            acf_abs_returns_1s: v.clone(),
            acf_abs_returns_60s: v.clone(),
            orderflow_persistence: v,
            bins,
            undefined_acf: vec![],
        }
    }

    /// Facts whose first entry is the candidate's kappa, so the search has
    /// a known optimum.
    fn toy_search(budget: usize, seed: u64) -> CalibrationResult {
        let target = toy_facts(0.05);
        calibrate(
            &target,
            &ChiarellaParams::TRAIN_DAY,
            &[ParamBound::new("kappa", 0.0, 0.1, false)],
            budget,
            seed,
            |p| Ok(toy_facts(p.kappa)),
        )
        .unwrap()
    }

    #[test]
    fn search_spends_exactly_the_budget_and_approaches_the_optimum() {
        let r = toy_search(40, 1);
        assert_eq!(r.evaluation_log.len(), 40);
        assert!((r.best_params.kappa - 0.05).abs() < 1e-3, "{}", r.best_params.kappa);
        let min = r.evaluation_log.iter().map(|e| e.distance).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_distance, min);
    }

    #[test]
    fn budget_of_one_returns_the_single_candidate() {
        let r = toy_search(1, 3);
        assert_eq!(r.evaluation_log.len(), 1);
        assert_eq!(r.best_params, r.evaluation_log[0].params);
    }

    #[test]
    fn seeds_change_the_log_but_not_reproducibility() {
        assert_eq!(toy_search(10, 4), toy_search(10, 4));
        assert_ne!(toy_search(10, 4).evaluation_log, toy_search(10, 5).evaluation_log);
    }

    #[test]
    fn failing_candidates_score_infinity() {
        let target = toy_facts(0.05);
        let r = calibrate(
            &target,
            &ChiarellaParams::TRAIN_DAY,
            &[ParamBound::new("kappa", 0.0, 0.1, false)],
            6,
            0,
            |p| if p.kappa < 0.05 { Err(Error::Config("boom".into())) } else { Ok(toy_facts(p.kappa)) },
        )
        .unwrap();
        assert!(r.evaluation_log.iter().any(|e| e.distance.is_infinite() && e.error.is_some()));
        assert!(r.best_distance.is_finite());
    }

    #[test]
    fn bad_bounds_are_rejected() {
        let t = toy_facts(0.0);
        let run = |b: ParamBound| calibrate(&t, &ChiarellaParams::TRAIN_DAY, &[b], 5, 0, |p| Ok(toy_facts(p.kappa)));
        assert!(run(ParamBound::new("nope", 0.0, 1.0, false)).is_err());
        assert!(run(ParamBound::new("kappa", 1.0, 0.0, false)).is_err());
        assert!(run(ParamBound::new("kappa", 0.0, 1.0, true)).is_err());
        assert!(calibrate(&t, &ChiarellaParams::TRAIN_DAY, &default_bounds(), 0, 0, |p| Ok(toy_facts(p.kappa))).is_err());
    }
}
