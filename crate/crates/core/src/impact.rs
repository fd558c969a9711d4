//! Aggregate impact function `f(Q) = sign(Q) * lambda * |Q|^gamma`:
//! windowed orderflow-imbalance aggregation, the weighted log-log fit, and
//! the reactive shift the simulator applies once per window.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::events::TradeRecord;
use crate::lob::{Price, Time};
use crate::series::MidSeries;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactParams {
    pub lambda: f64,
    pub gamma: f64,
}

impl ImpactParams {
    /// Market impact column for 2023-09-11.
    pub const TRAIN_DAY: ImpactParams = ImpactParams {
        lambda: 0.266,
        gamma: 0.707,
    };
    /// Market impact column for 2023-09-12.
    pub const TEST_DAY: ImpactParams = ImpactParams {
        lambda: 0.257,
        gamma: 0.705,
    };

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("impact lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::Config(format!("impact gamma must be in (0, 2], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Signed price shift for an excess demand `q`. Odd in `q`.
#[inline]
pub fn apply_impact(params: &ImpactParams, q: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    q.signum() * params.lambda * q.abs().powf(params.gamma)
}

/// The shift rounded to whole ticks.
pub fn impact_ticks(params: &ImpactParams, q: f64, tick_size: f64) -> Price {
    (apply_impact(params, q) / tick_size).round() as Price
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceObservation {
    pub window_start_s: i64,
    /// Buy aggressor volume minus sell aggressor volume.
    pub q: f64,
    pub dmid: f64,
    pub count: u64,
}

/// One observation per window that contains at least one trade.
pub fn aggregate_imbalance(
    trades: &[TradeRecord],
    mid: &MidSeries,
    window_ms: Time,
) -> Vec<ImbalanceObservation> {
    let mut flows: BTreeMap<i64, f64> = BTreeMap::new();
    for t in trades {
        let w = t.time.div_euclid(window_ms);
        *flows.entry(w).or_insert(0.0) += (t.aggressor_side.sign() * t.quantity as i64) as f64;
    }
    flows
        .into_iter()
        .filter_map(|(w, q)| {
            let start = w * window_ms;
            let end = start + window_ms;
            let (a, b) = (mid.before(start)?, mid.before(end)?);
            Some(ImbalanceObservation {
                window_start_s: start.div_euclid(1000),
                q,
                dmid: b - a,
                count: 1,
            })
        })
        .collect()
}

/// Pools raw windows into log-spaced |Q| bins per sign. Each bin reports
/// the mean Q and mean mid change with `count` raw windows.
pub fn pool_observations(obs: &[ImbalanceObservation], bins_per_decade: usize) -> Vec<ImbalanceObservation> {
    let mut pooled: BTreeMap<(i64, i64), (f64, f64, u64, i64)> = BTreeMap::new();
    for o in obs {
        if o.q == 0.0 {
            continue;
        }
        let key = (
            o.q.signum() as i64,
            (o.q.abs().log10() * bins_per_decade as f64).floor() as i64,
        );
        let e = pooled.entry(key).or_insert((0.0, 0.0, 0, o.window_start_s));
        e.0 += o.q * o.count as f64;
        e.1 += o.dmid * o.count as f64;
        e.2 += o.count;
        e.3 = e.3.min(o.window_start_s);
    }
    pooled
        .into_values()
        .map(|(q, d, n, start)| ImbalanceObservation {
            window_start_s: start,
            q: q / n as f64,
            dmid: d / n as f64,
            count: n,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactFit {
    pub lambda: f64,
    pub gamma: f64,
    /// Weighted coefficient of determination in log-log space.
    pub r2: f64,
    pub n_bins: usize,
}

impl ImpactFit {
    pub fn params(&self) -> ImpactParams {
        ImpactParams {
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }
}

/// Weighted least squares of `log|dmid|` on `log|Q|` with weights
/// `sqrt(count)`. Bins with `Q = 0`, `dmid = 0`, or opposite signs of Q and
/// dmid are dropped.
pub fn fit_impact(observations: &[ImbalanceObservation]) -> Result<ImpactFit, Error> {
    let usable: Vec<(f64, f64, f64)> = observations
        .iter()
        .filter(|o| o.q != 0.0 && o.dmid != 0.0 && o.q.signum() == o.dmid.signum() && o.count > 0)
        .map(|o| (o.q.abs().ln(), o.dmid.abs().ln(), (o.count as f64).sqrt()))
        .collect();
    let mut distinct: Vec<f64> = usable.iter().map(|u| u.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct |Q| bins with consistent impact sign, got {}",
            distinct.len()
        )));
    }
    let wsum: f64 = usable.iter().map(|u| u.2).sum();
    let xbar = usable.iter().map(|u| u.2 * u.0).sum::<f64>() / wsum;
    let ybar = usable.iter().map(|u| u.2 * u.1).sum::<f64>() / wsum;
    let sxx: f64 = usable.iter().map(|u| u.2 * (u.0 - xbar).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|u| u.2 * (u.0 - xbar) * (u.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = usable
        .iter()
        .map(|u| u.2 * (u.1 - intercept - slope * u.0).powi(2))
        .sum();
    let ss_tot: f64 = usable.iter().map(|u| u.2 * (u.1 - ybar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let fit = ImpactFit {
        lambda: intercept.exp(),
        gamma: slope,
        r2,
        n_bins: usable.len(),
    };
    fit.params()
        .validate()
        .map_err(|e| Error::Fit(format!("fitted parameters out of range: {e}")))?;
    Ok(fit)
}

pub const OBSERVATIONS_HEADER: &str = "window_start_s,Q,dmid,count";

pub fn write_observations<W: Write>(mut w: W, obs: &[ImbalanceObservation]) -> std::io::Result<()> {
    writeln!(w, "{OBSERVATIONS_HEADER}")?;
    for o in obs {
        writeln!(w, "{},{},{},{}", o.window_start_s, o.q, o.dmid, o.count)?;
    }
    Ok(())
}

/// Impact state carried by a running simulation.
///
/// Signed aggressor volume is accumulated per window, separately for
/// background flow and for the executor. When a window closes, the shift
/// decays and then absorbs the executor's marginal impact
/// `f(Q_bg + Q_exec) - f(Q_bg)`, so a window without executor flow leaves
/// the shift untouched and large same-signed background flow absorbs part
/// of the executor's footprint.
#[derive(Clone, Debug)]
pub struct ReactiveImpact {
    params: ImpactParams,
    window_ms: Time,
    decay_per_window: f64,
    window_index: i64,
    pending_background: f64,
    pending_executor: f64,
    shift: f64,
}

impl ReactiveImpact {
    /// `half_life_ms` of `None` makes the shift permanent.
    pub fn new(params: ImpactParams, window_ms: Time, half_life_ms: Option<f64>, start: Time) -> Self {
        let decay_per_window = match half_life_ms {
            Some(h) if h > 0.0 => 0.5f64.powf(window_ms as f64 / h),
            _ => 1.0,
        };
        ReactiveImpact {
            params,
            window_ms,
            decay_per_window,
            window_index: start.div_euclid(window_ms),
            pending_background: 0.0,
            pending_executor: 0.0,
            shift: 0.0,
        }
    }

    /// Closes every window that ends at or before `now`.
    pub fn advance(&mut self, now: Time) {
        let target = now.div_euclid(self.window_ms);
        if target <= self.window_index {
            return;
        }
        let marginal = if self.pending_executor != 0.0 {
            let total = self.pending_background + self.pending_executor;
            apply_impact(&self.params, total) - apply_impact(&self.params, self.pending_background)
        } else {
            0.0
        };
        self.shift = self.shift * self.decay_per_window + marginal;
        self.pending_background = 0.0;
        self.pending_executor = 0.0;
        let idle = target - self.window_index - 1;
        if idle > 0 && self.decay_per_window < 1.0 {
            self.shift *= self.decay_per_window.powi(idle.min(i32::MAX as i64) as i32);
        }
        self.window_index = target;
    }

    pub fn record(&mut self, signed_qty: f64, executor: bool) {
        if executor {
            self.pending_executor += signed_qty;
        } else {
            self.pending_background += signed_qty;
        }
    }

    /// Current cumulative shift in price units.
    pub fn shift(&self) -> f64 {
        self.shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::Side;

    fn synthetic(params: ImpactParams, qs: &[f64], counts: &[u64]) -> Vec<ImbalanceObservation> {
        qs.iter()
            .zip(counts)
            .enumerate()
            .map(|(i, (&q, &c))| ImbalanceObservation {
                window_start_s: i as i64,
                q,
                dmid: apply_impact(&params, q),
                count: c,
            })
            .collect()
    }

    #[test]
    fn apply_impact_values() {
        let p = ImpactParams { lambda: 0.266, gamma: 0.705 };
        assert_eq!(apply_impact(&p, 0.0), 0.0);
        assert!((apply_impact(&p, 1.0) - 0.266).abs() < 1e-15);
        for q in [0.5, 3.0, 170.0] {
            assert_eq!(apply_impact(&p, -q), -apply_impact(&p, q));
        }
        assert_eq!(impact_ticks(&p, 100.0, 1.0), (0.266f64 * 100f64.powf(0.705)).round() as i64);
    }

    #[test]
    fn noise_free_round_trip() {
        let p = ImpactParams { lambda: 0.266, gamma: 0.705 };
        let qs: Vec<f64> = (0..12).map(|i| 2f64.powi(i)).chain([-3.0, -40.0]).collect();
        let obs = synthetic(p, &qs, &vec![5; qs.len()]);
        let fit = fit_impact(&obs).unwrap();
        assert!((fit.lambda / p.lambda - 1.0).abs() < 1e-6);
        assert!((fit.gamma / p.gamma - 1.0).abs() < 1e-6);
        assert!(fit.r2 > 0.999_999);
        assert_eq!(fit.n_bins, qs.len());
    }

    #[test]
    fn linear_impact_recovered() {
        let p = ImpactParams { lambda: 1.0, gamma: 1.0 };
        let obs = synthetic(p, &[1.0, 2.0, 5.0, 10.0], &[1, 1, 1, 1]);
        let fit = fit_impact(&obs).unwrap();
        assert!((fit.lambda - 1.0).abs() < 1e-9 && (fit.gamma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weights_follow_counts() {
        // Four heavy bins on one line and a single light outlier bin.
        let line = ImpactParams { lambda: 0.5, gamma: 0.6 };
        let mut obs = synthetic(line, &[2.0, 8.0, 32.0, 128.0], &[100; 4]);
        obs.push(ImbalanceObservation {
            window_start_s: 9,
            q: 64.0,
            dmid: 5.0 * apply_impact(&line, 64.0),
            count: 1,
        });
        let weighted = fit_impact(&obs).unwrap();
        let mut flat = obs.clone();
        flat.iter_mut().for_each(|o| o.count = 1);
        let unweighted = fit_impact(&flat).unwrap();
        // Independent oracle: the weighted fit must sit closer to the heavy line.
        assert!((weighted.gamma - line.gamma).abs() < (unweighted.gamma - line.gamma).abs());
        assert!((weighted.lambda.ln() - line.lambda.ln()).abs() < (unweighted.lambda.ln() - line.lambda.ln()).abs());
        assert!((weighted.gamma - line.gamma).abs() < 0.1);
    }

    #[test]
    fn fit_errors_and_dropped_bins() {
        let p = ImpactParams { lambda: 1.0, gamma: 0.5 };
        let one = synthetic(p, &[4.0, 4.0], &[1, 1]);
        assert!(matches!(fit_impact(&one), Err(Error::Fit(_))));
        let mut obs = synthetic(p, &[1.0, 4.0, 9.0], &[1, 1, 1]);
        obs.push(ImbalanceObservation { window_start_s: 0, q: 0.0, dmid: 1.0, count: 3 });
        obs.push(ImbalanceObservation { window_start_s: 0, q: 25.0, dmid: -1.0, count: 3 });
        let fit = fit_impact(&obs).unwrap();
        assert_eq!(fit.n_bins, 3);
        assert!((fit.gamma - 0.5).abs() < 1e-9);
        assert!(fit_impact(&[]).is_err());
    }

    #[test]
    fn aggregation_by_window() {
        let trades = vec![
            TradeRecord { time: 100, price: 10, quantity: 100, aggressor_side: Side::Buy },
            TradeRecord { time: 900, price: 10, quantity: 40, aggressor_side: Side::Sell },
            TradeRecord { time: 2500, price: 11, quantity: 7, aggressor_side: Side::Sell },
        ];
        let mid = MidSeries::from_points(vec![(0, 100.0), (500, 101.0), (1500, 103.0), (2600, 102.5)]);
        let obs = aggregate_imbalance(&trades, &mid, 1000);
        // Window [1000, 2000) has no trades and is omitted.
        assert_eq!(obs.len(), 2);
        assert_eq!((obs[0].window_start_s, obs[0].q, obs[0].dmid), (0, 60.0, 1.0));
        assert_eq!((obs[1].window_start_s, obs[1].q, obs[1].dmid), (2, -7.0, -0.5));
    }

    #[test]
    fn pooled_bins_keep_counts() {
        let raw: Vec<_> = (0..10)
            .map(|i| ImbalanceObservation { window_start_s: i, q: 10.0, dmid: i as f64, count: 1 })
            .collect();
        let pooled = pool_observations(&raw, 4);
        assert_eq!(pooled.len(), 1);
        assert_eq!(pooled[0].count, 10);
        assert!((pooled[0].dmid - 4.5).abs() < 1e-12);
    }

    #[test]
    fn reactive_shift_decays_between_windows() {
        let p = ImpactParams { lambda: 1.0, gamma: 1.0 };
        let mut r = ReactiveImpact::new(p, 1000, Some(1000.0), 0);
        r.record(4.0, true);
        r.advance(999);
        assert_eq!(r.shift(), 0.0);
        r.advance(1000);
        assert_eq!(r.shift(), 4.0);
        r.advance(3000);
        assert!((r.shift() - 1.0).abs() < 1e-12);
        let mut permanent = ReactiveImpact::new(p, 1000, None, 0);
        permanent.record(-2.0, true);
        permanent.advance(50_000);
        assert_eq!(permanent.shift(), -2.0);
    }

    #[test]
    fn reactive_shift_is_marginal_to_background() {
        let p = ImpactParams { lambda: 0.3, gamma: 0.5 };
        let mut r = ReactiveImpact::new(p, 1000, None, 0);
        r.record(100.0, false);
        r.advance(1000);
        assert_eq!(r.shift(), 0.0);
        r.record(44.0, false);
        r.record(-4.0, false);
        r.record(9.0, true);
        r.advance(2000);
        let expected = apply_impact(&p, 49.0) - apply_impact(&p, 40.0);
        assert!((r.shift() - expected).abs() < 1e-12);
        assert!(r.shift() < apply_impact(&p, 9.0));
    }
}
