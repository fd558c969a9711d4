//! Meta-order slicing into child market orders.
//!
//! Three constructions are provided: an evenly spaced grid over a window
//! (TWAP), a per-minute allocation proportional to a volume profile (VWAP),
//! and a mixture of Gaussians in normalised session time whose draws are
//! resampled until they land inside the session.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lob::{Qty, Side, Time};
use crate::session::{SessionTemplate, MINUTE_MS};
use crate::sim::{run_fills_only, run_with_children, BaselineRun, ChildOrders, Fill, MarketConfig, RecordOptions};
use crate::Error;

pub const SCHEDULE_HEADER: &str = "time_ms,volume";
pub const FILLS_HEADER: &str = "time_ms,price,volume,child_index";

/// Draws per child before falling back to the nearest admissible time.
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaOrder {
    pub side: Side,
    pub total_volume: Qty,
    pub num_children: usize,
}

impl MetaOrder {
    pub const DEFAULT: MetaOrder = MetaOrder {
        side: Side::Sell,
        total_volume: 5000,
        num_children: 1000,
    };

    pub fn validate(&self) -> Result<(), Error> {
        if self.num_children == 0 || self.total_volume == 0 {
            return Err(Error::Config("meta-order needs positive volume and at least one child".into()));
        }
        if self.total_volume % self.num_children as Qty != 0 {
            return Err(Error::Config(format!(
                "{} children do not divide a volume of {}",
                self.num_children, self.total_volume
            )));
        }
        Ok(())
    }

    pub fn child_size(&self) -> Qty {
        self.total_volume / self.num_children as Qty
    }
}

impl Default for MetaOrder {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDistribution {
    pub modes: Vec<Mode>,
    /// Confines even-numbered modes to the morning and odd-numbered modes
    /// to the afternoon.
    pub bounded: bool,
}

impl ScheduleDistribution {
    pub fn validate(&self) -> Result<(), Error> {
        if self.modes.is_empty() {
            return Err(Error::Config("schedule distribution needs at least one mode".into()));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.modes.iter().any(|m| !in_unit(m.mu) || !in_unit(m.sigma)) {
            return Err(Error::Config("mode means and deviations must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledChild {
    pub time: Time,
    pub volume: Qty,
    /// Generating mode for sampled schedules.
    pub mode: Option<usize>,
    /// Normalised session time the child was drawn at.
    pub draw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSchedule {
    pub side: Side,
    /// Sorted by time; children at the same millisecond keep sample order.
    pub children: Vec<ScheduledChild>,
}

impl ExecutionSchedule {
    fn from_children(side: Side, mut children: Vec<ScheduledChild>) -> Self {
        children.sort_by_key(|c| c.time);
        ExecutionSchedule { side, children }
    }

    pub fn total_volume(&self) -> Qty {
        self.children.iter().map(|c| c.volume).sum()
    }

    pub fn orders(&self) -> Vec<(Time, Qty)> {
        self.children.iter().map(|c| (c.time, c.volume)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Checks volume conservation and that every child trades in session.
    pub fn validate(&self, meta: &MetaOrder, session: &SessionTemplate) -> Result<(), Error> {
        if self.total_volume() != meta.total_volume {
            return Err(Error::Config(format!(
                "schedule volume {} differs from the meta-order's {}",
                self.total_volume(),
                meta.total_volume
            )));
        }
        if let Some(c) = self.children.iter().find(|c| !session.is_trading(c.time)) {
            return Err(Error::Config(format!("child at {} ms is outside trading hours", c.time)));
        }
        if self.children.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(Error::Config("schedule is not sorted".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SCHEDULE_HEADER}")?;
        for c in &self.children {
            writeln!(w, "{},{}", c.time, c.volume)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, side: Side, session: &SessionTemplate) -> Result<Self, Error> {
        let mut children = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != SCHEDULE_HEADER {
                    return Err(Error::Parse(format!("expected header `{SCHEDULE_HEADER}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("schedule line {}: `{line}`", i + 1));
            let (t, v) = line.split_once(',').ok_or_else(bad)?;
            let time: Time = t.trim().parse().map_err(|_| bad())?;
            let volume: Qty = v.trim().parse().map_err(|_| bad())?;
            children.push(ScheduledChild {
                time,
                volume,
                mode: None,
                draw: session.wall_to_normalized(time),
            });
        }
        Ok(Self::from_children(side, children))
    }
}

fn plain_child(session: &SessionTemplate, time: Time, volume: Qty) -> ScheduledChild {
    ScheduledChild {
        time,
        volume,
        mode: None,
        draw: session.wall_to_normalized(time),
    }
}

/// `N` equal children on a left-aligned grid over `[start, end]`, spaced in
/// trading time so that a window spanning lunch skips it.
pub fn twap_schedule(meta: &MetaOrder, session: &SessionTemplate, start: Time, end: Time) -> Result<ExecutionSchedule, Error> {
    meta.validate()?;
    if !(session.open_ms <= start && start <= end && end <= session.close_ms && start < session.close_ms) {
        return Err(Error::Config(format!("TWAP window [{start}, {end}] is not inside the session")));
    }
    let s = session.wall_to_trading(start);
    let e = session.wall_to_trading(end);
    let n = meta.num_children as i64;
    let size = meta.child_size();
    let children = (0..n)
        .map(|i| plain_child(session, session.trading_to_wall(s + (e - s) * i / n), size))
        .collect();
    Ok(ExecutionSchedule::from_children(meta.side, children))
}

/// Allocates children to minutes in proportion to `volume_profile` by
/// largest remainder, then spreads each minute's children evenly across its
/// trading part.
pub fn vwap_schedule(meta: &MetaOrder, session: &SessionTemplate, volume_profile: &[f64]) -> Result<ExecutionSchedule, Error> {
    meta.validate()?;
    if volume_profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config("volume profile must be finite and non-negative".into()));
    }
    let windows: Vec<(Time, Time)> = (0..volume_profile.len())
        .map(|m| {
            let a = session.open_ms + m as Time * MINUTE_MS;
            let b = (a + MINUTE_MS).min(session.close_ms);
            let mut lo = a;
            let mut hi = b;
            if let Some((la, lb)) = session.lunch {
                if lo >= la && lo < lb {
                    lo = lb.min(hi);
                }
                if hi > la && hi <= lb {
                    hi = la.max(lo);
                }
            }
            (lo, hi.max(lo))
        })
        .collect();
    let weights: Vec<f64> = volume_profile
        .iter()
        .zip(&windows)
        .map(|(&v, &(a, b))| if b > a && a < session.close_ms { v } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("volume profile has no weight inside trading hours".into()));
    }
    let n = meta.num_children;
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).filter(|&m| weights[m] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &m in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[m] += 1;
    }
    let size = meta.child_size();
    let mut children = Vec::with_capacity(n);
    for (m, &c) in counts.iter().enumerate() {
        let (a, b) = windows[m];
        for j in 0..c as Time {
            children.push(plain_child(session, a + (b - a) * j / c as Time, size));
        }
    }
    Ok(ExecutionSchedule::from_children(meta.side, children))
}

/// Half-open millisecond intervals a given mode may place children in.
pub fn admissible_intervals(session: &SessionTemplate, bounded: bool, mode: usize) -> Vec<(Time, Time)> {
    let halves = session.halves();
    if bounded {
        vec![halves[mode % 2]]
    } else if session.lunch.is_some() {
        halves.to_vec()
    } else {
        vec![(session.open_ms, session.close_ms)]
    }
}

fn nearest_admissible(t: Time, intervals: &[(Time, Time)]) -> Time {
    let mut best = intervals[0].0;
    let mut best_gap = i64::MAX;
    for &(a, b) in intervals {
        let c = t.clamp(a, b - 1);
        let gap = (c - t).abs();
        if gap < best_gap {
            best = c;
            best_gap = gap;
        }
    }
    best
}

fn admissible(t: Time, intervals: &[(Time, Time)]) -> bool {
    intervals.iter().any(|&(a, b)| t >= a && t < b)
}

/// Draws `N / K` children per mode. Draws outside the admissible region are
/// rejected and redrawn. A point-mass mode, or one whose mass essentially
/// misses the region, places its children at the admissible time nearest
/// to its mean.
pub fn sample_schedule<R: Rng + ?Sized>(
    meta: &MetaOrder,
    dist: &ScheduleDistribution,
    session: &SessionTemplate,
    rng: &mut R,
) -> Result<ExecutionSchedule, Error> {
    meta.validate()?;
    dist.validate()?;
    let k = dist.modes.len();
    if meta.num_children % k != 0 {
        return Err(Error::Config(format!("{k} modes do not divide {} children", meta.num_children)));
    }
    let per_mode = meta.num_children / k;
    let size = meta.child_size();
    let mut children = Vec::with_capacity(meta.num_children);
    for (mi, mode) in dist.modes.iter().enumerate() {
        let region = admissible_intervals(session, dist.bounded, mi);
        let fallback = || {
            let t = nearest_admissible(session.normalized_to_wall(mode.mu), &region);
            (t, session.wall_to_normalized(t))
        };
        for _ in 0..per_mode {
            let (time, draw) = if mode.sigma == 0.0 {
                let t = session.normalized_to_wall(mode.mu);
                if admissible(t, &region) {
                    (t, mode.mu)
                } else {
                    fallback()
                }
            } else {
                let mut hit = None;
                for _ in 0..MAX_RESAMPLES {
                    let z: f64 = StandardNormal.sample(rng);
                    let u = mode.mu + mode.sigma * z;
                    if !(0.0..1.0).contains(&u) {
                        continue;
                    }
                    let t = session.normalized_to_wall(u);
                    if admissible(t, &region) {
                        hit = Some((t, u));
                        break;
                    }
                }
                hit.unwrap_or_else(fallback)
            };
            children.push(ScheduledChild {
                time,
                volume: size,
                mode: Some(mi),
                draw,
            });
        }
    }
    Ok(ExecutionSchedule::from_children(meta.side, children))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Execution {
    pub fills: Vec<Fill>,
    pub unfilled_volume: Qty,
}

impl Execution {
    pub fn executed_volume(&self) -> Qty {
        self.fills.iter().map(|f| f.volume).sum()
    }

    /// Nothing traded at all.
    pub fn is_degenerate(&self) -> bool {
        self.fills.is_empty()
    }
}

/// Runs the schedule through a fresh session with the executor active.
pub fn execute_schedule(cfg: &std::sync::Arc<MarketConfig>, seed: u64, schedule: &ExecutionSchedule) -> Execution {
    let orders = schedule.orders();
    let rec = run_with_children(
        cfg,
        seed,
        ChildOrders {
            side: schedule.side,
            children: &orders,
        },
        RecordOptions::default(),
    );
    Execution {
        fills: rec.fills,
        unfilled_volume: rec.unfilled_volume,
    }
}

/// Same fills as [`execute_schedule`] but resumed from the baseline's
/// checkpoints, which skips the part of the session before the first child.
pub fn execute_against_baseline(baseline: &BaselineRun, schedule: &ExecutionSchedule) -> Execution {
    let orders = schedule.orders();
    let rec = run_fills_only(
        baseline,
        ChildOrders {
            side: schedule.side,
            children: &orders,
        },
    );
    Execution {
        fills: rec.fills,
        unfilled_volume: rec.unfilled_volume,
    }
}

pub fn write_fills_csv<W: Write>(mut w: W, fills: &[Fill]) -> std::io::Result<()> {
    writeln!(w, "{FILLS_HEADER}")?;
    for f in fills {
        writeln!(w, "{},{},{},{}", f.time, f.price, f.volume, f.child_index)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain_session(close: Time) -> SessionTemplate {
        SessionTemplate {
            close_ms: close,
            lunch: None,
            warmup_ms: 0,
            ..SessionTemplate::desk()
        }
    }

    fn meta(n: usize, total: Qty) -> MetaOrder {
        MetaOrder {
            side: Side::Buy,
            total_volume: total,
            num_children: n,
        }
    }

    #[test]
    fn twap_grid_is_left_aligned() {
        let s = plain_session(400);
        let sched = twap_schedule(&meta(4, 20), &s, 0, 400).unwrap();
        let times: Vec<Time> = sched.children.iter().map(|c| c.time).collect();
        assert_eq!(times, vec![0, 100, 200, 300]);
        assert!(sched.children.iter().all(|c| c.volume == 5));
    }

    #[test]
    fn twap_degenerate_windows() {
        let s = SessionTemplate::desk();
        let sched = twap_schedule(&meta(10, 50), &s, 1000, 1000).unwrap();
        assert!(sched.children.iter().all(|c| c.time == 1000));
        let one = twap_schedule(&meta(1, 50), &s, 1000, 9000).unwrap();
        assert_eq!(one.orders(), vec![(1000, 50)]);
        assert!(twap_schedule(&meta(1, 50), &s, 9000, 1000).is_err());
    }

    #[test]
    fn twap_skips_lunch() {
        let s = SessionTemplate::desk();
        let sched = twap_schedule(&meta(1000, 5000), &s, 0, s.close_ms).unwrap();
        sched.validate(&meta(1000, 5000), &s).unwrap();
    }

    #[test]
    fn vwap_largest_remainder() {
        let s = plain_session(2 * MINUTE_MS);
        let sched = vwap_schedule(&meta(4, 8), &s, &[300.0, 100.0]).unwrap();
        let first = sched.children.iter().filter(|c| c.time < MINUTE_MS).count();
        assert_eq!(first, 3);
        assert_eq!(sched.children.len(), 4);
        let single = vwap_schedule(&meta(4, 8), &s, &[0.0, 7.0]).unwrap();
        assert!(single.children.iter().all(|c| c.time >= MINUTE_MS));
        assert!(vwap_schedule(&meta(4, 8), &s, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn vwap_flat_profile_matches_twap_per_minute() {
        let s = plain_session(10 * MINUTE_MS);
        let m = meta(20, 40);
        let v = vwap_schedule(&m, &s, &[1.0; 10]).unwrap();
        let t = twap_schedule(&m, &s, 0, s.close_ms).unwrap();
        let per_minute = |x: &ExecutionSchedule| {
            let mut c = [0; 10];
            for ch in &x.children {
                c[(ch.time / MINUTE_MS) as usize] += 1;
            }
            c
        };
        assert_eq!(per_minute(&v), per_minute(&t));
    }

    #[test]
    fn vwap_ignores_lunch_minutes() {
        let s = SessionTemplate::desk();
        let m = meta(1000, 5000);
        let sched = vwap_schedule(&m, &s, &vec![1.0; s.num_minutes()]).unwrap();
        sched.validate(&m, &s).unwrap();
    }

    #[test]
    fn point_mass_and_mode_counts() {
        let s = SessionTemplate::desk();
        let m = meta(1000, 5000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let point = ScheduleDistribution {
            modes: vec![Mode { mu: 0.25, sigma: 0.0 }],
            bounded: false,
        };
        let sched = sample_schedule(&m, &point, &s, &mut rng).unwrap();
        assert!(sched.children.iter().all(|c| c.time == s.normalized_to_wall(0.25)));
        let two = ScheduleDistribution {
            modes: vec![Mode { mu: 0.2, sigma: 0.1 }, Mode { mu: 0.8, sigma: 0.1 }],
            bounded: true,
        };
        let sched = sample_schedule(&m, &two, &s, &mut rng).unwrap();
        assert_eq!(sched.children.iter().filter(|c| c.mode == Some(0)).count(), 500);
        let [morning, afternoon] = s.halves();
        for c in &sched.children {
            let (a, b) = if c.mode == Some(0) { morning } else { afternoon };
            assert!(c.time >= a && c.time < b);
        }
        sched.validate(&m, &s).unwrap();
    }

    #[test]
    fn point_mass_in_lunch_moves_to_nearest_trading_time() {
        let s = SessionTemplate::desk();
        let (a, _) = s.lunch.unwrap();
        let dist = ScheduleDistribution {
            modes: vec![Mode { mu: 0.45, sigma: 0.0 }],
            bounded: false,
        };
        let sched = sample_schedule(&meta(10, 10), &dist, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(sched.children.iter().all(|c| c.time == a - 1));
    }

    #[test]
    fn sampled_moments() {
        let s = plain_session(100_000_000);
        let m = meta(100_000, 100_000);
        let dist = ScheduleDistribution {
            modes: vec![Mode { mu: 0.5, sigma: 0.1 }],
            bounded: false,
        };
        let sched = sample_schedule(&m, &dist, &s, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let n = sched.children.len() as f64;
        let mean = sched.children.iter().map(|c| c.draw).sum::<f64>() / n;
        let var = sched.children.iter().map(|c| (c.draw - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.003, "{}", var.sqrt());
    }

    #[test]
    fn schedule_csv_round_trip() {
        let s = SessionTemplate::desk();
        let sched = twap_schedule(&meta(5, 10), &s, 0, 50_000).unwrap();
        let mut buf = Vec::new();
        sched.write_csv(&mut buf).unwrap();
        let back = ExecutionSchedule::read_csv(&buf[..], Side::Buy, &s).unwrap();
        assert_eq!(back.orders(), sched.orders());
    }
}
