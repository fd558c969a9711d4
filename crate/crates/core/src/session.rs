//! Trading-day template: open and close, optional lunch break, tick size
//! and the agent step resolution.

use serde::{Deserialize, Serialize};

use crate::lob::Time;
use crate::Error;

pub const MINUTE_MS: Time = 60_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTemplate {
    pub open_ms: Time,
    pub close_ms: Time,
    /// Half-open `[start, end)` break during which background agents are
    /// silent and schedules place no children.
    pub lunch: Option<(Time, Time)>,
    pub tick_size: f64,
    /// Agent step resolution.
    pub step_ms: Time,
    /// Interval at which the demand process is updated.
    pub demand_tick_ms: Time,
    /// Background-only run-in before the open.
    pub warmup_ms: Time,
    pub initial_price: f64,
}

impl SessionTemplate {
    /// Four-hour session with a 30 minute lunch, 10 ms steps.
    pub fn desk() -> Self {
        SessionTemplate {
            open_ms: 0,
            close_ms: 14_400_000,
            lunch: Some((6_300_000, 8_100_000)),
            tick_size: 1.0,
            step_ms: 10,
            demand_tick_ms: 100,
            warmup_ms: 300_000,
            initial_price: 18_000.0,
        }
    }

    /// Futures day session 09:15 to 16:30 with the 12:00 to 13:00 break,
    /// 1 ms steps. Times are measured from the open.
    pub fn full() -> Self {
        SessionTemplate {
            open_ms: 0,
            close_ms: 26_100_000,
            lunch: Some((9_900_000, 13_500_000)),
            tick_size: 1.0,
            step_ms: 1,
            demand_tick_ms: 100,
            warmup_ms: 300_000,
            initial_price: 18_000.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(format!("session: {m}")));
        if self.close_ms <= self.open_ms {
            return bad("close must be after open");
        }
        if !(self.tick_size > 0.0) {
            return bad("tick size must be positive");
        }
        if self.step_ms <= 0 || self.demand_tick_ms <= 0 || self.demand_tick_ms % self.step_ms != 0 {
            return bad("demand tick must be a positive multiple of the step");
        }
        if self.demand_tick_ms / self.step_ms > 256 {
            return bad("at most 256 steps per demand tick");
        }
        if 1000 % self.demand_tick_ms != 0 {
            return bad("demand tick must divide one second");
        }
        if self.warmup_ms < 0 || self.warmup_ms % self.demand_tick_ms != 0 {
            return bad("warm-up must be a non-negative multiple of the demand tick");
        }
        if self.open_ms % self.demand_tick_ms != 0 || self.close_ms % self.demand_tick_ms != 0 {
            return bad("open and close must fall on demand ticks");
        }
        if let Some((a, b)) = self.lunch {
            if !(self.open_ms < a && a < b && b < self.close_ms) {
                return bad("lunch must lie strictly inside the session");
            }
        }
        if !(self.initial_price > 0.0) {
            return bad("initial price must be positive");
        }
        Ok(())
    }

    pub fn wall_duration(&self) -> Time {
        self.close_ms - self.open_ms
    }

    pub fn lunch_duration(&self) -> Time {
        self.lunch.map_or(0, |(a, b)| b - a)
    }

    /// Milliseconds during which trading happens.
    pub fn trading_duration(&self) -> Time {
        self.wall_duration() - self.lunch_duration()
    }

    pub fn in_lunch(&self, t: Time) -> bool {
        self.lunch.is_some_and(|(a, b)| t >= a && t < b)
    }

    /// True inside `[open, close)` and outside lunch.
    pub fn is_trading(&self, t: Time) -> bool {
        t >= self.open_ms && t < self.close_ms && !self.in_lunch(t)
    }

    /// Background agents are active from the start of warm-up to the close,
    /// except at lunch.
    pub fn agents_active(&self, t: Time) -> bool {
        t >= self.open_ms - self.warmup_ms && t < self.close_ms && !self.in_lunch(t)
    }

    /// Normalised wall-clock time in `[0, 1]` to milliseconds.
    pub fn normalized_to_wall(&self, u: f64) -> Time {
        self.open_ms + (u * self.wall_duration() as f64).floor() as Time
    }

    pub fn wall_to_normalized(&self, t: Time) -> f64 {
        (t - self.open_ms) as f64 / self.wall_duration() as f64
    }

    /// Offset in trading time (lunch skipped) from the open to wall clock.
    pub fn trading_to_wall(&self, offset: Time) -> Time {
        let t = self.open_ms + offset;
        match self.lunch {
            Some((a, b)) if t >= a => t + (b - a),
            _ => t,
        }
    }

    /// Wall clock to trading-time offset; times inside lunch map to the
    /// lunch start.
    pub fn wall_to_trading(&self, t: Time) -> Time {
        match self.lunch {
            Some((a, b)) if t >= b => t - self.open_ms - (b - a),
            Some((a, _)) if t >= a => a - self.open_ms,
            _ => t - self.open_ms,
        }
    }

    pub fn start_ms(&self) -> Time {
        self.open_ms - self.warmup_ms
    }

    /// Minute index within the wall-clock session, clamped.
    pub fn minute_of(&self, t: Time) -> usize {
        let m = (t - self.open_ms).div_euclid(MINUTE_MS);
        m.clamp(0, self.num_minutes() as i64 - 1) as usize
    }

    pub fn num_minutes(&self) -> usize {
        ((self.wall_duration() + MINUTE_MS - 1) / MINUTE_MS) as usize
    }

    /// The morning and afternoon trading halves. Without a lunch break the
    /// session is split at its midpoint.
    pub fn halves(&self) -> [(Time, Time); 2] {
        match self.lunch {
            Some((a, b)) => [(self.open_ms, a), (b, self.close_ms)],
            None => {
                let m = self.open_ms + self.wall_duration() / 2;
                [(self.open_ms, m), (m, self.close_ms)]
            }
        }
    }
}

impl Default for SessionTemplate {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_valid() {
        SessionTemplate::desk().validate().unwrap();
        SessionTemplate::full().validate().unwrap();
        let mut s = SessionTemplate::desk();
        s.lunch = Some((0, 10));
        assert!(s.validate().is_err());
    }

    #[test]
    fn trading_clock_skips_lunch() {
        let s = SessionTemplate::desk();
        assert_eq!(s.trading_duration(), 12_600_000);
        assert_eq!(s.trading_to_wall(0), 0);
        assert_eq!(s.trading_to_wall(6_299_999), 6_299_999);
        assert_eq!(s.trading_to_wall(6_300_000), 8_100_000);
        for t in [0, 5_000_000, 8_100_000, 14_399_999] {
            assert_eq!(s.trading_to_wall(s.wall_to_trading(t)), t);
        }
        assert!(s.in_lunch(6_300_000) && !s.in_lunch(8_100_000));
        assert!(!s.is_trading(14_400_000));
        assert_eq!(s.num_minutes(), 240);
        assert_eq!(s.normalized_to_wall(0.5), 7_200_000);
    }
}
