//! Piecewise-constant time series recorded at change points.

use serde::{Deserialize, Serialize};

use crate::lob::Time;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MidSeries {
    points: Vec<(Time, f64)>,
}

impl MidSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Points must be sorted by time. Later points at the same time win.
    pub fn from_points(points: Vec<(Time, f64)>) -> Self {
        let mut s = MidSeries::new();
        for (t, v) in points {
            s.push(t, v);
        }
        s
    }

    /// Records a value; repeated values are not stored.
    pub fn push(&mut self, time: Time, value: f64) {
        if let Some(last) = self.points.last_mut() {
            debug_assert!(time >= last.0);
            if last.0 == time {
                last.1 = value;
                return;
            }
            if last.1 == value {
                return;
            }
        }
        self.points.push((time, value));
    }

    /// Value in effect at `t`, including a change recorded exactly at `t`.
    pub fn at(&self, t: Time) -> Option<f64> {
        let i = self.points.partition_point(|p| p.0 <= t);
        (i > 0).then(|| self.points[i - 1].1)
    }

    /// Value in effect just before `t`; falls back to the first value.
    pub fn before(&self, t: Time) -> Option<f64> {
        let i = self.points.partition_point(|p| p.0 < t);
        if i > 0 {
            Some(self.points[i - 1].1)
        } else {
            self.points.first().map(|p| p.1)
        }
    }

    pub fn points(&self) -> &[(Time, f64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<(Time, f64)> {
        self.points.last().copied()
    }

    /// Samples at `start, start + step, ...` while `< end`.
    pub fn sample(&self, start: Time, end: Time, step: Time) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0;
        let mut t = start;
        let mut current = self.before(start).unwrap_or(f64::NAN);
        while t < end {
            while i < self.points.len() && self.points[i].0 <= t {
                current = self.points[i].1;
                i += 1;
            }
            out.push(current);
            t += step;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_semantics() {
        let s = MidSeries::from_points(vec![(0, 1.0), (10, 2.0), (10, 3.0), (20, 3.0), (30, 4.0)]);
        assert_eq!(s.points().len(), 3);
        assert_eq!(s.at(-1), None);
        assert_eq!(s.before(-1), Some(1.0));
        assert_eq!(s.at(10), Some(3.0));
        assert_eq!(s.before(10), Some(1.0));
        assert_eq!(s.at(29), Some(3.0));
        assert_eq!(s.sample(0, 40, 10), vec![1.0, 3.0, 3.0, 4.0]);
    }
}
