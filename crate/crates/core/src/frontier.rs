//! Mean-variance frontier over TWAP windows.
//!
//! Each strategy's transaction cost is measured over a fixed set of paired
//! runs, giving a mean `E` and unbiased variance `V`. The frontier is the set
//! of points minimising `E + lambda V` over a dense grid of `lambda`:
//! non-negative values trace the efficient branch from the lowest-variance
//! strategy down to the minimum-cost vertex, and negative values trace the
//! sub-optimal branch beyond it where extra variance buys nothing.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::execution::{twap_schedule, MetaOrder};
use crate::lob::Time;
use crate::session::SessionTemplate;
use crate::slippage::{BaselinePool, Objective};
use crate::Error;

pub const SWEEP_HEADER: &str = "start_ms,end_ms,E,V,n";
pub const FRONTIER_HEADER: &str = "start_ms,end_ms,E,V,n,efficient,suboptimal_branch,vertex";
pub const OVERLAY_HEADER: &str = "label,E,V,risk,impact,distance";

/// One-sided normal quantile at 95%.
pub const LAMBDA_95: f64 = 1.645;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub start_ms: Time,
    pub end_ms: Time,
    pub e: f64,
    pub v: f64,
    pub n_samples: usize,
}

/// Mean and unbiased variance.
pub fn mean_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

impl FrontierPoint {
    pub fn from_samples(start_ms: Time, end_ms: Time, samples: &[f64]) -> Result<Self, Error> {
        if samples.len() < 2 {
            return Err(Error::Config("a frontier point needs at least two samples".into()));
        }
        let (e, v) = mean_variance(samples);
        Ok(FrontierPoint {
            start_ms,
            end_ms,
            e,
            v,
            n_samples: samples.len(),
        })
    }
}

/// `n` equal slices of trading time as grid points `0..=n`, in wall clock.
fn grid_points(session: &SessionTemplate, n: i64) -> Vec<Time> {
    let t = session.trading_duration();
    (0..=n).map(|i| session.trading_to_wall(t * i / n).min(session.close_ms)).collect()
}

/// Nineteen windows: the first `k` tenths of the session for `k = 1..=10`,
/// and the last `10 - k` tenths for `k = 1..=9`.
pub fn desk_grid(session: &SessionTemplate) -> Vec<(Time, Time)> {
    let g = grid_points(session, 10);
    let mut out: Vec<(Time, Time)> = (1..=10).map(|k| (g[0], g[k])).collect();
    out.extend((1..=9).map(|k| (g[k], g[10])));
    out
}

/// Every window between two of 20 evenly spaced trading-time points: 190
/// strategies.
pub fn full_grid(session: &SessionTemplate) -> Vec<(Time, Time)> {
    let g = grid_points(session, 19);
    let mut out = Vec::new();
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            out.push((g[i], g[j]));
        }
    }
    out
}

/// The three reference strategies: everything in the first tenth (A),
/// uniformly over the whole session (B), everything in the last tenth (C).
pub fn reference_strategies(session: &SessionTemplate) -> [(&'static str, Time, Time); 3] {
    let g = grid_points(session, 10);
    [("A", g[0], g[1]), ("B", g[0], g[10]), ("C", g[9], g[10])]
}

/// Per-seed costs of one TWAP window.
pub fn twap_costs(pool: &BaselinePool, meta: &MetaOrder, window: (Time, Time), objective: Objective) -> Result<Vec<f64>, Error> {
    let session = &pool.config().session;
    let sched = twap_schedule(meta, session, window.0, window.1)?;
    let results = pool.evaluate_all(std::slice::from_ref(&sched));
    results
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .map(|r| r.map(|d| objective.loss(&d)))
        .collect()
}

/// Evaluates every window on every seed of the pool. Cost is slippage.
pub fn sweep_strategies(pool: &BaselinePool, meta: &MetaOrder, grid: &[(Time, Time)]) -> Result<Vec<FrontierPoint>, Error> {
    if pool.len() < 2 {
        return Err(Error::Config("a sweep needs at least two Monte-Carlo seeds".into()));
    }
    let session = &pool.config().session;
    let schedules = grid
        .iter()
        .map(|&(a, b)| twap_schedule(meta, session, a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let results = pool.evaluate_all(&schedules);
    grid.iter()
        .zip(results)
        .map(|(&(a, b), per_seed)| {
            let costs = per_seed.into_iter().map(|r| r.map(|d| d.zeta)).collect::<Result<Vec<_>, _>>()?;
            FrontierPoint::from_samples(a, b, &costs)
        })
        .collect()
}

/// 400 log-spaced magnitudes per sign over `[1e-6, 1e3]`, plus zero, in
/// increasing order.
pub fn lambda_grid() -> Vec<f64> {
    let n = 400;
    let mags: Vec<f64> = (0..n).map(|i| 10f64.powf(-6.0 + 9.0 * i as f64 / (n - 1) as f64)).collect();
    let mut out: Vec<f64> = mags.iter().rev().map(|m| -m).collect();
    out.push(0.0);
    out.extend(mags);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Indices of efficient points, by increasing variance, ending at the vertex.
    pub efficient: Vec<usize>,
    /// Index of the minimum-cost point.
    pub vertex: usize,
    /// Indices selected only at negative lambda, by increasing variance.
    pub suboptimal: Vec<usize>,
}

/// Minimises `E + lambda V`; ties go to lower variance, then lower index.
fn argmin_penalised(points: &[FrontierPoint], lambda: f64) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (&points[i], &points[best]);
        let (fa, fb) = (a.e + lambda * a.v, b.e + lambda * b.v);
        if fa < fb || (fa == fb && a.v < b.v) {
            best = i;
        }
    }
    best
}

pub fn build_frontier(points: &[FrontierPoint]) -> Result<Frontier, Error> {
    if points.is_empty() {
        return Err(Error::Config("cannot build a frontier from no points".into()));
    }
    if points.iter().any(|p| !(p.e.is_finite() && p.v.is_finite() && p.v >= 0.0)) {
        return Err(Error::Config("frontier points need finite E and non-negative V".into()));
    }
    let mut efficient = Vec::new();
    let mut suboptimal = Vec::new();
    for lambda in lambda_grid() {
        let i = argmin_penalised(points, lambda);
        if lambda >= 0.0 {
            efficient.push(i);
        } else {
            suboptimal.push(i);
        }
    }
    let vertex = argmin_penalised(points, 0.0);
    let by_variance = |v: &mut Vec<usize>| {
        v.sort_by(|&a, &b| points[a].v.total_cmp(&points[b].v).then(a.cmp(&b)));
        v.dedup();
    };
    by_variance(&mut efficient);
    by_variance(&mut suboptimal);
    suboptimal.retain(|i| !efficient.contains(i));
    Ok(Frontier {
        efficient,
        vertex,
        suboptimal,
    })
}

impl Frontier {
    pub fn is_efficient(&self, i: usize) -> bool {
        self.efficient.contains(&i)
    }

    pub fn is_suboptimal(&self, i: usize) -> bool {
        self.suboptimal.contains(&i)
    }

    /// The whole envelope, efficient branch then sub-optimal branch.
    pub fn polyline(&self) -> Vec<usize> {
        self.efficient.iter().chain(&self.suboptimal).copied().collect()
    }
}

/// True when no swept point has both strictly lower `E` and strictly lower
/// `V` than some efficient point.
///
/// Being under the chord between two neighbouring efficient points is not
/// treated as a violation. The lambda grid is finite, so a hull point whose
/// supporting lambda interval falls between two grid values can be skipped.
pub fn check_dominance(points: &[FrontierPoint], frontier: &Frontier) -> bool {
    let tol = 1e-9;
    frontier.efficient.iter().map(|&i| &points[i]).all(|f| {
        points
            .iter()
            .all(|p| !(p.e < f.e - tol && p.v < f.v - tol))
    })
}

pub fn var(point: &FrontierPoint, lambda_p: f64) -> f64 {
    lambda_p * point.v.sqrt() + point.e
}

/// Brute-force VaR minimiser; ties go to lower variance, then lower index.
pub fn var_minimizer(points: &[FrontierPoint], lambda_p: f64) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (var(&points[i], lambda_p), var(&points[best], lambda_p));
        if a < b || (a == b && points[i].v < points[best].v) {
            best = i;
        }
    }
    best
}

/// Point touched by the supporting line of slope `-lambda_p` under the
/// lower convex hull of the points in `(sqrt V, E)`.
pub fn var_tangent(points: &[FrontierPoint], lambda_p: f64) -> usize {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let s = |i: usize| points[i].v.sqrt();
    idx.sort_by(|&a, &b| s(a).total_cmp(&s(b)).then(points[a].e.total_cmp(&points[b].e)).then(a.cmp(&b)));
    let mut hull: Vec<usize> = Vec::new();
    for &i in &idx {
        if let Some(&last) = hull.last() {
            if s(last) == s(i) {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (s(a) - s(o)) * (points[i].e - points[o].e) - (points[a].e - points[o].e) * (s(i) - s(o));
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut k = 0;
    while k + 1 < hull.len() {
        let (a, b) = (hull[k], hull[k + 1]);
        let slope = (points[b].e - points[a].e) / (s(b) - s(a));
        if slope < -lambda_p {
            k += 1;
        } else {
            break;
        }
    }
    hull[k]
}

/// Scales `V` and `E` by the sample standard deviations of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub sd_v: f64,
    pub sd_e: f64,
}

impl Standardizer {
    pub fn from_points(points: &[FrontierPoint]) -> Self {
        let sd = |xs: Vec<f64>| {
            let s = mean_variance(&xs).1.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        };
        Standardizer {
            sd_v: sd(points.iter().map(|p| p.v).collect()),
            sd_e: sd(points.iter().map(|p| p.e).collect()),
        }
    }

    pub fn apply(&self, v: f64, e: f64) -> (f64, f64) {
        (v / self.sd_v, e / self.sd_e)
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = (b.0 - a.0, b.1 - a.1);
    let len2 = d.0 * d.0 + d.1 * d.1;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * d.0 + (p.1 - a.1) * d.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = (a.0 + t * d.0, a.1 + t * d.1);
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

/// Euclidean distance in standardised coordinates from `(v, e)` to the
/// frontier envelope, both branches included.
pub fn distance_to_frontier(v: f64, e: f64, points: &[FrontierPoint], frontier: &Frontier, scale: &Standardizer) -> f64 {
    let poly: Vec<(f64, f64)> = frontier.polyline().iter().map(|&i| scale.apply(points[i].v, points[i].e)).collect();
    let p = scale.apply(v, e);
    if poly.len() == 1 {
        return point_segment_distance(p, poly[0], poly[0]);
    }
    poly.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[FrontierPoint]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.start_ms, p.end_ms, p.e, p.v, p.n_samples)?;
    }
    Ok(())
}

pub fn write_frontier_csv<W: Write>(mut w: W, points: &[FrontierPoint], frontier: &Frontier) -> std::io::Result<()> {
    writeln!(w, "{FRONTIER_HEADER}")?;
    for (i, p) in points.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.start_ms,
            p.end_ms,
            p.e,
            p.v,
            p.n_samples,
            frontier.is_efficient(i) as u8,
            frontier.is_suboptimal(i) as u8,
            (frontier.vertex == i) as u8
        )?;
    }
    Ok(())
}

/// A strategy placed on the frontier plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayPoint {
    pub label: String,
    pub e: f64,
    pub v: f64,
    pub risk: f64,
    pub impact: f64,
    pub distance: f64,
}

pub fn write_overlay_csv<W: Write>(mut w: W, overlay: &[OverlayPoint]) -> std::io::Result<()> {
    writeln!(w, "{OVERLAY_HEADER}")?;
    for o in overlay {
        writeln!(w, "{},{},{},{},{},{}", o.label, o.e, o.v, o.risk, o.impact, o.distance)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pt(v: f64, e: f64) -> FrontierPoint {
        FrontierPoint {
            start_ms: 0,
            end_ms: 0,
            e,
            v,
            n_samples: 2,
        }
    }

    #[test]
    fn three_point_example() {
        let pts = [pt(1.0, 10.0), pt(2.0, 5.0), pt(3.0, 6.0)];
        let f = build_frontier(&pts).unwrap();
        assert_eq!(f.efficient, vec![0, 1]);
        assert_eq!(f.vertex, 1);
        assert_eq!(f.suboptimal, vec![2]);
        assert!(check_dominance(&pts, &f));
    }

    #[test]
    fn single_point_is_its_own_vertex() {
        let f = build_frontier(&[pt(4.0, 3.0)]).unwrap();
        assert_eq!((f.efficient.clone(), f.vertex), (vec![0], 0));
        assert!(f.suboptimal.is_empty());
    }

    #[test]
    fn collinear_point_is_excluded() {
        let pts = [pt(1.0, 10.0), pt(2.0, 7.5), pt(3.0, 5.0)];
        let f = build_frontier(&pts).unwrap();
        assert_eq!(f.efficient, vec![0, 2]);
    }

    #[test]
    fn var_arithmetic() {
        assert!((var(&pt(4.0, 10.0), 1.645) - 13.29).abs() < 1e-12);
        assert_eq!(var(&pt(4.0, 10.0), 0.0), 10.0);
    }

    #[test]
    fn tangent_matches_brute_force() {
        let pts = [pt(0.5, 12.0), pt(2.0, 9.0), pt(9.0, 6.0), pt(30.0, 5.5), pt(60.0, 7.0), pt(4.0, 20.0)];
        for lp in [0.0, 0.3, 1.0, 1.645, 5.0, 50.0] {
            assert_eq!(var_tangent(&pts, lp), var_minimizer(&pts, lp), "lambda_p = {lp}");
        }
    }

    #[test]
    fn distance_geometry() {
        let pts = [pt(0.0, 1.0), pt(1.0, 0.0)];
        let f = build_frontier(&pts).unwrap();
        let unit = Standardizer { sd_v: 1.0, sd_e: 1.0 };
        assert_eq!(distance_to_frontier(0.0, 1.0, &pts, &f, &unit), 0.0);
        let d = distance_to_frontier(1.0, 1.0, &pts, &f, &unit);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grids_have_the_documented_sizes() {
        let s = SessionTemplate::desk();
        let d = desk_grid(&s);
        assert_eq!(d.len(), 19);
        assert!(d.iter().all(|&(a, b)| a < b && b <= s.close_ms));
        assert_eq!(full_grid(&s).len(), 190);
        let r = reference_strategies(&s);
        assert_eq!((r[1].1, r[1].2), (0, s.close_ms));
    }

    #[test]
    fn lambda_grid_shape() {
        let g = lambda_grid();
        assert_eq!(g.len(), 801);
        assert_eq!(g[400], 0.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[800] - 1e3).abs() < 1e-9 && (g[401] - 1e-6).abs() < 1e-18);
    }
}
