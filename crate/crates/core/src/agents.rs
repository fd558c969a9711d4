//! Background participants: per-minute Poisson arrival rates, the
//! conditional order-attribute sampler, and the shared Chiarella demand
//! process that sets the direction and intensity of directional flow.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::events::{Action, BookEvent};
use crate::lob::{Order, OrderBook, OrderId, Price, Qty, Side, Time};
use crate::session::{SessionTemplate, MINUTE_MS};
use crate::Error;

/// Per-minute order arrival rates in orders per millisecond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProfile {
    pub limit_rate: Vec<f64>,
    pub market_rate: Vec<f64>,
}

impl ArrivalProfile {
    pub fn new(limit_rate: Vec<f64>, market_rate: Vec<f64>) -> Result<Self, Error> {
        if limit_rate.is_empty() || limit_rate.len() != market_rate.len() {
            return Err(Error::Config("arrival profile vectors must be non-empty and equal length".into()));
        }
        if limit_rate.iter().chain(&market_rate).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("arrival rates must be finite and non-negative".into()));
        }
        Ok(ArrivalProfile { limit_rate, market_rate })
    }

    /// Intraday shape with elevated activity after the open, before the
    /// close, and a spike after lunch. Lunch minutes carry zero rate.
    pub fn parametric(session: &SessionTemplate, limit_per_ms: f64, market_per_ms: f64) -> Self {
        let n = session.num_minutes();
        let close_min = session.wall_duration() as f64 / MINUTE_MS as f64;
        let lunch_end = session.lunch.map(|(_, b)| (b - session.open_ms) as f64 / MINUTE_MS as f64);
        let shape: Vec<f64> = (0..n)
            .map(|m| {
                let t = m as f64 + 0.5;
                let start = session.open_ms + m as Time * MINUTE_MS;
                if session.in_lunch(start) {
                    return 0.0;
                }
                let mut s = 1.0 + 0.8 * (-t / 20.0).exp() + 0.6 * (-(close_min - t) / 20.0).exp();
                if let Some(le) = lunch_end {
                    if t >= le {
                        s += 1.2 * (-(t - le) / 15.0).exp();
                    }
                }
                s
            })
            .collect();
        ArrivalProfile {
            limit_rate: shape.iter().map(|s| s * limit_per_ms).collect(),
            market_rate: shape.iter().map(|s| s * market_per_ms).collect(),
        }
    }

    pub fn num_minutes(&self) -> usize {
        self.limit_rate.len()
    }

    fn minute(&self, session: &SessionTemplate, t: Time) -> usize {
        let m = (t - session.open_ms).div_euclid(MINUTE_MS);
        m.clamp(0, self.limit_rate.len() as i64 - 1) as usize
    }

    /// Limit rate in effect at `t`. Warm-up uses the first minute.
    pub fn limit_at(&self, session: &SessionTemplate, t: Time) -> f64 {
        self.limit_rate[self.minute(session, t)]
    }

    pub fn market_at(&self, session: &SessionTemplate, t: Time) -> f64 {
        self.market_rate[self.minute(session, t)]
    }

    /// Total volume-weighting per minute, used for VWAP allocation.
    pub fn activity(&self) -> Vec<f64> {
        self.limit_rate.iter().zip(&self.market_rate).map(|(a, b)| a + b).collect()
    }
}

/// Per-minute counts of limit and market submissions divided by the minute
/// length. Events outside the session are ignored.
pub fn estimate_arrival_profile(events: &[BookEvent], session: &SessionTemplate) -> ArrivalProfile {
    let n = session.num_minutes();
    let mut limit = vec![0.0; n];
    let mut market = vec![0.0; n];
    for e in events {
        if e.time < session.open_ms || e.time >= session.close_ms {
            continue;
        }
        let m = session.minute_of(e.time);
        match e.action {
            Action::Limit => limit[m] += 1.0,
            Action::Market => market[m] += 1.0,
            _ => {}
        }
    }
    let scale = 1.0 / MINUTE_MS as f64;
    ArrivalProfile {
        limit_rate: limit.into_iter().map(|c| c * scale).collect(),
        market_rate: market.into_iter().map(|c| c * scale).collect(),
    }
}

pub const TIME_BUCKET_MS: Time = 15 * MINUTE_MS;
pub const NUM_SPREAD_BUCKETS: usize = 5;
/// Mean lifetime of the bootstrap table's near-touch limit orders.
const BOOTSTRAP_MEAN_LIFE_MS: f64 = 2_000.0;

/// Spread buckets `{1}, {2}, {3,4}, {5..8}, {>8}` in ticks. A one-sided or
/// empty book falls in the widest bucket.
pub fn spread_bucket(spread_ticks: Option<Price>) -> usize {
    match spread_ticks {
        Some(s) if s <= 1 => 0,
        Some(2) => 1,
        Some(3..=4) => 2,
        Some(5..=8) => 3,
        _ => 4,
    }
}

pub fn time_bucket(session: &SessionTemplate, t: Time) -> usize {
    (t - session.open_ms).div_euclid(TIME_BUCKET_MS).max(0) as usize
}

/// Limit-order attributes. Depth is measured in ticks behind the same-side
/// best quote; negative depth improves on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LimitSample {
    pub depth: i64,
    pub volume: Qty,
    pub duration: Time,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Table<T> {
    num_time: usize,
    /// Populated cells keyed by `time * NUM_SPREAD_BUCKETS + spread`.
    cells: BTreeMap<usize, Vec<T>>,
    /// For every cell in the grid, the populated cell used to serve it.
    resolved: Vec<usize>,
}

impl<T: Clone> Table<T> {
    fn build(num_time: usize, cells: BTreeMap<usize, Vec<T>>) -> Option<Self> {
        let populated: Vec<usize> = cells.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k).collect();
        if populated.is_empty() {
            return None;
        }
        let ns = NUM_SPREAD_BUCKETS as i64;
        let resolved = (0..num_time * NUM_SPREAD_BUCKETS)
            .map(|cell| {
                let (t, s) = ((cell as i64) / ns, (cell as i64) % ns);
                *populated
                    .iter()
                    .min_by_key(|&&k| {
                        let (kt, ks) = ((k as i64) / ns, (k as i64) % ns);
                        // Prefer the same time of day, then the nearest spread.
                        ((kt - t).abs() * 2 * ns + (ks - s).abs(), k)
                    })
                    .unwrap()
            })
            .collect();
        Some(Table { num_time, cells, resolved })
    }

    fn subset(&self, tb: usize, sb: usize) -> &[T] {
        let cell = tb.min(self.num_time - 1) * NUM_SPREAD_BUCKETS + sb.min(NUM_SPREAD_BUCKETS - 1);
        &self.cells[&self.resolved[cell]]
    }
}

/// Empirical order-attribute tables keyed by time-of-day and spread
/// bucket. Sampling draws uniformly from the matching subset and falls back
/// to the nearest populated bucket.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalOrderSampler {
    limit: Table<LimitSample>,
    market: Table<Qty>,
}

impl ConditionalOrderSampler {
    pub fn from_samples(
        num_time_buckets: usize,
        limit: Vec<((usize, usize), LimitSample)>,
        market: Vec<((usize, usize), Qty)>,
    ) -> Result<Self, Error> {
        let key = |(t, s): (usize, usize)| t.min(num_time_buckets - 1) * NUM_SPREAD_BUCKETS + s.min(NUM_SPREAD_BUCKETS - 1);
        let mut lc: BTreeMap<usize, Vec<LimitSample>> = BTreeMap::new();
        for (k, v) in limit {
            lc.entry(key(k)).or_default().push(v);
        }
        let mut mc: BTreeMap<usize, Vec<Qty>> = BTreeMap::new();
        for (k, v) in market {
            mc.entry(key(k)).or_default().push(v);
        }
        Ok(ConditionalOrderSampler {
            limit: Table::build(num_time_buckets, lc).ok_or_else(|| Error::Config("no limit-order samples".into()))?,
            market: Table::build(num_time_buckets, mc).ok_or_else(|| Error::Config("no market-order samples".into()))?,
        })
    }

    /// Rebuilds the book from an event log and records each submission's
    /// attributes under the book state just before it arrived.
    pub fn from_event_log(events: &[BookEvent], session: &SessionTemplate) -> Result<Self, Error> {
        let mut book = OrderBook::new(session.tick_size);
        let mut trades = Vec::new();
        let mut limit = Vec::new();
        let mut market = Vec::new();
        for e in events {
            book.expire(e.time);
            let key = (time_bucket(session, e.time), spread_bucket(book.spread()));
            match (e.action, e.side, e.price, e.qty) {
                (Action::Limit, Some(side), Some(price), Some(qty)) if qty > 0 => {
                    if let Some(reference) = reference_quote(&book, side) {
                        let depth = match side {
                            Side::Buy => reference - price,
                            Side::Sell => price - reference,
                        };
                        let duration = e.duration.unwrap_or(session.wall_duration());
                        limit.push((key, LimitSample { depth, volume: qty, duration }));
                    }
                }
                (Action::Market, Some(_), _, Some(qty)) if qty > 0 => market.push((key, qty)),
                _ => {}
            }
            let _ = crate::events::apply_event(&mut book, e, &mut trades);
            trades.clear();
        }
        let num_time = (session.wall_duration() as usize).div_ceil(TIME_BUCKET_MS as usize);
        Self::from_samples(num_time, limit, market)
    }

    /// A parametric table used when no recorded order flow is available.
    /// Every volume is multiplied by `volume_scale`.
    pub fn bootstrap(session: &SessionTemplate, volume_scale: Qty) -> Self {
        let vs = volume_scale.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0b00);
        let num_time = (session.wall_duration() as usize).div_ceil(TIME_BUCKET_MS as usize);
        let representative = [1i64, 2, 3, 6, 10];
        let improve_prob = [0.0, 0.25, 0.45, 0.6, 0.7];
        let geometric = |rng: &mut ChaCha8Rng, p: f64, cap: u64| -> u64 {
            let mut k = 0;
            while k < cap && rng.random::<f64>() > p {
                k += 1;
            }
            k
        };
        let mut limit = Vec::new();
        let mut market = Vec::new();
        for tb in 0..num_time {
            for sb in 0..NUM_SPREAD_BUCKETS {
                for _ in 0..256 {
                    let deep = rng.random::<f64>() < 0.08;
                    let sample = if deep {
                        LimitSample {
                            depth: rng.random_range(8..=30),
                            volume: vs * rng.random_range(10..=40),
                            duration: rng.random_range(60_000..=300_000),
                        }
                    } else {
                        let depth = if rng.random::<f64>() < improve_prob[sb] {
                            -rng.random_range(1..representative[sb].max(2))
                        } else {
                            geometric(&mut rng, 0.35, 20) as i64
                        };
                        let life = -BOOTSTRAP_MEAN_LIFE_MS * (1.0 - rng.random::<f64>()).ln();
                        LimitSample {
                            depth,
                            volume: vs * (1 + geometric(&mut rng, 0.3, 30)),
                            duration: (life as Time).clamp(200, 600_000),
                        }
                    };
                    limit.push(((tb, sb), sample));
                }
                for _ in 0..128 {
                    market.push(((tb, sb), vs * (1 + geometric(&mut rng, 0.35, 20))));
                }
            }
        }
        Self::from_samples(num_time, limit, market).expect("bootstrap tables are populated")
    }

    pub fn limit_subset(&self, tb: usize, sb: usize) -> &[LimitSample] {
        self.limit.subset(tb, sb)
    }

    pub fn market_subset(&self, tb: usize, sb: usize) -> &[Qty] {
        self.market.subset(tb, sb)
    }

    /// `u` uniform in `[0, 1)` selects the entry.
    pub fn sample_limit(&self, tb: usize, sb: usize, u: f64) -> LimitSample {
        let s = self.limit_subset(tb, sb);
        s[((u * s.len() as f64) as usize).min(s.len() - 1)]
    }

    pub fn sample_market(&self, tb: usize, sb: usize, u: f64) -> Qty {
        let s = self.market_subset(tb, sb);
        s[((u * s.len() as f64) as usize).min(s.len() - 1)]
    }
}

/// Quote a new limit order's depth is measured from: the same-side best,
/// else one tick inside the opposite best.
pub fn reference_quote(book: &OrderBook, side: Side) -> Option<Price> {
    book.best(side).or_else(|| book.best(side.opposite()).map(|p| p - side.sign()))
}

/// Price for a limit order placed `depth` ticks behind `reference`.
#[inline]
pub fn limit_price(side: Side, reference: Price, depth: i64) -> Price {
    reference - side.sign() * depth
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiarellaParams {
    pub kappa: f64,
    #[serde(rename = "alpha_L")]
    pub alpha_l: f64,
    #[serde(rename = "beta_L")]
    pub beta_l: f64,
    #[serde(rename = "gamma_L")]
    pub gamma_l: f64,
    #[serde(rename = "alpha_H")]
    pub alpha_h: f64,
    #[serde(rename = "beta_H")]
    pub beta_h: f64,
    #[serde(rename = "gamma_H")]
    pub gamma_h: f64,
    pub sigma: f64,
    #[serde(default = "default_noise_weight")]
    pub noise_weight: f64,
}

fn default_noise_weight() -> f64 {
    1.0
}

impl ChiarellaParams {
    pub const TRAIN_DAY: ChiarellaParams = ChiarellaParams {
        kappa: 0.0456,
        alpha_l: 0.000173,
        beta_l: 7.77,
        gamma_l: 4.84,
        alpha_h: 0.981,
        beta_h: 1.147,
        gamma_h: 168_000.0,
        sigma: 0.219,
        noise_weight: 1.0,
    };
    pub const TEST_DAY: ChiarellaParams = ChiarellaParams {
        kappa: 0.0495,
        alpha_l: 0.000173,
        beta_l: 5.81,
        gamma_l: 4.40,
        alpha_h: 0.981,
        beta_h: 1.967,
        gamma_h: 157_000.0,
        sigma: 0.0368,
        noise_weight: 1.0,
    };

    pub fn validate(&self) -> Result<(), Error> {
        let all = [
            self.kappa,
            self.alpha_l,
            self.beta_l,
            self.gamma_l,
            self.alpha_h,
            self.beta_h,
            self.gamma_h,
            self.sigma,
            self.noise_weight,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("demand parameters must be finite".into()));
        }
        if !(self.alpha_l > 0.0 && self.alpha_l <= 1.0 && self.alpha_h > 0.0 && self.alpha_h <= 1.0) {
            return Err(Error::Config("EMA rates alpha_L and alpha_H must lie in (0, 1]".into()));
        }
        if self.sigma < 0.0 || self.noise_weight < 0.0 {
            return Err(Error::Config("sigma and noise_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Saturating momentum contributions `(low, high)`.
    pub fn momentum_terms(&self, m_l: f64, m_h: f64) -> (f64, f64) {
        (self.beta_l * (self.gamma_l * m_l).tanh(), self.beta_h * (self.gamma_h * m_h).tanh())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiarellaState {
    pub fundamental_value: f64,
    pub momentum_l: f64,
    pub momentum_h: f64,
    pub demand: f64,
    pub last_mid: f64,
}

impl ChiarellaState {
    pub fn new(fundamental_value: f64, mid: f64) -> Self {
        ChiarellaState {
            fundamental_value,
            momentum_l: 0.0,
            momentum_h: 0.0,
            demand: 0.0,
            last_mid: mid,
        }
    }
}

/// One update of the demand process given its two standard-normal shocks.
///
/// The fundamental value takes a Gaussian step of `sigma_step`, both
/// momentum averages absorb the latest log return of the mid, and demand
/// is recomputed against the fundamental plus `reference_shift`.
pub fn chiarella_update(
    params: &ChiarellaParams,
    state: &mut ChiarellaState,
    mid: f64,
    reference_shift: f64,
    sigma_step: f64,
    eps: f64,
    eta: f64,
) -> f64 {
    state.fundamental_value += sigma_step * eps;
    let r = if state.last_mid > 0.0 && mid > 0.0 {
        (mid / state.last_mid).ln()
    } else {
        0.0
    };
    state.momentum_l += params.alpha_l * (r - state.momentum_l);
    state.momentum_h += params.alpha_h * (r - state.momentum_h);
    state.last_mid = mid;
    let (lf, hf) = params.momentum_terms(state.momentum_l, state.momentum_h);
    state.demand = params.kappa * (state.fundamental_value + reference_shift - mid) + lf + hf + params.noise_weight * eta;
    state.demand
}

/// `chiarella_update` drawing both shocks from `rng`.
pub fn chiarella_step<R: Rng + ?Sized>(
    params: &ChiarellaParams,
    state: &mut ChiarellaState,
    mid: f64,
    rng: &mut R,
) -> f64 {
    let eps: f64 = StandardNormal.sample(rng);
    let eta: f64 = StandardNormal.sample(rng);
    chiarella_update(params, state, mid, 0.0, params.sigma, eps, eta)
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// Inverse-CDF draw from Binomial(n, p) using one uniform.
pub fn binomial_inverse(n: u32, p: f64, u: f64) -> u32 {
    if p <= 0.0 || n == 0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let q = 1.0 - p;
    let ratio = p / q;
    let mut pmf = q.powi(n as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while u >= cdf && k < n {
        pmf *= ratio * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}

/// Chooses `count` distinct step offsets out of `n` by partial
/// Fisher-Yates; `draw(i, m)` must return a uniform integer below `m`.
pub fn choose_offsets(n: u32, count: u32, mut draw: impl FnMut(u32, u32) -> u32, out: &mut Vec<u32>) {
    debug_assert!(count <= n && n <= 256);
    let mut slots = [0u8; 256];
    for (i, s) in slots.iter_mut().enumerate().take(n as usize) {
        *s = i as u8;
    }
    for i in 0..count {
        let j = i + draw(i, n - i);
        slots.swap(i as usize, j as usize);
        out.push(slots[i as usize] as u32);
    }
}

/// One step of the directional trader in isolation: with probability
/// `clamp(alpha * |D|)` a limit order, and independently with probability
/// `clamp(mu * |D|)` a market order, both on side `sign(D)` with
/// attributes drawn for the book state. `alpha` and `mu` are per-step.
#[allow(clippy::too_many_arguments)]
pub fn agent_step<R: Rng + ?Sized>(
    t: Time,
    book: &OrderBook,
    session: &SessionTemplate,
    alpha: f64,
    mu: f64,
    sampler: &ConditionalOrderSampler,
    demand: f64,
    next_id: &mut OrderId,
    rng: &mut R,
) -> Vec<Order> {
    let mut out = Vec::new();
    if demand == 0.0 || !demand.is_finite() {
        return out;
    }
    let side = if demand > 0.0 { Side::Buy } else { Side::Sell };
    let tb = time_bucket(session, t);
    let sb = spread_bucket(book.spread());
    if rng.random::<f64>() < clamp_prob(alpha * demand.abs()) {
        let s = sampler.sample_limit(tb, sb, rng.random());
        if let Some(reference) = reference_quote(book, side) {
            out.push(Order::limit(*next_id, side, limit_price(side, reference, s.depth), s.volume, t).with_duration(s.duration));
            *next_id += 1;
        }
    }
    if rng.random::<f64>() < clamp_prob(mu * demand.abs()) {
        out.push(Order::market(*next_id, side, sampler.sample_market(tb, sb, rng.random()), t));
        *next_id += 1;
    }
    out
}
