//! Event-driven session kernel.
//!
//! Time advances in demand ticks. At the start of each tick the impact
//! windows are closed, the demand process is updated once, and the number
//! of submissions of each type in the tick is drawn as the count of
//! per-step Bernoulli successes. Submissions then hit the book at their
//! step times, interleaved with any executor children.
//!
//! Randomness is arranged so that two runs with the same seed consume
//! identical numbers whatever the executor does: the two Gaussian shocks
//! come from dedicated sequential streams drawn exactly once per tick, and
//! every other draw is a keyed uniform addressed by tick, order type and
//! index. A counterfactual leg therefore sees the same arrivals as its
//! baseline and differs only through the state of the book and the impact.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::{
    binomial_inverse, chiarella_update, choose_offsets, clamp_prob, limit_price, reference_quote, spread_bucket,
    time_bucket, ArrivalProfile, ChiarellaParams, ChiarellaState, ConditionalOrderSampler,
};
use crate::events::{BookEvent, TradeRecord};
use crate::impact::{ImpactParams, ReactiveImpact};
use crate::lob::{Order, OrderBook, OrderId, Price, Qty, Side, Time, Trade};
use crate::rng::{stream_rng, KeyedUniform};
use crate::series::MidSeries;
use crate::session::SessionTemplate;
use crate::Error;

/// Order ids at or above this value belong to the executor.
pub const EXECUTOR_ID_BASE: OrderId = 1 << 62;
const SEED_BOOK_ID_BASE: OrderId = 1 << 61;
pub const EXECUTOR_OWNER: u32 = 1;

const STREAM_FUNDAMENTAL: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_KEYED: u64 = 3;

const TRADER_LIMIT: u64 = 0;
const TRADER_MARKET: u64 = 1;
const PROVIDER_BID: u64 = 2;
const PROVIDER_ASK: u64 = 3;

/// Tunable market settings that are not part of the demand or impact laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    /// Window over which orderflow imbalance is aggregated into impact.
    pub impact_window_ms: Time,
    /// Half-life of the reactive impact shift; `None` makes it permanent.
    pub impact_half_life_ms: Option<f64>,
    /// Time over which `sigma` is the standard deviation of the
    /// fundamental-value step.
    pub sigma_step_ms: f64,
    /// Passive liquidity arrival on each side as a multiple of the limit rate.
    pub provider_weight: f64,
    /// Levels per side in the opening book.
    pub seed_levels: usize,
    pub seed_level_qty: Qty,
    pub seed_duration_ms: Time,
    /// Spacing of baseline checkpoints that counterfactuals resume from.
    pub checkpoint_interval_ms: Time,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            impact_window_ms: 1000,
            impact_half_life_ms: Some(300_000.0),
            sigma_step_ms: 10.0,
            provider_weight: 1.0,
            seed_levels: 10,
            seed_level_qty: 20,
            seed_duration_ms: 600_000,
            checkpoint_interval_ms: 600_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MarketConfig {
    pub session: SessionTemplate,
    pub chiarella: ChiarellaParams,
    pub impact: ImpactParams,
    pub kernel: KernelParams,
    pub profile: ArrivalProfile,
    pub sampler: Arc<ConditionalOrderSampler>,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.session.validate()?;
        self.chiarella.validate()?;
        self.impact.validate()?;
        let k = &self.kernel;
        if k.impact_window_ms <= 0 || k.impact_window_ms % self.session.demand_tick_ms != 0 {
            return Err(Error::Config("impact window must be a positive multiple of the demand tick".into()));
        }
        if !(k.sigma_step_ms > 0.0) || k.provider_weight < 0.0 {
            return Err(Error::Config("sigma_step_ms must be positive and provider_weight non-negative".into()));
        }
        if k.checkpoint_interval_ms <= 0 || k.checkpoint_interval_ms % self.session.demand_tick_ms != 0 {
            return Err(Error::Config("checkpoint interval must be a positive multiple of the demand tick".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub time: Time,
    /// Real price (ticks times tick size).
    pub price: f64,
    pub volume: Qty,
    pub child_index: usize,
}

/// What a run keeps besides the mid path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecordOptions {
    pub trades: bool,
    pub events: bool,
    pub fundamental: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Recorder {
    pub mid: MidSeries,
    pub trades: Vec<TradeRecord>,
    pub events: Vec<BookEvent>,
    /// Fundamental value sampled at each demand tick.
    pub fundamental: Vec<(Time, f64)>,
    pub fills: Vec<Fill>,
    pub unfilled_volume: Qty,
    options: RecordOptions,
}

impl Recorder {
    pub fn new(options: RecordOptions) -> Self {
        Recorder {
            options,
            ..Default::default()
        }
    }
}

/// Executor children as `(time, volume)` pairs sorted by time, all on one side.
#[derive(Clone, Copy, Debug)]
pub struct ChildOrders<'a> {
    pub side: Side,
    pub children: &'a [(Time, Qty)],
}

impl ChildOrders<'_> {
    pub const NONE: ChildOrders<'static> = ChildOrders {
        side: Side::Buy,
        children: &[],
    };
}

#[derive(Clone, Debug)]
pub struct Market {
    cfg: Arc<MarketConfig>,
    keyed: KeyedUniform,
    fundamental_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    book: OrderBook,
    chiarella: ChiarellaState,
    impact: ReactiveImpact,
    first_tick: i64,
    tick: i64,
    last_mid: f64,
    next_child: usize,
    scratch: Scratch,
}

#[derive(Clone, Debug, Default)]
struct Scratch {
    pending: Vec<Pending>,
    offsets: Vec<u32>,
    trades: Vec<Trade>,
    cancelled: Vec<OrderId>,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    offset: u32,
    kind: u64,
    index: u32,
}

impl Market {
    pub fn new(cfg: Arc<MarketConfig>, seed: u64) -> Self {
        let s = &cfg.session;
        let tick_ms = s.demand_tick_ms;
        let start = s.start_ms();
        let p0 = (s.initial_price / s.tick_size).round() as Price;
        let mut book = OrderBook::new(s.tick_size);
        let k = &cfg.kernel;
        for i in 0..k.seed_levels as i64 {
            for side in [Side::Buy, Side::Sell] {
                let id = SEED_BOOK_ID_BASE + (2 * i as u64) + (side == Side::Sell) as u64;
                let price = p0 - side.sign() * (1 + i);
                let order = Order::limit(id, side, price, k.seed_level_qty, start).with_duration(k.seed_duration_ms);
                book.submit_limit(order).expect("seed book is uncrossed");
            }
        }
        let mid = book.mid().unwrap_or(p0 as f64);
        let impact = ReactiveImpact::new(cfg.impact, k.impact_window_ms, k.impact_half_life_ms, start);
        Market {
            keyed: KeyedUniform::new(seed, STREAM_KEYED),
            fundamental_rng: stream_rng(seed, STREAM_FUNDAMENTAL),
            noise_rng: stream_rng(seed, STREAM_NOISE),
            book,
            chiarella: ChiarellaState::new(p0 as f64, mid),
            impact,
            first_tick: start.div_euclid(tick_ms),
            tick: start.div_euclid(tick_ms),
            last_mid: mid,
            next_child: 0,
            scratch: Scratch::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &Arc<MarketConfig> {
        &self.cfg
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn chiarella(&self) -> &ChiarellaState {
        &self.chiarella
    }

    pub fn impact_shift(&self) -> f64 {
        self.impact.shift()
    }

    /// Start time of the next tick to be processed.
    pub fn now(&self) -> Time {
        self.tick * self.cfg.session.demand_tick_ms
    }

    pub fn end_time(&self) -> Time {
        self.cfg.session.close_ms
    }

    pub fn is_finished(&self) -> bool {
        self.now() >= self.end_time()
    }

    /// Index of the next executor child to submit.
    pub fn next_child(&self) -> usize {
        self.next_child
    }

    /// Mid in price units, carrying the last two-sided value forward.
    pub fn mid_price(&self) -> f64 {
        self.last_mid * self.cfg.session.tick_size
    }

    /// Records the opening book and mid into a fresh recorder.
    pub fn record_initial_state(&self, rec: &mut Recorder) {
        rec.mid.push(self.cfg.session.start_ms(), self.mid_price());
        if rec.options.events {
            let mut seeded: Vec<&Order> = self.book.resting_orders(Side::Buy);
            seeded.extend(self.book.resting_orders(Side::Sell));
            seeded.sort_by_key(|o| o.id);
            rec.events.extend(seeded.into_iter().map(BookEvent::from_order));
        }
    }

    /// Processes one demand tick.
    pub fn step_tick(&mut self, children: ChildOrders<'_>, rec: &mut Recorder) {
        let cfg = self.cfg.clone();
        let session = &cfg.session;
        let tick_ms = session.demand_tick_ms;
        let t0 = self.tick * tick_ms;
        let t1 = t0 + tick_ms;
        let tick_size = session.tick_size;
        self.impact.advance(t0);
        self.expire(t0, rec);

        let eps: f64 = StandardNormal.sample(&mut self.fundamental_rng);
        let eta: f64 = StandardNormal.sample(&mut self.noise_rng);
        let params = &cfg.chiarella;
        let sigma_ticks = params.sigma / tick_size * (tick_ms as f64 / self.cfg.kernel.sigma_step_ms).sqrt();
        let demand = chiarella_update(
            params,
            &mut self.chiarella,
            self.last_mid,
            (self.impact.shift() / tick_size).round(),
            sigma_ticks,
            eps,
            eta,
        );
        if rec.options.fundamental {
            rec.fundamental.push((t0, self.chiarella.fundamental_value * tick_size));
        }

        let mut pending = std::mem::take(&mut self.scratch.pending);
        pending.clear();
        if session.agents_active(t0) {
            let steps = (tick_ms / session.step_ms) as u32;
            let step_ms = session.step_ms as f64;
            let alpha = cfg.profile.limit_at(session, t0) * step_ms;
            let mu = cfg.profile.market_at(session, t0) * step_ms;
            let lp = clamp_prob(alpha * cfg.kernel.provider_weight);
            let probs = [clamp_prob(alpha * demand.abs()), clamp_prob(mu * demand.abs()), lp, lp];
            let tick_key = self.tick as u64;
            let mut offsets = std::mem::take(&mut self.scratch.offsets);
            for (kind, &p) in probs.iter().enumerate() {
                let kind = kind as u64;
                if p <= 0.0 {
                    continue;
                }
                let count = binomial_inverse(steps, p, self.keyed.uniform(tick_key, kind));
                if count == 0 {
                    continue;
                }
                offsets.clear();
                let keyed = self.keyed;
                choose_offsets(
                    steps,
                    count,
                    |i, m| keyed.below(tick_key, 16 + (kind << 8) + i as u64, m as u64) as u32,
                    &mut offsets,
                );
                pending.extend(offsets.iter().enumerate().map(|(j, &offset)| Pending {
                    offset,
                    kind,
                    index: j as u32,
                }));
            }
            self.scratch.offsets = offsets;
            pending.sort_unstable_by_key(|p| (p.offset, p.kind, p.index));
        }

        let side_of_demand = if demand >= 0.0 { Side::Buy } else { Side::Sell };
        let mut trades = std::mem::take(&mut self.scratch.trades);
        for p in &pending {
            let te = t0 + p.offset as Time * session.step_ms;
            self.submit_children_before(te, children, rec, &mut trades);
            self.expire(te, rec);
            let side = match p.kind {
                TRADER_LIMIT | TRADER_MARKET => side_of_demand,
                PROVIDER_BID => Side::Buy,
                _ => Side::Sell,
            };
            debug_assert!(p.kind != PROVIDER_ASK || side == Side::Sell);
            let id = (((self.tick - self.first_tick) as u64) << 10) | (p.kind << 8) | p.index as u64;
            let u = self.keyed.uniform(self.tick as u64, (1 << 20) | (p.kind << 8) | p.index as u64);
            let tb = time_bucket(session, te);
            let sb = spread_bucket(self.book.spread());
            let order = if p.kind == TRADER_MARKET {
                Order::market(id, side, cfg.sampler.sample_market(tb, sb, u), te)
            } else {
                let s = cfg.sampler.sample_limit(tb, sb, u);
                let reference = reference_quote(&self.book, side).unwrap_or_else(|| {
                    let m = self.last_mid.round() as Price;
                    m - side.sign()
                });
                let price = limit_price(side, reference, s.depth).max(1);
                Order::limit(id, side, price, s.volume, te).with_duration(s.duration.max(1))
            };
            if rec.options.events {
                rec.events.push(BookEvent::from_order(&order));
            }
            trades.clear();
            if self.book.submit_into(order, &mut trades).is_ok() {
                self.absorb_trades(&trades, rec);
            }
            self.note_mid(te, rec);
        }
        self.submit_children_before(t1, children, rec, &mut trades);
        self.scratch.trades = trades;
        self.scratch.pending = pending;
        self.tick += 1;
    }

    fn expire(&mut self, now: Time, rec: &mut Recorder) {
        if self.book.next_expiry().is_none_or(|e| e > now) {
            return;
        }
        let mut cancelled = std::mem::take(&mut self.scratch.cancelled);
        cancelled.clear();
        self.book.expire_into(now, &mut cancelled);
        if !cancelled.is_empty() {
            self.note_mid(now, rec);
        }
        self.scratch.cancelled = cancelled;
    }

    fn note_mid(&mut self, t: Time, rec: &mut Recorder) {
        if let Some(m) = self.book.mid() {
            self.last_mid = m;
        }
        rec.mid.push(t, self.last_mid * self.cfg.session.tick_size);
    }

    fn absorb_trades(&mut self, trades: &[Trade], rec: &mut Recorder) {
        for t in trades {
            let executor = t.aggressor_order_id >= EXECUTOR_ID_BASE;
            self.impact.record((t.aggressor_side.sign() * t.quantity as i64) as f64, executor);
            if rec.options.trades {
                rec.trades.push(TradeRecord {
                    time: t.time,
                    price: t.price,
                    quantity: t.quantity,
                    aggressor_side: t.aggressor_side,
                });
            }
            if executor {
                rec.fills.push(Fill {
                    time: t.time,
                    price: t.price as f64 * self.cfg.session.tick_size,
                    volume: t.quantity,
                    child_index: (t.aggressor_order_id - EXECUTOR_ID_BASE) as usize,
                });
            }
        }
    }

    fn submit_children_before(&mut self, before: Time, children: ChildOrders<'_>, rec: &mut Recorder, trades: &mut Vec<Trade>) {
        while let Some(&(tc, qty)) = children.children.get(self.next_child) {
            if tc >= before {
                break;
            }
            let index = self.next_child;
            self.next_child += 1;
            self.expire(tc.max(self.now()), rec);
            let order = Order::market(EXECUTOR_ID_BASE + index as u64, children.side, qty, tc).with_owner(EXECUTOR_OWNER);
            if rec.options.events {
                rec.events.push(BookEvent::from_order(&order));
            }
            trades.clear();
            let _ = self.book.submit_into(order, trades);
            let filled: Qty = trades.iter().map(|t| t.quantity).sum();
            rec.unfilled_volume += qty - filled;
            self.absorb_trades(trades, rec);
            self.note_mid(tc, rec);
        }
    }

    /// Runs ticks until `until` (exclusive) or the close.
    pub fn run_until(&mut self, until: Time, children: ChildOrders<'_>, rec: &mut Recorder) {
        let end = until.min(self.end_time());
        while self.now() < end {
            self.step_tick(children, rec);
        }
    }
}

/// A complete background-only session with periodic checkpoints.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub seed: u64,
    pub recorder: Recorder,
    /// Market states at checkpoint tick boundaries, in time order.
    pub checkpoints: Vec<Market>,
}

impl BaselineRun {
    pub fn mid(&self) -> &MidSeries {
        &self.recorder.mid
    }

    /// Arrival price: baseline mid at the open.
    pub fn reference_price(&self, cfg: &MarketConfig) -> f64 {
        self.recorder.mid.at(cfg.session.open_ms).expect("baseline mid is recorded from the start")
    }

    /// Latest checkpoint at or before `t`.
    pub fn checkpoint_before(&self, t: Time) -> Option<&Market> {
        let i = self.checkpoints.partition_point(|m| m.now() <= t);
        (i > 0).then(|| &self.checkpoints[i - 1])
    }
}

pub fn run_baseline(cfg: &Arc<MarketConfig>, seed: u64, options: RecordOptions) -> BaselineRun {
    let mut market = Market::new(cfg.clone(), seed);
    let mut rec = Recorder::new(options);
    market.record_initial_state(&mut rec);
    let interval = cfg.kernel.checkpoint_interval_ms;
    let mut checkpoints = Vec::new();
    while !market.is_finished() {
        if market.now().rem_euclid(interval) == 0 {
            checkpoints.push(market.clone());
        }
        market.step_tick(ChildOrders::NONE, &mut rec);
    }
    BaselineRun {
        seed,
        recorder: rec,
        checkpoints,
    }
}

/// Runs a full session with the executor active.
pub fn run_with_children(cfg: &Arc<MarketConfig>, seed: u64, children: ChildOrders<'_>, options: RecordOptions) -> Recorder {
    let mut market = Market::new(cfg.clone(), seed);
    let mut rec = Recorder::new(options);
    market.record_initial_state(&mut rec);
    market.run_until(cfg.session.close_ms, children, &mut rec);
    rec
}

/// Runs only the part of the counterfactual that can produce fills:
/// resumes from the baseline checkpoint preceding the first child and stops
/// once the last child has been sent.
pub fn run_fills_only(baseline: &BaselineRun, children: ChildOrders<'_>) -> Recorder {
    let mut rec = Recorder::new(RecordOptions::default());
    let (Some(&(first, _)), Some(&(last, _))) = (children.children.first(), children.children.last()) else {
        return rec;
    };
    let mut market = baseline
        .checkpoint_before(first)
        .expect("baseline has a checkpoint at its start")
        .clone();
    let tick_ms = market.config().session.demand_tick_ms;
    market.run_until(last.div_euclid(tick_ms) * tick_ms + tick_ms, children, &mut rec);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_config(session: SessionTemplate) -> Arc<MarketConfig> {
        let profile = ArrivalProfile::parametric(&session, 0.002, 0.0005);
        let sampler = Arc::new(ConditionalOrderSampler::bootstrap(&session, 1));
        Arc::new(MarketConfig {
            session,
            chiarella: ChiarellaParams::TEST_DAY,
            impact: ImpactParams::TEST_DAY,
            kernel: KernelParams::default(),
            profile,
            sampler,
        })
    }

    fn short_session() -> SessionTemplate {
        SessionTemplate {
            close_ms: 1_200_000,
            lunch: Some((600_000, 700_000)),
            warmup_ms: 60_000,
            ..SessionTemplate::desk()
        }
    }

    #[test]
    fn identical_seeds_identical_sessions() {
        let cfg = test_config(short_session());
        let opts = RecordOptions { trades: true, events: true, fundamental: true };
        let a = run_baseline(&cfg, 11, opts);
        let b = run_baseline(&cfg, 11, opts);
        let c = run_baseline(&cfg, 12, opts);
        assert_eq!(a.recorder.mid, b.recorder.mid);
        assert_eq!(a.recorder.trades, b.recorder.trades);
        assert_eq!(a.recorder.events, b.recorder.events);
        assert_ne!(a.recorder.mid, c.recorder.mid);
        assert!(a.recorder.trades.len() > 100, "{}", a.recorder.trades.len());
    }

    #[test]
    fn no_submissions_at_lunch() {
        let cfg = test_config(short_session());
        let run = run_baseline(&cfg, 3, RecordOptions { events: true, ..Default::default() });
        assert!(run
            .recorder
            .events
            .iter()
            .all(|e| !cfg.session.in_lunch(e.time) && e.time < cfg.session.close_ms));
    }

    #[test]
    fn checkpoint_resume_matches_full_run() {
        let cfg = test_config(short_session());
        let baseline = run_baseline(&cfg, 5, RecordOptions::default());
        let children: Vec<(Time, Qty)> = (0..20).map(|i| (750_000 + i * 10_000, 5)).collect();
        let co = ChildOrders { side: Side::Sell, children: &children };
        let full = run_with_children(&cfg, 5, co, RecordOptions::default());
        let partial = run_fills_only(&baseline, co);
        assert_eq!(full.fills, partial.fills);
        assert!(!full.fills.is_empty());
        let first = full.fills[0].time;
        for t in (0..first).step_by(100) {
            assert_eq!(full.mid.at(t), baseline.mid().at(t));
        }
    }
}
