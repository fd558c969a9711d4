//! Shared helpers for integration tests: a deliberately naive matching
//! engine used as an oracle, and a random event-stream generator.

#![allow(dead_code)]

use execsim::events::{Action, BookEvent};
use execsim::lob::{OrderBook, OrderId, Price, Qty, Side, Time};
use execsim::rng::stream_rng;
use rand::Rng;

#[derive(Clone, Debug)]
struct NaiveOrder {
    id: OrderId,
    side: Side,
    price: Price,
    remaining: Qty,
    seq: u64,
    expiry: Option<Time>,
}

/// Every operation is a linear scan over one flat list of resting orders.
#[derive(Default)]
pub struct NaiveBook {
    orders: Vec<NaiveOrder>,
    seq: u64,
}

/// (time, price, qty, aggressor id, passive id, aggressor side)
pub type NaiveTrade = (Time, Price, Qty, OrderId, OrderId, Side);

impl NaiveBook {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn expire(&mut self, now: Time) {
        self.orders.retain(|o| o.expiry.map_or(true, |x| x > now));
    }

    fn best_opposite(&self, side: Side, limit: Option<Price>) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.orders.iter().enumerate() {
            if o.side == side {
                continue;
            }
            let crosses = match (side, limit) {
                (_, None) => true,
                (Side::Buy, Some(p)) => o.price <= p,
                (Side::Sell, Some(p)) => o.price >= p,
            };
            if !crosses {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let bo = &self.orders[b];
                    let price_better = match side {
                        Side::Buy => o.price < bo.price,
                        Side::Sell => o.price > bo.price,
                    };
                    price_better || (o.price == bo.price && o.seq < bo.seq)
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    fn find(&self, id: OrderId) -> Option<usize> {
        self.orders.iter().position(|o| o.id == id)
    }

    /// Applies one event, returning `false` if it was rejected.
    pub fn apply(&mut self, e: &BookEvent, trades: &mut Vec<NaiveTrade>) -> bool {
        self.expire(e.time);
        match e.action {
            Action::Limit | Action::Market => {
                let Some(side) = e.side else { return false };
                let qty = e.qty.unwrap_or(0);
                let limit = if e.action == Action::Limit {
                    match e.price {
                        Some(p) if p > 0 => Some(p),
                        _ => return false,
                    }
                } else {
                    if e.price.is_some() {
                        return false;
                    }
                    None
                };
                if qty == 0 || self.find(e.order_id).is_some() {
                    return false;
                }
                let mut remaining = qty;
                while remaining > 0 {
                    let Some(i) = self.best_opposite(side, limit) else { break };
                    let q = remaining.min(self.orders[i].remaining);
                    remaining -= q;
                    self.orders[i].remaining -= q;
                    trades.push((e.time, self.orders[i].price, q, e.order_id, self.orders[i].id, side));
                    if self.orders[i].remaining == 0 {
                        self.orders.remove(i);
                    }
                }
                if let (Some(p), true) = (limit, remaining > 0) {
                    let seq = self.next_seq();
                    self.orders.push(NaiveOrder {
                        id: e.order_id,
                        side,
                        price: p,
                        remaining,
                        seq,
                        expiry: e.duration.map(|d| e.time + d),
                    });
                }
                true
            }
            Action::Amend => {
                let qty = e.qty.unwrap_or(0);
                let Some(i) = self.find(e.order_id) else { return false };
                if qty == 0 {
                    return false;
                }
                if qty > self.orders[i].remaining {
                    self.orders[i].seq = self.next_seq();
                }
                self.orders[i].remaining = qty;
                true
            }
            Action::Cancel => match self.find(e.order_id) {
                Some(i) => {
                    self.orders.remove(i);
                    true
                }
                None => false,
            },
        }
    }

    /// (id, price, remaining) in matching priority order.
    pub fn side(&self, side: Side) -> Vec<(OrderId, Price, Qty)> {
        let mut v: Vec<&NaiveOrder> = self.orders.iter().filter(|o| o.side == side).collect();
        v.sort_by(|a, b| {
            let by_price = match side {
                Side::Buy => b.price.cmp(&a.price),
                Side::Sell => a.price.cmp(&b.price),
            };
            by_price.then(a.seq.cmp(&b.seq))
        });
        v.into_iter().map(|o| (o.id, o.price, o.remaining)).collect()
    }
}

pub fn engine_side(book: &OrderBook, side: Side) -> Vec<(OrderId, Price, Qty)> {
    book.resting_orders(side)
        .into_iter()
        .map(|o| (o.id, o.price.expect("resting orders have a price"), o.remaining))
        .collect()
}

/// A random stream of at most `max_len` events around a price of 100,
/// including cancels and amends of live, dead and unknown ids, duplicate
/// ids, expiring orders and invalid submissions.
pub fn random_stream(seed: u64, max_len: usize) -> Vec<BookEvent> {
    let mut rng = stream_rng(seed, 0);
    let n = rng.random_range(1..=max_len);
    let mut t: Time = 0;
    let mut next_id: OrderId = 1;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.random_range(0..4);
        let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
        let known = |rng: &mut rand_chacha::ChaCha8Rng, next: OrderId| rng.random_range(1..next + 3);
        let u: f64 = rng.random();
        let e = if u < 0.5 {
            let id = if rng.random_bool(0.03) && next_id > 1 { known(&mut rng, next_id) } else { next_id };
            next_id = next_id.max(id + 1);
            let price = match side {
                Side::Buy => 100 - rng.random_range(-2..6),
                Side::Sell => 100 + rng.random_range(-2..6),
            };
            BookEvent {
                time: t,
                action: Action::Limit,
                side: Some(side),
                price: Some(if rng.random_bool(0.02) { 0 } else { price }),
                qty: Some(if rng.random_bool(0.02) { 0 } else { rng.random_range(1..25) }),
                order_id: id,
                duration: if rng.random_bool(0.3) { Some(rng.random_range(0..40)) } else { None },
            }
        } else if u < 0.68 {
            let id = next_id;
            next_id += 1;
            BookEvent {
                time: t,
                action: Action::Market,
                side: Some(side),
                price: None,
                qty: Some(rng.random_range(1..40)),
                order_id: id,
                duration: None,
            }
        } else if u < 0.84 {
            BookEvent::cancel(t, known(&mut rng, next_id))
        } else {
            BookEvent::amend(t, known(&mut rng, next_id), rng.random_range(0..30))
        };
        out.push(e);
    }
    out
}
