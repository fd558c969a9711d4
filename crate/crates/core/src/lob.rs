//! Limit order book with price-time priority matching.
//!
//! Prices are integer ticks and time is integer milliseconds since the
//! session open. A crossing order trades at the resting order's price; a
//! market order takes whatever the opposite side offers and its unfilled
//! remainder is dropped.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Price = i64;
pub type Qty = u64;
pub type OrderId = u64;
pub type Time = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// +1 for buys, -1 for sells.
    pub fn sign(self) -> i64 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    pub fn code(self) -> char {
        match self {
            Side::Buy => 'B',
            Side::Sell => 'S',
        }
    }

    pub fn from_code(c: &str) -> Option<Side> {
        match c {
            "B" => Some(Side::Buy),
            "S" => Some(Side::Sell),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderKind {
    Limit,
    Market,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    pub kind: OrderKind,
    /// Limit price in ticks; `None` for market orders.
    pub price: Option<Price>,
    pub quantity: Qty,
    pub remaining: Qty,
    pub submit_time: Time,
    /// Time in force in milliseconds.
    pub duration: Option<Time>,
    pub owner: u32,
}

impl Order {
    pub fn limit(id: OrderId, side: Side, price: Price, quantity: Qty, submit_time: Time) -> Self {
        Order {
            id,
            side,
            kind: OrderKind::Limit,
            price: Some(price),
            quantity,
            remaining: quantity,
            submit_time,
            duration: None,
            owner: 0,
        }
    }

    pub fn market(id: OrderId, side: Side, quantity: Qty, submit_time: Time) -> Self {
        Order {
            id,
            side,
            kind: OrderKind::Market,
            price: None,
            quantity,
            remaining: quantity,
            submit_time,
            duration: None,
            owner: 0,
        }
    }

    pub fn with_duration(mut self, duration: Time) -> Self {
        self.duration = Some(duration);
        self
    }

    pub fn with_owner(mut self, owner: u32) -> Self {
        self.owner = owner;
        self
    }

    pub fn expiry(&self) -> Option<Time> {
        self.duration.map(|d| self.submit_time + d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub price: Price,
    pub quantity: Qty,
    pub aggressor_order_id: OrderId,
    pub passive_order_id: OrderId,
    pub aggressor_side: Side,
    pub time: Time,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level2Snapshot {
    pub time: Time,
    /// Best first: (price, aggregate quantity).
    pub bids: Vec<(Price, Qty)>,
    pub asks: Vec<(Price, Qty)>,
    pub mid: Option<f64>,
    pub spread: Option<Price>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BookError {
    #[error("order {0} is already resting in the book")]
    DuplicateId(OrderId),
    #[error("order {0} has a non-positive quantity")]
    InvalidQuantity(OrderId),
    #[error("order {0} has an invalid price")]
    InvalidPrice(OrderId),
    #[error("order {0} has the wrong kind for this operation")]
    WrongKind(OrderId),
    #[error("order {0} not found")]
    NotFound(OrderId),
}

#[derive(Clone, Debug, Default)]
struct Level {
    queue: VecDeque<Order>,
    total: Qty,
}

#[derive(Clone, Debug)]
pub struct OrderBook {
    bids: BTreeMap<Price, Level>,
    asks: BTreeMap<Price, Level>,
    index: HashMap<OrderId, (Side, Price)>,
    expiries: BinaryHeap<Reverse<(Time, OrderId)>>,
    tick_size: f64,
    last_trade_price: Option<Price>,
}

impl OrderBook {
    pub fn new(tick_size: f64) -> Self {
        OrderBook {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            index: HashMap::new(),
            expiries: BinaryHeap::new(),
            tick_size,
            last_trade_price: None,
        }
    }

    pub fn tick_size(&self) -> f64 {
        self.tick_size
    }

    pub fn last_trade_price(&self) -> Option<Price> {
        self.last_trade_price
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.asks.keys().next().copied()
    }

    pub fn best(&self, side: Side) -> Option<Price> {
        match side {
            Side::Buy => self.best_bid(),
            Side::Sell => self.best_ask(),
        }
    }

    /// Mid-price in ticks when both sides are populated.
    pub fn mid(&self) -> Option<f64> {
        match (self.best_bid(), self.best_ask()) {
            (Some(b), Some(a)) => Some((b + a) as f64 / 2.0),
            _ => None,
        }
    }

    pub fn spread(&self) -> Option<Price> {
        match (self.best_bid(), self.best_ask()) {
            (Some(b), Some(a)) => Some(a - b),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }

    pub fn num_resting(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        let &(side, price) = self.index.get(&id)?;
        self.side_levels(side)
            .get(&price)?
            .queue
            .iter()
            .find(|o| o.id == id)
    }

    /// Zero-based position of a resting order within its price level.
    pub fn queue_position(&self, id: OrderId) -> Option<usize> {
        let &(side, price) = self.index.get(&id)?;
        self.side_levels(side)
            .get(&price)?
            .queue
            .iter()
            .position(|o| o.id == id)
    }

    /// Aggregate resting quantity at a price level.
    pub fn level_quantity(&self, side: Side, price: Price) -> Qty {
        self.side_levels(side).get(&price).map_or(0, |l| l.total)
    }

    /// Total resting quantity on one side.
    pub fn side_quantity(&self, side: Side) -> Qty {
        self.side_levels(side).values().map(|l| l.total).sum()
    }

    /// Aggregated levels, best first.
    pub fn levels(&self, side: Side) -> Vec<(Price, Qty)> {
        match side {
            Side::Buy => self.bids.iter().rev().map(|(p, l)| (*p, l.total)).collect(),
            Side::Sell => self.asks.iter().map(|(p, l)| (*p, l.total)).collect(),
        }
    }

    /// Resting orders on one side in matching priority order.
    pub fn resting_orders(&self, side: Side) -> Vec<&Order> {
        match side {
            Side::Buy => self
                .bids
                .values()
                .rev()
                .flat_map(|l| l.queue.iter())
                .collect(),
            Side::Sell => self.asks.values().flat_map(|l| l.queue.iter()).collect(),
        }
    }

    fn side_levels(&self, side: Side) -> &BTreeMap<Price, Level> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_levels_mut(&mut self, side: Side) -> &mut BTreeMap<Price, Level> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    /// Submits any order, appending trades to `trades` in execution order.
    pub fn submit_into(&mut self, order: Order, trades: &mut Vec<Trade>) -> Result<(), BookError> {
        match order.kind {
            OrderKind::Limit => self.limit_into(order, trades),
            OrderKind::Market => self.market_into(order, trades),
        }
    }

    pub fn submit_limit(&mut self, order: Order) -> Result<Vec<Trade>, BookError> {
        if order.kind != OrderKind::Limit {
            return Err(BookError::WrongKind(order.id));
        }
        let mut trades = Vec::new();
        self.limit_into(order, &mut trades)?;
        Ok(trades)
    }

    pub fn submit_market(&mut self, order: Order) -> Result<Vec<Trade>, BookError> {
        if order.kind != OrderKind::Market {
            return Err(BookError::WrongKind(order.id));
        }
        let mut trades = Vec::new();
        self.market_into(order, &mut trades)?;
        Ok(trades)
    }

    fn limit_into(&mut self, mut order: Order, trades: &mut Vec<Trade>) -> Result<(), BookError> {
        let price = match order.price {
            Some(p) if p > 0 => p,
            _ => return Err(BookError::InvalidPrice(order.id)),
        };
        if order.remaining == 0 || order.remaining > order.quantity {
            return Err(BookError::InvalidQuantity(order.id));
        }
        if self.index.contains_key(&order.id) {
            return Err(BookError::DuplicateId(order.id));
        }
        self.match_against(&mut order, Some(price), trades);
        if order.remaining > 0 {
            self.rest(order, price);
        }
        Ok(())
    }

    fn market_into(&mut self, mut order: Order, trades: &mut Vec<Trade>) -> Result<(), BookError> {
        if order.price.is_some() {
            return Err(BookError::InvalidPrice(order.id));
        }
        if order.remaining == 0 || order.remaining > order.quantity {
            return Err(BookError::InvalidQuantity(order.id));
        }
        if self.index.contains_key(&order.id) {
            return Err(BookError::DuplicateId(order.id));
        }
        self.match_against(&mut order, None, trades);
        Ok(())
    }

    fn match_against(&mut self, order: &mut Order, limit: Option<Price>, trades: &mut Vec<Trade>) {
        let opposite = order.side.opposite();
        while order.remaining > 0 {
            let best = match opposite {
                Side::Sell => self.asks.keys().next().copied(),
                Side::Buy => self.bids.keys().next_back().copied(),
            };
            let Some(level_price) = best else { break };
            let crosses = match (order.side, limit) {
                (_, None) => true,
                (Side::Buy, Some(p)) => level_price <= p,
                (Side::Sell, Some(p)) => level_price >= p,
            };
            if !crosses {
                break;
            }
            let book_side = match opposite {
                Side::Sell => &mut self.asks,
                Side::Buy => &mut self.bids,
            };
            let level = book_side.get_mut(&level_price).expect("best level exists");
            while order.remaining > 0 {
                let Some(passive) = level.queue.front_mut() else { break };
                let qty = order.remaining.min(passive.remaining);
                passive.remaining -= qty;
                order.remaining -= qty;
                level.total -= qty;
                trades.push(Trade {
                    price: level_price,
                    quantity: qty,
                    aggressor_order_id: order.id,
                    passive_order_id: passive.id,
                    aggressor_side: order.side,
                    time: order.submit_time,
                });
                if passive.remaining == 0 {
                    let done = level.queue.pop_front().expect("front exists");
                    self.index.remove(&done.id);
                }
            }
            if level.queue.is_empty() {
                book_side.remove(&level_price);
            }
            self.last_trade_price = Some(level_price);
        }
    }

    fn rest(&mut self, order: Order, price: Price) {
        if let Some(expiry) = order.expiry() {
            self.expiries.push(Reverse((expiry, order.id)));
        }
        self.index.insert(order.id, (order.side, price));
        let level = self.side_levels_mut(order.side).entry(price).or_default();
        level.total += order.remaining;
        level.queue.push_back(order);
    }

    /// Changes the open quantity of a resting order. Decreases keep queue
    /// priority; increases send the order to the back of its level.
    pub fn amend(&mut self, id: OrderId, new_quantity: Qty) -> Result<(), BookError> {
        let &(side, price) = self.index.get(&id).ok_or(BookError::NotFound(id))?;
        if new_quantity == 0 {
            return Err(BookError::InvalidQuantity(id));
        }
        let level = self
            .side_levels_mut(side)
            .get_mut(&price)
            .expect("indexed level exists");
        let pos = level
            .queue
            .iter()
            .position(|o| o.id == id)
            .expect("indexed order exists");
        let current = level.queue[pos].remaining;
        if new_quantity < current {
            let delta = current - new_quantity;
            let o = &mut level.queue[pos];
            o.remaining = new_quantity;
            o.quantity -= delta;
            level.total -= delta;
        } else if new_quantity > current {
            let delta = new_quantity - current;
            let mut o = level.queue.remove(pos).expect("position valid");
            o.remaining = new_quantity;
            o.quantity += delta;
            level.total += delta;
            level.queue.push_back(o);
        }
        Ok(())
    }

    /// Removes a resting order and returns it.
    pub fn cancel(&mut self, id: OrderId) -> Result<Order, BookError> {
        let (side, price) = self.index.remove(&id).ok_or(BookError::NotFound(id))?;
        let levels = self.side_levels_mut(side);
        let level = levels.get_mut(&price).expect("indexed level exists");
        let pos = level
            .queue
            .iter()
            .position(|o| o.id == id)
            .expect("indexed order exists");
        let order = level.queue.remove(pos).expect("position valid");
        level.total -= order.remaining;
        if level.queue.is_empty() {
            levels.remove(&price);
        }
        Ok(order)
    }

    /// Cancels every resting order whose `submit_time + duration <= now`.
    /// Returned ids are ordered by expiry time, then id.
    pub fn expire(&mut self, now: Time) -> Vec<OrderId> {
        let mut out = Vec::new();
        self.expire_into(now, &mut out);
        out
    }

    pub fn expire_into(&mut self, now: Time, cancelled: &mut Vec<OrderId>) {
        while let Some(&Reverse((expiry, id))) = self.expiries.peek() {
            if expiry > now {
                break;
            }
            self.expiries.pop();
            // The id may have traded away or been reused since it was queued.
            let live = self.order(id).and_then(Order::expiry) == Some(expiry);
            if live {
                self.cancel(id).expect("live order cancels");
                cancelled.push(id);
            }
        }
    }

    /// Earliest queued expiry time, possibly of an order that already left.
    pub fn next_expiry(&self) -> Option<Time> {
        self.expiries.peek().map(|r| r.0 .0)
    }

    pub fn snapshot(&self, time: Time, depth: usize) -> Level2Snapshot {
        Level2Snapshot {
            time,
            bids: self
                .bids
                .iter()
                .rev()
                .take(depth)
                .map(|(p, l)| (*p, l.total))
                .collect(),
            asks: self
                .asks
                .iter()
                .take(depth)
                .map(|(p, l)| (*p, l.total))
                .collect(),
            mid: self.mid(),
            spread: self.spread(),
        }
    }

    pub fn to_price(&self, ticks: Price) -> f64 {
        ticks as f64 * self.tick_size
    }
}

/// Converts a real price to ticks, rejecting prices off the tick grid.
pub fn price_to_ticks(price: f64, tick_size: f64) -> Option<Price> {
    let ticks = price / tick_size;
    let rounded = ticks.round();
    if (ticks - rounded).abs() <= 1e-6 * rounded.abs().max(1.0) {
        Some(rounded as Price)
    } else {
        None
    }
}

/// Formats a tick price as a real price with just enough decimals for the tick size.
pub fn format_price(ticks: Price, tick_size: f64) -> String {
    let mut decimals = 0;
    let mut scaled = tick_size;
    while decimals < 8 && (scaled - scaled.round()).abs() > 1e-9 {
        scaled *= 10.0;
        decimals += 1;
    }
    format!("{:.*}", decimals, ticks as f64 * tick_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book() -> OrderBook {
        OrderBook::new(1.0)
    }

    #[test]
    fn crossing_limit_trades_at_resting_price() {
        let mut b = book();
        assert!(b.submit_limit(Order::limit(1, Side::Buy, 10, 100, 0)).unwrap().is_empty());
        let trades = b.submit_limit(Order::limit(2, Side::Sell, 9, 100, 1)).unwrap();
        assert_eq!(trades.len(), 1);
        assert_eq!(trades[0].price, 10);
        assert_eq!(trades[0].quantity, 100);
        assert_eq!(trades[0].passive_order_id, 1);
        assert!(b.is_empty());
        assert_eq!(b.last_trade_price(), Some(10));
    }

    #[test]
    fn non_crossing_orders_rest() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 100, 0)).unwrap();
        let trades = b.submit_limit(Order::limit(2, Side::Sell, 11, 100, 1)).unwrap();
        assert!(trades.is_empty());
        assert_eq!(b.spread(), Some(1));
        assert_eq!(b.mid(), Some(10.5));
    }

    #[test]
    fn fifo_within_level() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 50, 1)).unwrap();
        b.submit_limit(Order::limit(2, Side::Buy, 10, 50, 2)).unwrap();
        let trades = b.submit_limit(Order::limit(3, Side::Sell, 10, 70, 3)).unwrap();
        assert_eq!(trades.len(), 2);
        assert_eq!((trades[0].passive_order_id, trades[0].quantity), (1, 50));
        assert_eq!((trades[1].passive_order_id, trades[1].quantity), (2, 20));
        assert!(trades.iter().all(|t| t.price == 10));
        assert_eq!(b.order(2).unwrap().remaining, 30);
        assert_eq!(b.level_quantity(Side::Buy, 10), 30);
    }

    #[test]
    fn duplicate_and_invalid_orders_rejected() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 5, 0)).unwrap();
        assert_eq!(
            b.submit_limit(Order::limit(1, Side::Buy, 9, 5, 0)),
            Err(BookError::DuplicateId(1))
        );
        assert_eq!(
            b.submit_limit(Order::limit(2, Side::Buy, 9, 0, 0)),
            Err(BookError::InvalidQuantity(2))
        );
        assert_eq!(
            b.submit_limit(Order::limit(3, Side::Buy, 0, 5, 0)),
            Err(BookError::InvalidPrice(3))
        );
        assert_eq!(
            b.submit_limit(Order::market(4, Side::Buy, 5, 0)),
            Err(BookError::WrongKind(4))
        );
    }

    #[test]
    fn market_walks_levels() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Sell, 11, 30, 0)).unwrap();
        b.submit_limit(Order::limit(2, Side::Sell, 12, 30, 0)).unwrap();
        let trades = b.submit_market(Order::market(3, Side::Buy, 50, 1)).unwrap();
        let fills: Vec<_> = trades.iter().map(|t| (t.quantity, t.price)).collect();
        assert_eq!(fills, vec![(30, 11), (20, 12)]);
        assert_eq!(b.levels(Side::Sell), vec![(12, 10)]);
    }

    #[test]
    fn market_into_empty_side_is_cancelled() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 30, 0)).unwrap();
        let trades = b.submit_market(Order::market(2, Side::Buy, 50, 1)).unwrap();
        assert!(trades.is_empty());
        assert!(!b.contains(2));
        assert_eq!(b.num_resting(), 1);
    }

    #[test]
    fn market_exact_fill_empties_side() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Sell, 11, 10, 0)).unwrap();
        let trades = b.submit_market(Order::market(2, Side::Buy, 10, 1)).unwrap();
        assert_eq!(trades.len(), 1);
        assert_eq!((trades[0].quantity, trades[0].price), (10, 11));
        assert_eq!(b.best_ask(), None);
    }

    #[test]
    fn amend_down_keeps_priority_amend_up_loses_it() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 50, 0)).unwrap();
        b.submit_limit(Order::limit(2, Side::Buy, 10, 50, 1)).unwrap();
        b.amend(1, 30).unwrap();
        assert_eq!(b.queue_position(1), Some(0));
        assert_eq!(b.order(1).unwrap().remaining, 30);
        assert_eq!(b.level_quantity(Side::Buy, 10), 80);

        b.amend(1, 30).unwrap();
        assert_eq!(b.queue_position(1), Some(0));

        b.amend(1, 60).unwrap();
        assert_eq!(b.queue_position(1), Some(1));
        assert_eq!(b.level_quantity(Side::Buy, 10), 110);

        assert_eq!(b.amend(999, 10), Err(BookError::NotFound(999)));
    }

    #[test]
    fn cancel_behaviour() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 50, 0)).unwrap();
        b.cancel(1).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.cancel(1), Err(BookError::NotFound(1)));

        b.submit_limit(Order::limit(2, Side::Sell, 12, 10, 0)).unwrap();
        b.submit_limit(Order::limit(3, Side::Sell, 12, 15, 0)).unwrap();
        b.submit_limit(Order::limit(4, Side::Sell, 12, 20, 0)).unwrap();
        b.cancel(3).unwrap();
        assert_eq!(b.level_quantity(Side::Sell, 12), 30);
        assert_eq!(b.queue_position(4), Some(1));
    }

    #[test]
    fn expiry_boundary_is_inclusive() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 5, 0).with_duration(1000))
            .unwrap();
        assert!(b.expire(999).is_empty());
        assert!(b.contains(1));
        assert_eq!(b.expire(1000), vec![1]);
        assert!(b.is_empty());
    }

    #[test]
    fn expiry_removes_exact_subset() {
        let mut b = book();
        let durations = [(1, 500), (2, 1500), (3, 800), (4, 2000)];
        for &(id, d) in &durations {
            b.submit_limit(Order::limit(id, Side::Sell, 20 + id as i64, 5, 0).with_duration(d))
                .unwrap();
        }
        b.submit_limit(Order::limit(5, Side::Sell, 30, 5, 0)).unwrap();
        let expected: Vec<OrderId> = {
            let mut v: Vec<_> = durations.iter().filter(|(_, d)| *d <= 1000).collect();
            v.sort_by_key(|(id, d)| (*d, *id));
            v.iter().map(|(id, _)| *id).collect()
        };
        assert_eq!(b.expire(1000), expected);
        assert!(b.contains(2) && b.contains(4) && b.contains(5));
    }

    #[test]
    fn expiry_skips_filled_orders() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Sell, 11, 5, 0).with_duration(100))
            .unwrap();
        b.submit_market(Order::market(2, Side::Buy, 5, 10)).unwrap();
        assert!(b.expire(200).is_empty());
    }

    #[test]
    fn snapshot_shapes() {
        let mut b = book();
        b.submit_limit(Order::limit(1, Side::Buy, 10, 50, 0)).unwrap();
        b.submit_limit(Order::limit(2, Side::Sell, 11, 30, 0)).unwrap();
        let s = b.snapshot(5, 5);
        assert_eq!(s.mid, Some(10.5));
        assert_eq!(s.spread, Some(1));

        b.submit_limit(Order::limit(3, Side::Buy, 10, 7, 0)).unwrap();
        b.submit_limit(Order::limit(4, Side::Buy, 10, 3, 0)).unwrap();
        let s = b.snapshot(5, 5);
        assert_eq!(s.bids, vec![(10, 60)]);

        let mut one = book();
        one.submit_limit(Order::limit(1, Side::Buy, 10, 50, 0)).unwrap();
        let s = one.snapshot(0, 5);
        assert_eq!(s.mid, None);
        assert_eq!(s.spread, None);
    }

    #[test]
    fn price_conversion() {
        assert_eq!(price_to_ticks(18000.0, 1.0), Some(18000));
        assert_eq!(price_to_ticks(100.05, 0.05), Some(2001));
        assert_eq!(price_to_ticks(100.03, 0.05), None);
        assert_eq!(format_price(2001, 0.05), "100.05");
        assert_eq!(format_price(18000, 1.0), "18000");
    }
}
