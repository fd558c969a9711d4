//! Event-log and trade-log CSV formats, and replay of an event log through
//! a book.
//!
//! Event log: `time_ms,action,side,price,qty,order_id,duration_ms` with
//! actions `L` (limit), `M` (market), `A` (amend), `C` (cancel). Fields that
//! do not apply to an action are left empty.
//!
//! Trade log: `time_ms,price,qty,aggressor_side`.

use std::io::{BufRead, Write};

use crate::lob::{
    format_price, price_to_ticks, BookError, Order, OrderBook, OrderId, Price, Qty, Side, Time,
    Trade,
};
use crate::Error;

pub const EVENT_LOG_HEADER: &str = "time_ms,action,side,price,qty,order_id,duration_ms";
pub const TRADE_LOG_HEADER: &str = "time_ms,price,qty,aggressor_side";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Limit,
    Market,
    Amend,
    Cancel,
}

impl Action {
    fn code(self) -> &'static str {
        match self {
            Action::Limit => "L",
            Action::Market => "M",
            Action::Amend => "A",
            Action::Cancel => "C",
        }
    }

    fn parse(s: &str) -> Option<Action> {
        Some(match s {
            "L" => Action::Limit,
            "M" => Action::Market,
            "A" => Action::Amend,
            "C" => Action::Cancel,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BookEvent {
    pub time: Time,
    pub action: Action,
    pub side: Option<Side>,
    pub price: Option<Price>,
    pub qty: Option<Qty>,
    pub order_id: OrderId,
    pub duration: Option<Time>,
}

impl BookEvent {
    pub fn from_order(order: &Order) -> Self {
        BookEvent {
            time: order.submit_time,
            action: match order.kind {
                crate::lob::OrderKind::Limit => Action::Limit,
                crate::lob::OrderKind::Market => Action::Market,
            },
            side: Some(order.side),
            price: order.price,
            qty: Some(order.quantity),
            order_id: order.id,
            duration: order.duration,
        }
    }

    pub fn cancel(time: Time, order_id: OrderId) -> Self {
        BookEvent {
            time,
            action: Action::Cancel,
            side: None,
            price: None,
            qty: None,
            order_id,
            duration: None,
        }
    }

    pub fn amend(time: Time, order_id: OrderId, qty: Qty) -> Self {
        BookEvent {
            time,
            action: Action::Amend,
            side: None,
            price: None,
            qty: Some(qty),
            order_id,
            duration: None,
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_event_log<W: Write>(mut w: W, events: &[BookEvent], tick_size: f64) -> std::io::Result<()> {
    writeln!(w, "{EVENT_LOG_HEADER}")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.time,
            e.action.code(),
            e.side.map(|s| s.code().to_string()).unwrap_or_default(),
            e.price.map(|p| format_price(p, tick_size)).unwrap_or_default(),
            opt(e.qty),
            e.order_id,
            opt(e.duration),
        )?;
    }
    Ok(())
}

fn field<'a>(cols: &[&'a str], i: usize, line: usize) -> Result<&'a str, Error> {
    cols.get(i)
        .map(|s| s.trim())
        .ok_or_else(|| Error::Parse(format!("line {line}: missing column {i}")))
}

fn parse_opt<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<Option<T>, Error> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} '{s}'")))
}

pub fn read_event_log<R: BufRead>(r: R, tick_size: f64) -> Result<Vec<BookEvent>, Error> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != EVENT_LOG_HEADER {
                return Err(Error::Parse(format!("unexpected event log header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Parse(format!("line {lineno}: expected 7 columns")));
        }
        let time: Time = parse_opt(field(&cols, 0, lineno)?, lineno, "time")?
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing time")))?;
        let action = Action::parse(field(&cols, 1, lineno)?)
            .ok_or_else(|| Error::Parse(format!("line {lineno}: unknown action")))?;
        let side_str = field(&cols, 2, lineno)?;
        let side = if side_str.is_empty() {
            None
        } else {
            Some(
                Side::from_code(side_str)
                    .ok_or_else(|| Error::Parse(format!("line {lineno}: bad side")))?,
            )
        };
        let price = match parse_opt::<f64>(field(&cols, 3, lineno)?, lineno, "price")? {
            Some(p) => Some(
                price_to_ticks(p, tick_size)
                    .ok_or_else(|| Error::Parse(format!("line {lineno}: price {p} off tick grid")))?,
            ),
            None => None,
        };
        let qty = parse_opt(field(&cols, 4, lineno)?, lineno, "qty")?;
        let order_id = parse_opt(field(&cols, 5, lineno)?, lineno, "order_id")?
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing order_id")))?;
        let duration = parse_opt(field(&cols, 6, lineno)?, lineno, "duration")?;
        let needs_order_fields = matches!(action, Action::Limit | Action::Market);
        if needs_order_fields && (side.is_none() || qty.is_none()) {
            return Err(Error::Parse(format!("line {lineno}: order without side or qty")));
        }
        if action == Action::Limit && price.is_none() {
            return Err(Error::Parse(format!("line {lineno}: limit order without price")));
        }
        if action == Action::Amend && qty.is_none() {
            return Err(Error::Parse(format!("line {lineno}: amend without qty")));
        }
        out.push(BookEvent {
            time,
            action,
            side,
            price,
            qty,
            order_id,
            duration,
        });
    }
    Ok(out)
}

pub fn write_trade_log<'a, W, T>(mut w: W, trades: &'a [T], tick_size: f64) -> std::io::Result<()>
where
    W: Write,
    &'a T: Into<TradeRecord>,
{
    writeln!(w, "{TRADE_LOG_HEADER}")?;
    for t in trades {
        let t: TradeRecord = t.into();
        writeln!(
            w,
            "{},{},{},{}",
            t.time,
            format_price(t.price, tick_size),
            t.quantity,
            t.aggressor_side.code()
        )?;
    }
    Ok(())
}

/// One row of a trade log. Order ids are not part of the file format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TradeRecord {
    pub time: Time,
    pub price: Price,
    pub quantity: Qty,
    pub aggressor_side: Side,
}

impl From<&TradeRecord> for TradeRecord {
    fn from(t: &TradeRecord) -> Self {
        *t
    }
}

impl From<&Trade> for TradeRecord {
    fn from(t: &Trade) -> Self {
        TradeRecord {
            time: t.time,
            price: t.price,
            quantity: t.quantity,
            aggressor_side: t.aggressor_side,
        }
    }
}

pub fn read_trade_log<R: BufRead>(r: R, tick_size: f64) -> Result<Vec<TradeRecord>, Error> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != TRADE_LOG_HEADER {
                return Err(Error::Parse(format!("unexpected trade log header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!("line {lineno}: expected 4 columns")));
        }
        let time = parse_opt(cols[0].trim(), lineno, "time")?
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing time")))?;
        let price: f64 = parse_opt(cols[1].trim(), lineno, "price")?
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing price")))?;
        let price = price_to_ticks(price, tick_size)
            .ok_or_else(|| Error::Parse(format!("line {lineno}: price off tick grid")))?;
        let quantity = parse_opt(cols[2].trim(), lineno, "qty")?
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing qty")))?;
        let aggressor_side = Side::from_code(cols[3].trim())
            .ok_or_else(|| Error::Parse(format!("line {lineno}: bad side")))?;
        out.push(TradeRecord {
            time,
            price,
            quantity,
            aggressor_side,
        });
    }
    Ok(out)
}

/// Result of pushing an event log through a book.
#[derive(Clone, Debug, Default)]
pub struct Replay {
    pub trades: Vec<Trade>,
    /// Ids cancelled by time-in-force expiry, in the order they expired.
    pub expired: Vec<OrderId>,
    /// Events the book refused, with the reason.
    pub rejected: Vec<(usize, BookError)>,
}

/// Applies events in file order. Expiry runs before each event at its
/// timestamp.
pub fn replay(events: &[BookEvent], book: &mut OrderBook) -> Replay {
    let mut out = Replay::default();
    for (i, e) in events.iter().enumerate() {
        book.expire_into(e.time, &mut out.expired);
        if let Err(err) = apply_event(book, e, &mut out.trades) {
            out.rejected.push((i, err));
        }
    }
    out
}

pub fn apply_event(book: &mut OrderBook, e: &BookEvent, trades: &mut Vec<Trade>) -> Result<(), BookError> {
    match e.action {
        Action::Limit | Action::Market => {
            let side = e.side.ok_or(BookError::InvalidPrice(e.order_id))?;
            let qty = e.qty.unwrap_or(0);
            let mut order = match e.action {
                Action::Limit => Order::limit(
                    e.order_id,
                    side,
                    e.price.ok_or(BookError::InvalidPrice(e.order_id))?,
                    qty,
                    e.time,
                ),
                _ => Order::market(e.order_id, side, qty, e.time),
            };
            order.duration = e.duration;
            book.submit_into(order, trades)
        }
        Action::Amend => book.amend(e.order_id, e.qty.unwrap_or(0)),
        Action::Cancel => book.cancel(e.order_id).map(|_| ()),
    }
}
