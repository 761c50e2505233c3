//! Normalized protocol events and their JSONL encoding.
//!
//! Each line of an event file is one JSON object:
//!
//! ```text
//! {"block":1,"tx_index":0,"log_index":0,"kind":"Mint","market":"DAI",
//!  "account":"0x…","amount_underlying":"10","amount_ctokens":"500"}
//! ```
//!
//! `block`, `tx_index` and `log_index` are JSON integers; every amount, rate,
//! factor and price is a decimal string. Every kind except `NewCloseFactor`
//! carries `market`. `MarketListed` and `PriceUpdate` name their asset in
//! `asset` (which must agree with `market` when both are given), and
//! `LiquidateBorrow` names `repay_market` (same rule). Unknown fields are
//! rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dec::Dec;
use crate::model::{AccountId, AssetId};

/// Position of an event in the chain: lexicographic over
/// `(block, tx_index, log_index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct OrderingKey {
    pub block: u64,
    pub tx_index: u64,
    pub log_index: u64,
}

impl OrderingKey {
    pub const fn new(block: u64, tx_index: u64, log_index: u64) -> Self {
        OrderingKey { block, tx_index, log_index }
    }
}

impl fmt::Display for OrderingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.block, self.tx_index, self.log_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Borrow,
    Mint,
    RepayBorrow,
    LiquidateBorrow,
    Redeem,
    NewCollateralFactor,
    AccrueInterest,
    NewInterestRateModel,
    NewInterestParams,
    NewCloseFactor,
    PriceUpdate,
    MarketListed,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::Borrow,
        EventKind::Mint,
        EventKind::RepayBorrow,
        EventKind::LiquidateBorrow,
        EventKind::Redeem,
        EventKind::NewCollateralFactor,
        EventKind::AccrueInterest,
        EventKind::NewInterestRateModel,
        EventKind::NewInterestParams,
        EventKind::NewCloseFactor,
        EventKind::PriceUpdate,
        EventKind::MarketListed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Borrow => "Borrow",
            EventKind::Mint => "Mint",
            EventKind::RepayBorrow => "RepayBorrow",
            EventKind::LiquidateBorrow => "LiquidateBorrow",
            EventKind::Redeem => "Redeem",
            EventKind::NewCollateralFactor => "NewCollateralFactor",
            EventKind::AccrueInterest => "AccrueInterest",
            EventKind::NewInterestRateModel => "NewInterestRateModel",
            EventKind::NewInterestParams => "NewInterestParams",
            EventKind::NewCloseFactor => "NewCloseFactor",
            EventKind::PriceUpdate => "PriceUpdate",
            EventKind::MarketListed => "MarketListed",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    MarketListed {
        asset: AssetId,
        decimals: u8,
        initial_exchange_rate: Dec,
        initial_collateral_factor: Dec,
    },
    Mint {
        market: AssetId,
        account: AccountId,
        amount_underlying: Dec,
        amount_ctokens: Dec,
    },
    Redeem {
        market: AssetId,
        account: AccountId,
        amount_underlying: Dec,
        amount_ctokens: Dec,
    },
    Borrow {
        market: AssetId,
        account: AccountId,
        amount_underlying: Dec,
    },
    RepayBorrow {
        market: AssetId,
        account: AccountId,
        payer: AccountId,
        amount_underlying: Dec,
    },
    LiquidateBorrow {
        borrower: AccountId,
        liquidator: AccountId,
        repay_market: AssetId,
        repay_amount_underlying: Dec,
        collateral_market: AssetId,
        seized_ctokens: Dec,
    },
    NewCollateralFactor {
        market: AssetId,
        new_factor: Dec,
    },
    AccrueInterest {
        market: AssetId,
        new_borrow_index: Dec,
        new_exchange_rate: Dec,
        interest_accumulated_underlying: Dec,
    },
    NewInterestRateModel {
        market: AssetId,
        model_id: String,
    },
    NewInterestParams {
        market: AssetId,
        params_blob: BTreeMap<String, Dec>,
    },
    NewCloseFactor {
        new_close_factor: Dec,
    },
    PriceUpdate {
        asset: AssetId,
        price_usd: Dec,
    },
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::MarketListed { .. } => EventKind::MarketListed,
            Event::Mint { .. } => EventKind::Mint,
            Event::Redeem { .. } => EventKind::Redeem,
            Event::Borrow { .. } => EventKind::Borrow,
            Event::RepayBorrow { .. } => EventKind::RepayBorrow,
            Event::LiquidateBorrow { .. } => EventKind::LiquidateBorrow,
            Event::NewCollateralFactor { .. } => EventKind::NewCollateralFactor,
            Event::AccrueInterest { .. } => EventKind::AccrueInterest,
            Event::NewInterestRateModel { .. } => EventKind::NewInterestRateModel,
            Event::NewInterestParams { .. } => EventKind::NewInterestParams,
            Event::NewCloseFactor { .. } => EventKind::NewCloseFactor,
            Event::PriceUpdate { .. } => EventKind::PriceUpdate,
        }
    }

    /// The market that emitted the event; `None` only for `NewCloseFactor`.
    pub fn market(&self) -> Option<&AssetId> {
        match self {
            Event::MarketListed { asset, .. } | Event::PriceUpdate { asset, .. } => Some(asset),
            Event::Mint { market, .. }
            | Event::Redeem { market, .. }
            | Event::Borrow { market, .. }
            | Event::RepayBorrow { market, .. }
            | Event::NewCollateralFactor { market, .. }
            | Event::AccrueInterest { market, .. }
            | Event::NewInterestRateModel { market, .. }
            | Event::NewInterestParams { market, .. } => Some(market),
            Event::LiquidateBorrow { repay_market, .. } => Some(repay_market),
            Event::NewCloseFactor { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub key: OrderingKey,
    pub event: Event,
}

impl EventRecord {
    pub fn new(key: OrderingKey, event: Event) -> Self {
        EventRecord { key, event }
    }

    pub fn kind(&self) -> EventKind {
        self.event.kind()
    }

    /// Single-line JSON with keys in sorted order.
    pub fn to_json_line(&self) -> String {
        Value::Object(self.to_json_map()).to_string()
    }

    fn to_json_map(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let s = |v: &dyn fmt::Display| Value::String(v.to_string());
        m.insert("block".into(), self.key.block.into());
        m.insert("tx_index".into(), self.key.tx_index.into());
        m.insert("log_index".into(), self.key.log_index.into());
        m.insert("kind".into(), self.kind().as_str().into());
        if let Some(market) = self.event.market() {
            m.insert("market".into(), s(market));
        }
        match &self.event {
            Event::MarketListed { asset, decimals, initial_exchange_rate, initial_collateral_factor } => {
                m.insert("asset".into(), s(asset));
                m.insert("decimals".into(), (*decimals).into());
                m.insert("initial_exchange_rate".into(), s(initial_exchange_rate));
                m.insert("initial_collateral_factor".into(), s(initial_collateral_factor));
            }
            Event::Mint { account, amount_underlying, amount_ctokens, .. }
            | Event::Redeem { account, amount_underlying, amount_ctokens, .. } => {
                m.insert("account".into(), s(account));
                m.insert("amount_underlying".into(), s(amount_underlying));
                m.insert("amount_ctokens".into(), s(amount_ctokens));
            }
            Event::Borrow { account, amount_underlying, .. } => {
                m.insert("account".into(), s(account));
                m.insert("amount_underlying".into(), s(amount_underlying));
            }
            Event::RepayBorrow { account, payer, amount_underlying, .. } => {
                m.insert("account".into(), s(account));
                m.insert("payer".into(), s(payer));
                m.insert("amount_underlying".into(), s(amount_underlying));
            }
            Event::LiquidateBorrow {
                borrower,
                liquidator,
                repay_market,
                repay_amount_underlying,
                collateral_market,
                seized_ctokens,
            } => {
                m.insert("borrower".into(), s(borrower));
                m.insert("liquidator".into(), s(liquidator));
                m.insert("repay_market".into(), s(repay_market));
                m.insert("repay_amount_underlying".into(), s(repay_amount_underlying));
                m.insert("collateral_market".into(), s(collateral_market));
                m.insert("seized_ctokens".into(), s(seized_ctokens));
            }
            Event::NewCollateralFactor { new_factor, .. } => {
                m.insert("new_factor".into(), s(new_factor));
            }
            Event::AccrueInterest { new_borrow_index, new_exchange_rate, interest_accumulated_underlying, .. } => {
                m.insert("new_borrow_index".into(), s(new_borrow_index));
                m.insert("new_exchange_rate".into(), s(new_exchange_rate));
                m.insert("interest_accumulated_underlying".into(), s(interest_accumulated_underlying));
            }
            Event::NewInterestRateModel { model_id, .. } => {
                m.insert("model_id".into(), model_id.as_str().into());
            }
            Event::NewInterestParams { params_blob, .. } => {
                let blob = params_blob.iter().map(|(k, v)| (k.clone(), s(v))).collect();
                m.insert("params_blob".into(), Value::Object(blob));
            }
            Event::NewCloseFactor { new_close_factor } => {
                m.insert("new_close_factor".into(), s(new_close_factor));
            }
            Event::PriceUpdate { asset, price_usd } => {
                m.insert("asset".into(), s(asset));
                m.insert("price_usd".into(), s(price_usd));
            }
        }
        m
    }
}

/// A problem with one event line, located by JSON field path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("field `{field}`: {message}")]
pub struct EventParseError {
    pub field: String,
    pub message: String,
}

impl EventParseError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        EventParseError { field: field.into(), message: message.into() }
    }
}

/// Two adjacent events whose keys are not strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("event {index} has key {current}, not after previous key {previous}")]
pub struct OrderViolation {
    pub index: usize,
    pub previous: OrderingKey,
    pub current: OrderingKey,
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("line {line}: {error}")]
    Parse { line: usize, error: EventParseError },
    #[error("line {line}: {error}")]
    Order { line: usize, error: OrderViolation },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decimal sign requirement for a payload field.
#[derive(Clone, Copy)]
enum Sign {
    NonNegative,
    Positive,
}

struct Fields {
    map: Map<String, Value>,
}

impl Fields {
    fn take(&mut self, name: &str) -> Result<Value, EventParseError> {
        self.map.remove(name).ok_or_else(|| EventParseError::new(name, "missing field"))
    }

    fn u64(&mut self, name: &str) -> Result<u64, EventParseError> {
        self.take(name)?.as_u64().ok_or_else(|| EventParseError::new(name, "expected a non-negative integer"))
    }

    fn string(&mut self, name: &str) -> Result<String, EventParseError> {
        match self.take(name)? {
            Value::String(s) => Ok(s),
            _ => Err(EventParseError::new(name, "expected a string")),
        }
    }

    fn dec(&mut self, name: &str, sign: Sign) -> Result<Dec, EventParseError> {
        let raw = self.string(name)?;
        let v: Dec = raw.parse().map_err(|e: crate::dec::ParseDecError| EventParseError::new(name, e.to_string()))?;
        check_sign(name, v, sign)
    }

    fn account(&mut self, name: &str) -> Result<AccountId, EventParseError> {
        AccountId::new(self.string(name)?).map_err(|e| EventParseError::new(name, e.to_string()))
    }

    fn asset(&mut self, name: &str) -> Result<AssetId, EventParseError> {
        AssetId::new(self.string(name)?).map_err(|e| EventParseError::new(name, e.to_string()))
    }

    fn optional_asset(&mut self, name: &str) -> Result<Option<AssetId>, EventParseError> {
        if self.map.contains_key(name) {
            self.asset(name).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Reads `primary`, falling back to `market`; both must agree if present.
    fn asset_or_market(&mut self, primary: &str, market: Option<AssetId>) -> Result<AssetId, EventParseError> {
        match (self.optional_asset(primary)?, market) {
            (Some(a), Some(m)) if a != m => {
                Err(EventParseError::new(primary, format!("{a} disagrees with market {m}")))
            }
            (Some(a), _) => Ok(a),
            (None, Some(m)) => Ok(m),
            (None, None) => Err(EventParseError::new(primary, "missing field")),
        }
    }

    fn finish(self) -> Result<(), EventParseError> {
        match self.map.keys().next() {
            Some(extra) => Err(EventParseError::new(extra.clone(), "unknown field")),
            None => Ok(()),
        }
    }
}

fn check_sign(name: &str, v: Dec, sign: Sign) -> Result<Dec, EventParseError> {
    match sign {
        Sign::NonNegative if v.is_negative() => Err(EventParseError::new(name, "must not be negative")),
        Sign::Positive if !v.is_positive() => Err(EventParseError::new(name, "must be positive")),
        _ => Ok(v),
    }
}

fn fraction(name: &str, v: Dec) -> Result<Dec, EventParseError> {
    if v > Dec::ONE {
        return Err(EventParseError::new(name, "must not exceed 1"));
    }
    Ok(v)
}

/// Parses one JSONL event line.
pub fn parse_event_line(line: &str) -> Result<EventRecord, EventParseError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| EventParseError::new("$", format!("malformed JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(EventParseError::new("$", "expected a JSON object"));
    };
    let mut f = Fields { map };
    let key = OrderingKey { block: f.u64("block")?, tx_index: f.u64("tx_index")?, log_index: f.u64("log_index")? };
    let kind_name = f.string("kind")?;
    let kind: EventKind =
        kind_name.parse().map_err(|_| EventParseError::new("kind", format!("unknown event kind {kind_name:?}")))?;
    let market = match kind {
        EventKind::NewCloseFactor => None,
        EventKind::MarketListed | EventKind::PriceUpdate | EventKind::LiquidateBorrow => f.optional_asset("market")?,
        _ => Some(f.asset("market")?),
    };
    let nn = Sign::NonNegative;
    let pos = Sign::Positive;
    let event = match kind {
        EventKind::MarketListed => {
            let asset = f.asset_or_market("asset", market)?;
            let decimals = if f.map.contains_key("decimals") {
                let d = f.u64("decimals")?;
                if d > 18 {
                    return Err(EventParseError::new("decimals", "must be in [0, 18]"));
                }
                d as u8
            } else {
                18
            };
            let initial_exchange_rate = f.dec("initial_exchange_rate", pos)?;
            let cf = f.dec("initial_collateral_factor", nn)?;
            Event::MarketListed {
                asset,
                decimals,
                initial_exchange_rate,
                initial_collateral_factor: fraction("initial_collateral_factor", cf)?,
            }
        }
        EventKind::Mint | EventKind::Redeem => {
            let market = market.expect("market-scoped kind");
            let account = f.account("account")?;
            let amount_underlying = f.dec("amount_underlying", nn)?;
            let amount_ctokens = f.dec("amount_ctokens", nn)?;
            if kind == EventKind::Mint {
                Event::Mint { market, account, amount_underlying, amount_ctokens }
            } else {
                Event::Redeem { market, account, amount_underlying, amount_ctokens }
            }
        }
        EventKind::Borrow => Event::Borrow {
            market: market.expect("market-scoped kind"),
            account: f.account("account")?,
            amount_underlying: f.dec("amount_underlying", nn)?,
        },
        EventKind::RepayBorrow => Event::RepayBorrow {
            market: market.expect("market-scoped kind"),
            account: f.account("account")?,
            payer: f.account("payer")?,
            amount_underlying: f.dec("amount_underlying", nn)?,
        },
        EventKind::LiquidateBorrow => Event::LiquidateBorrow {
            borrower: f.account("borrower")?,
            liquidator: f.account("liquidator")?,
            repay_market: f.asset_or_market("repay_market", market)?,
            repay_amount_underlying: f.dec("repay_amount_underlying", nn)?,
            collateral_market: f.asset("collateral_market")?,
            seized_ctokens: f.dec("seized_ctokens", nn)?,
        },
        EventKind::NewCollateralFactor => {
            let v = f.dec("new_factor", nn)?;
            Event::NewCollateralFactor {
                market: market.expect("market-scoped kind"),
                new_factor: fraction("new_factor", v)?,
            }
        }
        EventKind::AccrueInterest => Event::AccrueInterest {
            market: market.expect("market-scoped kind"),
            new_borrow_index: f.dec("new_borrow_index", pos)?,
            new_exchange_rate: f.dec("new_exchange_rate", pos)?,
            interest_accumulated_underlying: f.dec("interest_accumulated_underlying", nn)?,
        },
        EventKind::NewInterestRateModel => {
            Event::NewInterestRateModel { market: market.expect("market-scoped kind"), model_id: f.string("model_id")? }
        }
        EventKind::NewInterestParams => {
            let Value::Object(blob) = f.take("params_blob")? else {
                return Err(EventParseError::new("params_blob", "expected an object"));
            };
            let mut params_blob = BTreeMap::new();
            for (k, v) in blob {
                let path = format!("params_blob.{k}");
                let Value::String(raw) = v else {
                    return Err(EventParseError::new(path, "expected a decimal string"));
                };
                let d: Dec =
                    raw.parse().map_err(|e: crate::dec::ParseDecError| EventParseError::new(&path, e.to_string()))?;
                params_blob.insert(k, check_sign(&path, d, nn)?);
            }
            Event::NewInterestParams { market: market.expect("market-scoped kind"), params_blob }
        }
        EventKind::NewCloseFactor => {
            let v = f.dec("new_close_factor", nn)?;
            Event::NewCloseFactor { new_close_factor: fraction("new_close_factor", v)? }
        }
        EventKind::PriceUpdate => {
            Event::PriceUpdate { asset: f.asset_or_market("asset", market)?, price_usd: f.dec("price_usd", pos)? }
        }
    };
    f.finish()?;
    Ok(EventRecord { key, event })
}

/// Checks that keys strictly increase.
pub fn validate_stream_order(events: &[EventRecord]) -> Result<(), OrderViolation> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].key <= pair[0].key {
            return Err(OrderViolation { index: i + 1, previous: pair[0].key, current: pair[1].key });
        }
    }
    Ok(())
}

/// Reads a JSONL stream, skipping blank lines, and rejects unsorted input.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<EventRecord>, EventLogError> {
    let mut events: Vec<EventRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_event_line(&line).map_err(|error| EventLogError::Parse { line: line_no, error })?;
        if let Some(prev) = events.last() {
            if record.key <= prev.key {
                let error = OrderViolation { index: events.len(), previous: prev.key, current: record.key };
                return Err(EventLogError::Order { line: line_no, error });
            }
        }
        events.push(record);
    }
    Ok(events)
}

pub fn read_event_file(path: impl AsRef<Path>) -> Result<Vec<EventRecord>, EventLogError> {
    let file = std::fs::File::open(path)?;
    read_events(std::io::BufReader::new(file))
}

pub fn write_events<W: std::io::Write>(mut writer: W, events: &[EventRecord]) -> std::io::Result<()> {
    for e in events {
        writeln!(writer, "{}", e.to_json_line())?;
    }
    Ok(())
}
