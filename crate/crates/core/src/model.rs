//! Protocol state records: markets, participant positions, the oracle price
//! table and protocol-wide parameters.
//!
//! All maps are `BTreeMap`s, so iteration order (and therefore serialization
//! and digests) is canonical: markets by symbol, accounts by address.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dec::{ArithmeticError, Dec};
use crate::event::OrderingKey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("invalid asset symbol {0:?}: expected 1-32 characters of A-Z, 0-9, '.', '-' or '_'")]
    Asset(String),
    #[error("invalid account address {0:?}: expected \"0x\" followed by 40 hex digits")]
    Account(String),
    #[error("asset decimals {0} outside [0, 18]")]
    Decimals(u8),
}

/// Underlying asset symbol, e.g. `DAI`. Identifies a market.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssetId(String);

impl AssetId {
    pub fn new(symbol: impl Into<String>) -> Result<Self, IdError> {
        let symbol = symbol.into();
        let ok = !symbol.is_empty()
            && symbol.len() <= 32
            && symbol.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b"._-".contains(&b));
        if ok {
            Ok(AssetId(symbol))
        } else {
            Err(IdError::Asset(symbol))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AssetId {
    type Error = IdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AssetId::new(s)
    }
}

impl From<AssetId> for String {
    fn from(id: AssetId) -> String {
        id.0
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A 20-byte account address, stored lowercase with its `0x` prefix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AccountId(String);

impl AccountId {
    /// Accepts mixed-case hex and normalizes it to lowercase.
    pub fn new(address: impl Into<String>) -> Result<Self, IdError> {
        let address = address.into();
        let ok = address.len() == 42
            && address.starts_with("0x")
            && address.as_bytes()[2..].iter().all(u8::is_ascii_hexdigit);
        if ok {
            Ok(AccountId(address.to_ascii_lowercase()))
        } else {
            Err(IdError::Account(address))
        }
    }

    /// Address whose low 64 bits are `n` and the leading byte is `tag`.
    /// Used for synthetic accounts.
    pub fn synthetic(tag: u8, n: u64) -> Self {
        AccountId(format!("0x{tag:02x}{:022x}{n:016x}", 0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AccountId {
    type Error = IdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AccountId::new(s)
    }
}

impl From<AccountId> for String {
    fn from(id: AccountId) -> String {
        id.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Close factor and liquidation incentive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Largest fraction of a borrow a liquidator may repay in one call.
    pub close_factor: Dec,
    /// Seized-value premium over repaid value (0.08 means 8% extra).
    pub liquidation_incentive: Dec,
}

impl ProtocolParams {
    pub fn is_valid(&self) -> bool {
        self.close_factor >= Dec::ZERO && self.close_factor <= Dec::ONE && self.liquidation_incentive >= Dec::ZERO
    }
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            close_factor: Dec::from_mantissa(500_000_000_000_000_000),
            liquidation_incentive: Dec::from_mantissa(80_000_000_000_000_000),
        }
    }
}

/// Interest rate model metadata. Carried along but never evaluated: index
/// and exchange-rate movements arrive through accrual events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestModel {
    pub model_id: String,
    pub params: BTreeMap<String, Dec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketState {
    pub asset: AssetId,
    /// Native fractional digits of the underlying token.
    pub decimals: u8,
    pub interest_model: InterestModel,
    /// Total borrows, underlying units.
    pub total_borrows: Dec,
    /// Total cToken supply.
    pub total_ctoken_supply: Dec,
    pub collateral_factor: Dec,
    pub borrow_index: Dec,
    /// Underlying units per cToken.
    pub exchange_rate: Dec,
}

impl MarketState {
    pub fn new(asset: AssetId, decimals: u8, exchange_rate: Dec, collateral_factor: Dec) -> Result<Self, IdError> {
        if decimals > 18 {
            return Err(IdError::Decimals(decimals));
        }
        Ok(MarketState {
            asset,
            decimals,
            interest_model: InterestModel::default(),
            total_borrows: Dec::ZERO,
            total_ctoken_supply: Dec::ZERO,
            collateral_factor,
            borrow_index: Dec::ONE,
            exchange_rate,
        })
    }
}

/// One participant's holdings in one market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub ctoken_balance: Dec,
    pub borrow_principal: Dec,
    /// Market borrow index when the principal was last settled.
    pub borrow_index_snapshot: Dec,
}

impl Default for Position {
    fn default() -> Self {
        Position { ctoken_balance: Dec::ZERO, borrow_principal: Dec::ZERO, borrow_index_snapshot: Dec::ONE }
    }
}

impl Position {
    pub fn is_empty(&self) -> bool {
        self.ctoken_balance.is_zero() && self.borrow_principal.is_zero()
    }
}

/// Debt including interest accrued since the position's index snapshot:
/// `principal * borrow_index / snapshot`, truncated once.
pub fn accrued_borrow_balance(position: &Position, market: &MarketState) -> Result<Dec, ArithmeticError> {
    if position.borrow_principal.is_zero() {
        return Ok(Dec::ZERO);
    }
    position.borrow_principal.checked_mul_div(market.borrow_index, position.borrow_index_snapshot)
}

/// Oracle prices, USD per whole unit of underlying.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub prices: BTreeMap<AssetId, Dec>,
}

impl PriceTable {
    pub fn get(&self, asset: &AssetId) -> Option<Dec> {
        self.prices.get(asset).copied()
    }

    pub fn set(&mut self, asset: AssetId, price: Dec) {
        self.prices.insert(asset, price);
    }
}

pub type Positions = BTreeMap<AssetId, Position>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalState {
    pub markets: BTreeMap<AssetId, MarketState>,
    pub participants: BTreeMap<AccountId, Positions>,
    pub prices: PriceTable,
    pub params: ProtocolParams,
    /// Key of the last applied event.
    pub cursor: Option<OrderingKey>,
}

impl GlobalState {
    pub fn new(params: ProtocolParams) -> Self {
        GlobalState { params, ..Default::default() }
    }

    pub fn position(&self, account: &AccountId, asset: &AssetId) -> Option<&Position> {
        self.participants.get(account)?.get(asset)
    }

    pub fn accrued_borrow(&self, account: &AccountId, asset: &AssetId) -> Result<Dec, ArithmeticError> {
        match (self.position(account, asset), self.markets.get(asset)) {
            (Some(p), Some(m)) => accrued_borrow_balance(p, m),
            _ => Ok(Dec::ZERO),
        }
    }
}

/// A broken supply or borrow conservation law.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Market cToken supply differs from the sum of participant balances.
    Supply { market: AssetId, expected: Dec, actual: Dec },
    /// Market total borrows differs from the sum of accrued participant
    /// borrows by more than `slack`.
    Borrows { market: AssetId, expected: Dec, actual: Dec, slack: Dec },
    /// A sum could not be formed.
    Overflow { market: AssetId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Supply { market, expected, actual } => {
                write!(f, "{market}: cToken supply {actual} != sum of balances {expected}")
            }
            Violation::Borrows { market, expected, actual, slack } => {
                write!(f, "{market}: total borrows {actual} != sum of accrued borrows {expected} (slack {slack})")
            }
            Violation::Overflow { market } => write!(f, "{market}: overflow while summing positions"),
        }
    }
}

/// Per-market sums over participant positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PositionSums {
    pub ctokens: Dec,
    pub accrued_borrows: Dec,
    pub borrowers: u64,
}

/// Recomputes supply and borrow totals for every market from participant
/// positions.
pub fn position_sums(state: &GlobalState) -> BTreeMap<AssetId, Result<PositionSums, ArithmeticError>> {
    let mut sums: BTreeMap<AssetId, Result<PositionSums, ArithmeticError>> =
        state.markets.keys().map(|a| (a.clone(), Ok(PositionSums::default()))).collect();
    for positions in state.participants.values() {
        for (asset, pos) in positions {
            let entry = sums.entry(asset.clone()).or_insert(Ok(PositionSums::default()));
            let Ok(acc) = entry else { continue };
            let accrued = match state.markets.get(asset) {
                Some(m) => accrued_borrow_balance(pos, m),
                None => Ok(pos.borrow_principal),
            };
            let next = accrued.and_then(|accrued| {
                Ok(PositionSums {
                    ctokens: acc.ctokens.checked_add(pos.ctoken_balance)?,
                    accrued_borrows: acc.accrued_borrows.checked_add(accrued)?,
                    borrowers: acc.borrowers + u64::from(!pos.borrow_principal.is_zero()),
                })
            });
            *entry = next;
        }
    }
    sums
}

/// Checks supply conservation exactly and borrow conservation within one
/// mantissa unit per borrower in the market.
pub fn validate_state(state: &GlobalState) -> Vec<Violation> {
    let mut out = Vec::new();
    for (asset, sums) in position_sums(state) {
        let Ok(sums) = sums else {
            out.push(Violation::Overflow { market: asset });
            continue;
        };
        let (supply, borrows) = match state.markets.get(&asset) {
            Some(m) => (m.total_ctoken_supply, m.total_borrows),
            None => (Dec::ZERO, Dec::ZERO),
        };
        if supply != sums.ctokens {
            out.push(Violation::Supply { market: asset.clone(), expected: sums.ctokens, actual: supply });
        }
        let slack = Dec::from_mantissa(sums.borrowers as i128);
        let diff = borrows.checked_sub(sums.accrued_borrows).map(Dec::abs);
        if !matches!(diff, Ok(d) if d <= slack) {
            out.push(Violation::Borrows { market: asset, expected: sums.accrued_borrows, actual: borrows, slack });
        }
    }
    out
}
