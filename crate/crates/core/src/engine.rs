//! State transitions: applies events to a [`GlobalState`] and produces
//! canonical digests of the result.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dec::{ArithmeticError, Dec};
use crate::event::{Event, EventRecord, OrderingKey};
use crate::model::{accrued_borrow_balance, AccountId, AssetId, GlobalState, MarketState, Position};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionErrorKind {
    #[error("event is not after the state cursor {cursor}")]
    OutOfOrder { cursor: OrderingKey },
    #[error("market {0} is not listed")]
    UnknownMarket(AssetId),
    #[error("market {0} is already listed")]
    MarketExists(AssetId),
    #[error("{account} holds {balance} cTokens in {market}, cannot remove {requested}")]
    InsufficientBalance { account: AccountId, market: AssetId, balance: Dec, requested: Dec },
    #[error("{field} of {market} would become negative ({deficit} short)")]
    NegativeTotal { market: AssetId, field: &'static str, deficit: Dec },
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {key}: {kind}")]
pub struct TransitionError {
    pub key: OrderingKey,
    pub kind: Box<TransitionErrorKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WarningKind {
    /// Underlying and cToken amounts disagree with the exchange rate.
    MintInconsistent {
        market: AssetId,
        account: AccountId,
        amount_underlying: Dec,
        implied_underlying: Dec,
    },
    /// Repay exceeded the accrued debt by more than one mantissa unit.
    RepayOvershoot {
        market: AssetId,
        account: AccountId,
        overshoot: Dec,
    },
    BorrowIndexDecreased {
        market: AssetId,
        old: Dec,
        new: Dec,
    },
    ExchangeRateDecreased {
        market: AssetId,
        old: Dec,
        new: Dec,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub key: OrderingKey,
    #[serde(flatten)]
    pub kind: WarningKind,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: ", self.key)?;
        match &self.kind {
            WarningKind::MintInconsistent { market, account, amount_underlying, implied_underlying } => write!(
                f,
                "{account} in {market}: amount_underlying {amount_underlying} but cTokens imply {implied_underlying}"
            ),
            WarningKind::RepayOvershoot { market, account, overshoot } => {
                write!(f, "{account} in {market}: repay exceeds debt by {overshoot}, clamped to zero")
            }
            WarningKind::BorrowIndexDecreased { market, old, new } => {
                write!(f, "{market}: borrow index decreased {old} -> {new}")
            }
            WarningKind::ExchangeRateDecreased { market, old, new } => {
                write!(f, "{market}: exchange rate decreased {old} -> {new}")
            }
        }
    }
}

/// Which health inputs an applied event may have changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// Positions of these accounts changed.
    Accounts(Vec<AccountId>),
    /// A market-wide parameter (index, exchange rate, collateral factor)
    /// changed; every holder of the market is affected.
    Market(AssetId),
    /// The oracle price of this asset changed.
    Price(AssetId),
    /// Nothing that feeds account health changed.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub warnings: Vec<Warning>,
    pub effect: Effect,
}

fn market<'a>(state: &'a GlobalState, asset: &AssetId) -> Result<&'a MarketState, TransitionErrorKind> {
    state.markets.get(asset).ok_or_else(|| TransitionErrorKind::UnknownMarket(asset.clone()))
}

fn position(state: &GlobalState, account: &AccountId, asset: &AssetId) -> Position {
    state.position(account, asset).copied().unwrap_or_default()
}

fn put_position(state: &mut GlobalState, account: &AccountId, asset: &AssetId, pos: Position) {
    state.participants.entry(account.clone()).or_default().insert(asset.clone(), pos);
}

/// Settles accrued interest into the principal at the current index.
fn settled(pos: Position, m: &MarketState) -> Result<Position, ArithmeticError> {
    Ok(Position { borrow_principal: accrued_borrow_balance(&pos, m)?, borrow_index_snapshot: m.borrow_index, ..pos })
}

fn borrower_count(state: &GlobalState, asset: &AssetId) -> i128 {
    state.participants.values().filter(|ps| ps.get(asset).is_some_and(|p| !p.borrow_principal.is_zero())).count()
        as i128
}

/// Planned result of a repay: new position and new market total borrows.
struct RepayPlan {
    position: Position,
    total_borrows: Dec,
    warning: Option<WarningKind>,
}

fn plan_repay(
    state: &GlobalState,
    asset: &AssetId,
    account: &AccountId,
    amount: Dec,
) -> Result<RepayPlan, TransitionErrorKind> {
    let m = market(state, asset)?;
    let mut pos = settled(position(state, account, asset), m)?;
    let applied = amount.min(pos.borrow_principal);
    let overshoot = amount.checked_sub(applied)?;
    let warning = (overshoot > Dec::EPSILON).then(|| WarningKind::RepayOvershoot {
        market: asset.clone(),
        account: account.clone(),
        overshoot,
    });
    pos.borrow_principal = pos.borrow_principal.checked_sub(applied)?;
    let total_borrows = if m.total_borrows >= applied {
        m.total_borrows.checked_sub(applied)?
    } else {
        let deficit = applied.checked_sub(m.total_borrows)?;
        if deficit.mantissa() > borrower_count(state, asset) {
            return Err(TransitionErrorKind::NegativeTotal { market: asset.clone(), field: "total_borrows", deficit });
        }
        Dec::ZERO
    };
    Ok(RepayPlan { position: pos, total_borrows, warning })
}

fn mint_consistency(
    m: &MarketState,
    account: &AccountId,
    amount_underlying: Dec,
    amount_ctokens: Dec,
) -> Result<Option<WarningKind>, ArithmeticError> {
    let implied = amount_ctokens.checked_mul(m.exchange_rate)?;
    // One cToken mantissa unit at the current rate, rounded up, plus one
    // unit for the truncated product.
    let unit_value = (m.exchange_rate.mantissa() + 999_999_999_999_999_999) / 1_000_000_000_000_000_000;
    let tolerance = Dec::from_mantissa(unit_value + 1);
    let diff = amount_underlying.checked_sub(implied)?.abs();
    Ok((diff > tolerance).then(|| WarningKind::MintInconsistent {
        market: m.asset.clone(),
        account: account.clone(),
        amount_underlying,
        implied_underlying: implied,
    }))
}

/// Applies one event. The state is left untouched when an error is returned.
pub fn apply_event(state: &mut GlobalState, record: &EventRecord) -> Result<Applied, TransitionError> {
    let key = record.key;
    let wrap = |kind: TransitionErrorKind| TransitionError { key, kind: Box::new(kind) };
    if let Some(cursor) = state.cursor {
        if key <= cursor {
            return Err(wrap(TransitionErrorKind::OutOfOrder { cursor }));
        }
    }
    let (warnings, effect) = transition(state, &record.event).map_err(wrap)?;
    state.cursor = Some(key);
    let warnings = warnings.into_iter().map(|kind| Warning { key, kind }).collect();
    Ok(Applied { warnings, effect })
}

fn transition(state: &mut GlobalState, event: &Event) -> Result<(Vec<WarningKind>, Effect), TransitionErrorKind> {
    let mut warnings = Vec::new();
    let effect = match event {
        Event::MarketListed { asset, decimals, initial_exchange_rate, initial_collateral_factor } => {
            if state.markets.contains_key(asset) {
                return Err(TransitionErrorKind::MarketExists(asset.clone()));
            }
            let m = MarketState::new(asset.clone(), *decimals, *initial_exchange_rate, *initial_collateral_factor)
                .map_err(|_| ArithmeticError::Overflow)?;
            state.markets.insert(asset.clone(), m);
            Effect::None
        }
        Event::Mint { market: asset, account, amount_underlying, amount_ctokens } => {
            let m = market(state, asset)?;
            warnings.extend(mint_consistency(m, account, *amount_underlying, *amount_ctokens)?);
            let supply = m.total_ctoken_supply.checked_add(*amount_ctokens)?;
            let mut pos = position(state, account, asset);
            pos.ctoken_balance = pos.ctoken_balance.checked_add(*amount_ctokens)?;
            put_position(state, account, asset, pos);
            state.markets.get_mut(asset).expect("checked").total_ctoken_supply = supply;
            Effect::Accounts(vec![account.clone()])
        }
        Event::Redeem { market: asset, account, amount_underlying, amount_ctokens } => {
            let m = market(state, asset)?;
            warnings.extend(mint_consistency(m, account, *amount_underlying, *amount_ctokens)?);
            let mut pos = position(state, account, asset);
            if pos.ctoken_balance < *amount_ctokens {
                return Err(TransitionErrorKind::InsufficientBalance {
                    account: account.clone(),
                    market: asset.clone(),
                    balance: pos.ctoken_balance,
                    requested: *amount_ctokens,
                });
            }
            if m.total_ctoken_supply < *amount_ctokens {
                return Err(TransitionErrorKind::NegativeTotal {
                    market: asset.clone(),
                    field: "total_ctoken_supply",
                    deficit: amount_ctokens.checked_sub(m.total_ctoken_supply)?,
                });
            }
            let supply = m.total_ctoken_supply.checked_sub(*amount_ctokens)?;
            pos.ctoken_balance = pos.ctoken_balance.checked_sub(*amount_ctokens)?;
            put_position(state, account, asset, pos);
            state.markets.get_mut(asset).expect("checked").total_ctoken_supply = supply;
            Effect::Accounts(vec![account.clone()])
        }
        Event::Borrow { market: asset, account, amount_underlying } => {
            let m = market(state, asset)?;
            let mut pos = settled(position(state, account, asset), m)?;
            pos.borrow_principal = pos.borrow_principal.checked_add(*amount_underlying)?;
            let borrows = m.total_borrows.checked_add(*amount_underlying)?;
            put_position(state, account, asset, pos);
            state.markets.get_mut(asset).expect("checked").total_borrows = borrows;
            Effect::Accounts(vec![account.clone()])
        }
        Event::RepayBorrow { market: asset, account, amount_underlying, .. } => {
            let plan = plan_repay(state, asset, account, *amount_underlying)?;
            warnings.extend(plan.warning);
            put_position(state, account, asset, plan.position);
            state.markets.get_mut(asset).expect("checked").total_borrows = plan.total_borrows;
            Effect::Accounts(vec![account.clone()])
        }
        Event::LiquidateBorrow {
            borrower,
            liquidator,
            repay_market,
            repay_amount_underlying,
            collateral_market,
            seized_ctokens,
        } => {
            market(state, collateral_market)?;
            let plan = plan_repay(state, repay_market, borrower, *repay_amount_underlying)?;
            // The repay may touch the same position as the seizure.
            let mut seized_from = if repay_market == collateral_market {
                plan.position
            } else {
                position(state, borrower, collateral_market)
            };
            if seized_from.ctoken_balance < *seized_ctokens {
                return Err(TransitionErrorKind::InsufficientBalance {
                    account: borrower.clone(),
                    market: collateral_market.clone(),
                    balance: seized_from.ctoken_balance,
                    requested: *seized_ctokens,
                });
            }
            seized_from.ctoken_balance = seized_from.ctoken_balance.checked_sub(*seized_ctokens)?;
            warnings.extend(plan.warning);
            put_position(state, borrower, repay_market, plan.position);
            put_position(state, borrower, collateral_market, seized_from);
            let mut to = position(state, liquidator, collateral_market);
            to.ctoken_balance = to.ctoken_balance.checked_add(*seized_ctokens)?;
            put_position(state, liquidator, collateral_market, to);
            state.markets.get_mut(repay_market).expect("checked").total_borrows = plan.total_borrows;
            Effect::Accounts(vec![borrower.clone(), liquidator.clone()])
        }
        Event::NewCollateralFactor { market: asset, new_factor } => {
            market(state, asset)?;
            state.markets.get_mut(asset).expect("checked").collateral_factor = *new_factor;
            Effect::Market(asset.clone())
        }
        Event::AccrueInterest {
            market: asset,
            new_borrow_index,
            new_exchange_rate,
            interest_accumulated_underlying,
        } => {
            let m = market(state, asset)?;
            if *new_borrow_index < m.borrow_index {
                warnings.push(WarningKind::BorrowIndexDecreased {
                    market: asset.clone(),
                    old: m.borrow_index,
                    new: *new_borrow_index,
                });
            }
            if *new_exchange_rate < m.exchange_rate {
                warnings.push(WarningKind::ExchangeRateDecreased {
                    market: asset.clone(),
                    old: m.exchange_rate,
                    new: *new_exchange_rate,
                });
            }
            let borrows = m.total_borrows.checked_add(*interest_accumulated_underlying)?;
            let m = state.markets.get_mut(asset).expect("checked");
            m.borrow_index = *new_borrow_index;
            m.exchange_rate = *new_exchange_rate;
            m.total_borrows = borrows;
            Effect::Market(asset.clone())
        }
        Event::NewInterestRateModel { market: asset, model_id } => {
            market(state, asset)?;
            state.markets.get_mut(asset).expect("checked").interest_model.model_id = model_id.clone();
            Effect::None
        }
        Event::NewInterestParams { market: asset, params_blob } => {
            market(state, asset)?;
            state.markets.get_mut(asset).expect("checked").interest_model.params = params_blob.clone();
            Effect::None
        }
        Event::NewCloseFactor { new_close_factor } => {
            state.params.close_factor = *new_close_factor;
            Effect::None
        }
        Event::PriceUpdate { asset, price_usd } => {
            market(state, asset)?;
            state.prices.set(asset.clone(), *price_usd);
            Effect::Price(asset.clone())
        }
    };
    Ok((warnings, effect))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub events_applied: usize,
    pub final_cursor: Option<OrderingKey>,
    pub warnings: Vec<Warning>,
    pub digest: String,
}

#[derive(Debug, Clone, Error)]
#[error("replay stopped after {} events: {error}", report.events_applied)]
pub struct ReplayError {
    /// Progress up to, not including, the failing event.
    pub report: ReplayReport,
    pub error: TransitionError,
}

/// Applies `events` in order. On failure the state holds every event before
/// the failing one.
pub fn replay(state: &mut GlobalState, events: &[EventRecord]) -> Result<ReplayReport, ReplayError> {
    let mut warnings = Vec::new();
    for (i, record) in events.iter().enumerate() {
        match apply_event(state, record) {
            Ok(applied) => warnings.extend(applied.warnings),
            Err(error) => {
                let report = ReplayReport {
                    events_applied: i,
                    final_cursor: state.cursor,
                    warnings,
                    digest: state_digest(state),
                };
                return Err(ReplayError { report, error });
            }
        }
    }
    Ok(ReplayReport { events_applied: events.len(), final_cursor: state.cursor, warnings, digest: state_digest(state) })
}

/// Canonical JSON form of the state: object keys sorted, decimals as
/// strings, no insignificant whitespace.
pub fn canonical_state_json(state: &GlobalState) -> String {
    serde_json::to_value(state).expect("state serializes").to_string()
}

/// Hex SHA-256 of [`canonical_state_json`].
pub fn state_digest(state: &GlobalState) -> String {
    hex::encode(Sha256::digest(canonical_state_json(state).as_bytes()))
}
