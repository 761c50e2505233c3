//! Replay-level metrics: how long liquidable positions wait before being
//! liquidated, how concentrated supply and borrows are, and how supplied,
//! borrowed and locked funds evolve.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dec::{ArithmeticError, Dec};
use crate::engine::{apply_event, Applied, Effect, TransitionError};
use crate::event::{Event, EventRecord, OrderingKey};
use crate::model::{accrued_borrow_balance, AccountId, AssetId, GlobalState};
use crate::risk::{account_health, RiskError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("event {key}: {error}")]
    Risk { key: OrderingKey, error: RiskError },
    #[error(transparent)]
    Evaluation(#[from] RiskError),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
    #[error("sampling stride must be at least 1")]
    Stride,
    #[error("top_n must be at least 1")]
    TopN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "key", rename_all = "snake_case")]
pub enum StreakEnd {
    Liquidated(OrderingKey),
    /// Surplus returned to zero or above.
    Recovered(OrderingKey),
    Open,
}

/// A continuous stretch during which an account was liquidable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Streak {
    pub account: AccountId,
    pub start: OrderingKey,
    pub end: StreakEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiquidationRecord {
    pub account: AccountId,
    pub key: OrderingKey,
    /// Start of the streak the liquidation closed, if one was open.
    pub streak_start: Option<OrderingKey>,
    /// Liquidation block minus streak start block.
    pub blocks_elapsed: u64,
    /// Seized cTokens valued at the exchange rate and price in force at the
    /// liquidation.
    pub seized_value_usd: Dec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EfficiencyWarning {
    pub key: OrderingKey,
    pub account: AccountId,
    pub message: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EfficiencyTimeline {
    pub streaks: Vec<Streak>,
    pub liquidations: Vec<LiquidationRecord>,
    pub warnings: Vec<EfficiencyWarning>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrackerConfig {
    /// Re-evaluate every account after every event instead of only those
    /// whose health inputs changed. Results are identical; this exists so
    /// tests can check that.
    pub full_reevaluation: bool,
}

/// Follows a replay event by event, opening a streak when an account's
/// surplus turns negative and closing it on liquidation or recovery.
///
/// A liquidation closes the open streak; if the account is still liquidable
/// afterwards a new streak starts at the liquidation itself.
#[derive(Debug, Clone)]
pub struct EfficiencyTracker {
    config: TrackerConfig,
    open: BTreeMap<AccountId, OrderingKey>,
    holders: BTreeMap<AssetId, BTreeSet<AccountId>>,
    timeline: EfficiencyTimeline,
}

impl EfficiencyTracker {
    /// Accounts already liquidable in `state` start with a streak at the
    /// state cursor.
    pub fn new(state: &GlobalState, config: TrackerConfig) -> Result<Self, AnalyticsError> {
        let mut tracker =
            EfficiencyTracker { config, open: BTreeMap::new(), holders: BTreeMap::new(), timeline: Default::default() };
        let start = state.cursor.unwrap_or_default();
        for account in state.participants.keys() {
            tracker.index_holder(state, account);
            if account_health(state, account)?.is_liquidable() {
                tracker.open.insert(account.clone(), start);
            }
        }
        Ok(tracker)
    }

    /// Accounts with an open streak.
    pub fn liquidable(&self) -> impl Iterator<Item = &AccountId> {
        self.open.keys()
    }

    pub fn timeline(&self) -> &EfficiencyTimeline {
        &self.timeline
    }

    fn index_holder(&mut self, state: &GlobalState, account: &AccountId) {
        let Some(positions) = state.participants.get(account) else { return };
        for (asset, pos) in positions {
            let set = self.holders.entry(asset.clone()).or_default();
            if pos.is_empty() {
                set.remove(account);
            } else {
                set.insert(account.clone());
            }
        }
    }

    fn seized_value(state: &GlobalState, market: &AssetId, ctokens: Dec) -> Result<Dec, RiskError> {
        let m = state.markets.get(market).ok_or_else(|| RiskError::UnknownMarket(market.clone()))?;
        let price = state.prices.get(market).ok_or_else(|| RiskError::MissingPrice(market.clone()))?;
        Ok(ctokens.checked_mul(m.exchange_rate)?.checked_mul(price)?)
    }

    /// Applies `record` to `state` and updates streaks.
    pub fn step(&mut self, state: &mut GlobalState, record: &EventRecord) -> Result<Applied, AnalyticsError> {
        let key = record.key;
        let risk = |error| AnalyticsError::Risk { key, error };
        let pending = match &record.event {
            Event::LiquidateBorrow { borrower, collateral_market, seized_ctokens, .. } => {
                Some((borrower.clone(), Self::seized_value(state, collateral_market, *seized_ctokens).map_err(risk)?))
            }
            _ => None,
        };
        let applied = apply_event(state, record)?;

        if let Some((account, seized_value_usd)) = pending {
            let streak_start = self.open.remove(&account);
            let blocks_elapsed = match streak_start {
                Some(start) => {
                    self.timeline.streaks.push(Streak {
                        account: account.clone(),
                        start,
                        end: StreakEnd::Liquidated(key),
                    });
                    key.block.saturating_sub(start.block)
                }
                None => {
                    self.timeline.warnings.push(EfficiencyWarning {
                        key,
                        account: account.clone(),
                        message: "not-liquidable-at-engine-precision",
                    });
                    0
                }
            };
            self.timeline.liquidations.push(LiquidationRecord {
                account,
                key,
                streak_start,
                blocks_elapsed,
                seized_value_usd,
            });
        }

        if let Effect::Accounts(accounts) = &applied.effect {
            for a in accounts {
                self.index_holder(state, a);
            }
        }
        let dirty: Vec<AccountId> = if self.config.full_reevaluation {
            state.participants.keys().cloned().collect()
        } else {
            match &applied.effect {
                Effect::Accounts(accounts) => accounts.clone(),
                Effect::Market(asset) | Effect::Price(asset) => {
                    self.holders.get(asset).map(|s| s.iter().cloned().collect()).unwrap_or_default()
                }
                Effect::None => Vec::new(),
            }
        };
        for account in dirty {
            let liquidable = account_health(state, &account).map_err(risk)?.is_liquidable();
            match (liquidable, self.open.contains_key(&account)) {
                (true, false) => {
                    self.open.insert(account, key);
                }
                (false, true) => {
                    let start = self.open.remove(&account).expect("present");
                    self.timeline.streaks.push(Streak { account, start, end: StreakEnd::Recovered(key) });
                }
                _ => {}
            }
        }
        Ok(applied)
    }

    /// Ends tracking; streaks still open are reported with [`StreakEnd::Open`].
    pub fn finish(mut self) -> EfficiencyTimeline {
        for (account, start) in self.open {
            self.timeline.streaks.push(Streak { account, start, end: StreakEnd::Open });
        }
        self.timeline
    }
}

/// Replays `events` onto `state`, tracking liquidable streaks and the delay
/// of every liquidation.
pub fn track_efficiency(
    state: &mut GlobalState,
    events: &[EventRecord],
    config: TrackerConfig,
) -> Result<EfficiencyTimeline, AnalyticsError> {
    let mut tracker = EfficiencyTracker::new(state, config)?;
    for record in events {
        tracker.step(state, record)?;
    }
    Ok(tracker.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Weighting {
    /// Weighted by seized collateral value.
    Value,
    /// Each liquidation counts once.
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CdfPoint {
    pub blocks: u64,
    pub cumulative_fraction: Dec,
}

/// Cumulative distribution of liquidation delay in blocks, one point per
/// distinct delay. When every seized value is zero, value weighting falls
/// back to counting.
pub fn efficiency_cdf(timeline: &EfficiencyTimeline, weighting: Weighting) -> Result<Vec<CdfPoint>, ArithmeticError> {
    let records = &timeline.liquidations;
    let value_total = Dec::checked_sum(records.iter().map(|r| r.seized_value_usd))?;
    let by_count = weighting == Weighting::Count || value_total.is_zero();
    let mut mass: BTreeMap<u64, Dec> = BTreeMap::new();
    for r in records {
        let w = if by_count { Dec::ONE } else { r.seized_value_usd };
        let slot = mass.entry(r.blocks_elapsed).or_insert(Dec::ZERO);
        *slot = slot.checked_add(w)?;
    }
    let total = if by_count { Dec::from_int(records.len() as i64) } else { value_total };
    let mut cumulative = Dec::ZERO;
    let mut out = Vec::with_capacity(mass.len());
    for (blocks, w) in mass {
        cumulative = cumulative.checked_add(w)?;
        out.push(CdfPoint { blocks, cumulative_fraction: cumulative.checked_div(total)? });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Supply,
    Borrow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConcentrationRow {
    pub rank: usize,
    pub account: AccountId,
    pub value_usd: Dec,
    pub share: Dec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Concentration {
    pub side: Side,
    pub top_n: usize,
    pub top1_share: Dec,
    pub top_n_share: Dec,
    pub total_usd: Dec,
    /// Set when the side's total is zero; shares are then reported as 0.
    pub zero_total: bool,
    pub rows: Vec<ConcentrationRow>,
}

/// USD value each account contributes to one side of the protocol; accounts
/// with nothing on that side are omitted.
pub fn account_values(state: &GlobalState, side: Side) -> Result<Vec<(AccountId, Dec)>, RiskError> {
    let mut out = Vec::new();
    for (account, positions) in &state.participants {
        let mut total = Dec::ZERO;
        for (asset, pos) in positions {
            let amount = match side {
                Side::Supply if !pos.ctoken_balance.is_zero() => {
                    let m = state.markets.get(asset).ok_or_else(|| RiskError::UnknownMarket(asset.clone()))?;
                    pos.ctoken_balance.checked_mul(m.exchange_rate)?
                }
                Side::Borrow if !pos.borrow_principal.is_zero() => {
                    let m = state.markets.get(asset).ok_or_else(|| RiskError::UnknownMarket(asset.clone()))?;
                    accrued_borrow_balance(pos, m)?
                }
                _ => continue,
            };
            let price = state.prices.get(asset).ok_or_else(|| RiskError::MissingPrice(asset.clone()))?;
            total = total.checked_add(amount.checked_mul(price)?)?;
        }
        if !total.is_zero() {
            out.push((account.clone(), total));
        }
    }
    Ok(out)
}

/// Shares of the largest account and of the `top_n` largest accounts in
/// total supplied or borrowed value.
pub fn concentration(state: &GlobalState, side: Side, top_n: usize) -> Result<Concentration, AnalyticsError> {
    if top_n == 0 {
        return Err(AnalyticsError::TopN);
    }
    let mut values = account_values(state, side)?;
    values.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total = Dec::checked_sum(values.iter().map(|(_, v)| *v))?;
    let zero_total = total.is_zero();
    let share = |v: Dec| if zero_total { Ok(Dec::ZERO) } else { v.checked_div(total) };
    let top_value = Dec::checked_sum(values.iter().take(top_n).map(|(_, v)| *v))?;
    let top1_value = values.first().map_or(Dec::ZERO, |(_, v)| *v);
    let rows = values
        .into_iter()
        .enumerate()
        .map(|(i, (account, value_usd))| {
            Ok(ConcentrationRow { rank: i + 1, account, value_usd, share: share(value_usd)? })
        })
        .collect::<Result<Vec<_>, ArithmeticError>>()?;
    Ok(Concentration {
        side,
        top_n,
        top1_share: share(top1_value)?,
        top_n_share: share(top_value)?,
        total_usd: total,
        zero_total,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FundsRow {
    pub block: u64,
    pub supplied_usd: Dec,
    pub borrowed_usd: Dec,
    /// Supplied minus borrowed; negative when borrows exceed supply.
    pub locked_usd: Dec,
}

/// Protocol-wide supplied, borrowed and locked value at current prices.
pub fn funds_at(state: &GlobalState, block: u64) -> Result<FundsRow, RiskError> {
    let mut supplied = Dec::ZERO;
    let mut borrowed = Dec::ZERO;
    for (asset, m) in &state.markets {
        if m.total_ctoken_supply.is_zero() && m.total_borrows.is_zero() {
            continue;
        }
        let price = state.prices.get(asset).ok_or_else(|| RiskError::MissingPrice(asset.clone()))?;
        supplied = supplied.checked_add(m.total_ctoken_supply.checked_mul(m.exchange_rate)?.checked_mul(price)?)?;
        borrowed = borrowed.checked_add(m.total_borrows.checked_mul(price)?)?;
    }
    Ok(FundsRow { block, supplied_usd: supplied, borrowed_usd: borrowed, locked_usd: supplied.checked_sub(borrowed)? })
}

/// Replays `events` onto `state`, sampling funds after every `stride`-th
/// block starting at the first event's block. The last block is always
/// sampled. An empty stream yields a single row for the initial state.
pub fn funds_time_series(
    state: &mut GlobalState,
    events: &[EventRecord],
    stride: u64,
) -> Result<Vec<FundsRow>, AnalyticsError> {
    if stride == 0 {
        return Err(AnalyticsError::Stride);
    }
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        let block = state.cursor.map_or(0, |c| c.block);
        return Ok(vec![funds_at(state, block)?]);
    };
    let last_block = last.key.block;
    let mut rows = Vec::new();
    let mut next = first.key.block;
    for record in events {
        while record.key.block > next {
            rows.push(funds_at(state, next).map_err(|error| AnalyticsError::Risk { key: record.key, error })?);
            next = next.saturating_add(stride);
        }
        apply_event(state, record)?;
    }
    while next <= last_block {
        rows.push(funds_at(state, next)?);
        next = next.saturating_add(stride);
    }
    if rows.last().map(|r| r.block) != Some(last_block) {
        rows.push(funds_at(state, last_block)?);
    }
    Ok(rows)
}
