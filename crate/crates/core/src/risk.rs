//! Account health, liquidation bounds and price-shock analysis.
//!
//! Per market an account holds `ctokens` of supply and owes an accrued
//! borrow. Values are built in a fixed order so results are reproducible:
//!
//! ```text
//! collateral value = (ctokens * exchange_rate) * price
//! collateral power = collateral value * collateral_factor
//! borrow value     = accrued_borrow * price
//! ```
//!
//! An account is liquidable when the summed power is strictly below the summed
//! borrow value. Supply interest lives in the exchange rate and is therefore
//! weighted by the collateral factor along with the principal.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dec::{ArithmeticError, Dec};
use crate::model::{accrued_borrow_balance, AccountId, AssetId, GlobalState, Positions, PriceTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RiskError {
    #[error("no oracle price for {0}")]
    MissingPrice(AssetId),
    #[error("market {0} is not listed")]
    UnknownMarket(AssetId),
    #[error("shock {0} outside [0, 1)")]
    InvalidShock(Dec),
    #[error("ratio thresholds must be strictly increasing and greater than 1")]
    InvalidThresholds,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccountHealth {
    pub collateral_power_usd: Dec,
    pub borrow_value_usd: Dec,
    pub surplus_usd: Dec,
    pub collateral_value_usd: Dec,
    /// `collateral_power / borrow_value`; `None` without borrows.
    pub ratio: Option<Dec>,
}

impl AccountHealth {
    pub fn is_liquidable(&self) -> bool {
        self.surplus_usd.is_negative()
    }
}

/// Price lookup with an optional single-asset override.
#[derive(Clone, Copy)]
struct Prices<'a> {
    table: &'a PriceTable,
    shocked: Option<(&'a AssetId, Dec)>,
}

impl Prices<'_> {
    fn get(&self, asset: &AssetId) -> Result<Dec, RiskError> {
        match self.shocked {
            Some((a, p)) if a == asset => Ok(p),
            _ => self.table.get(asset).ok_or_else(|| RiskError::MissingPrice(asset.clone())),
        }
    }
}

fn health_of(state: &GlobalState, positions: &Positions, prices: Prices<'_>) -> Result<AccountHealth, RiskError> {
    let mut power = Dec::ZERO;
    let mut borrowed = Dec::ZERO;
    let mut value = Dec::ZERO;
    for (asset, pos) in positions {
        if pos.is_empty() {
            continue;
        }
        let market = state.markets.get(asset).ok_or_else(|| RiskError::UnknownMarket(asset.clone()))?;
        let price = prices.get(asset)?;
        if !pos.ctoken_balance.is_zero() {
            let v = pos.ctoken_balance.checked_mul(market.exchange_rate)?.checked_mul(price)?;
            value = value.checked_add(v)?;
            power = power.checked_add(v.checked_mul(market.collateral_factor)?)?;
        }
        if !pos.borrow_principal.is_zero() {
            let owed = accrued_borrow_balance(pos, market)?;
            borrowed = borrowed.checked_add(owed.checked_mul(price)?)?;
        }
    }
    let ratio = if borrowed.is_zero() { None } else { Some(power.checked_div(borrowed)?) };
    Ok(AccountHealth {
        collateral_power_usd: power,
        borrow_value_usd: borrowed,
        surplus_usd: power.checked_sub(borrowed)?,
        collateral_value_usd: value,
        ratio,
    })
}

/// Health of one account at the state's oracle prices. Unknown accounts have
/// all-zero health.
pub fn account_health(state: &GlobalState, account: &AccountId) -> Result<AccountHealth, RiskError> {
    match state.participants.get(account) {
        Some(positions) => health_of(state, positions, Prices { table: &state.prices, shocked: None }),
        None => Ok(AccountHealth::default()),
    }
}

/// Health of an account with `asset` repriced to `price`.
pub fn account_health_at(
    state: &GlobalState,
    account: &AccountId,
    asset: &AssetId,
    price: Dec,
) -> Result<AccountHealth, RiskError> {
    match state.participants.get(account) {
        Some(positions) => health_of(state, positions, Prices { table: &state.prices, shocked: Some((asset, price)) }),
        None => Ok(AccountHealth::default()),
    }
}

/// Every account whose surplus is negative, ordered by address.
pub fn liquidable_accounts(state: &GlobalState) -> Result<Vec<(AccountId, AccountHealth)>, RiskError> {
    liquidable_under(state, Prices { table: &state.prices, shocked: None })
}

fn liquidable_under(state: &GlobalState, prices: Prices<'_>) -> Result<Vec<(AccountId, AccountHealth)>, RiskError> {
    let mut out = Vec::new();
    for (account, positions) in &state.participants {
        let h = health_of(state, positions, prices)?;
        if h.is_liquidable() {
            out.push((account.clone(), h));
        }
    }
    Ok(out)
}

/// Largest repay a liquidator may make in one call: close factor times the
/// borrower's accrued debt in `market`.
pub fn max_repay(state: &GlobalState, borrower: &AccountId, market: &AssetId) -> Result<Dec, RiskError> {
    if !state.markets.contains_key(market) {
        return Err(RiskError::UnknownMarket(market.clone()));
    }
    let owed = state.accrued_borrow(borrower, market)?;
    Ok(state.params.close_factor.checked_mul(owed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeizeQuote {
    pub seized_value_usd: Dec,
    pub seized_ctokens: Dec,
    pub liquidator_profit_usd: Dec,
}

fn check_positive(v: Dec, name: &'static str) -> Result<(), RiskError> {
    if v.is_positive() {
        Ok(())
    } else {
        Err(RiskError::NonPositive(name))
    }
}

/// Collateral seized for repaying `repay_value_usd` of debt with incentive
/// `incentive` (seized value = repay value * (1 + incentive)).
pub fn seize_quote(
    repay_value_usd: Dec,
    incentive: Dec,
    collateral_price_usd: Dec,
    exchange_rate: Dec,
) -> Result<SeizeQuote, RiskError> {
    check_positive(repay_value_usd, "repay value")?;
    check_positive(collateral_price_usd, "collateral price")?;
    check_positive(exchange_rate, "exchange rate")?;
    if incentive.is_negative() {
        return Err(RiskError::NonPositive("incentive"));
    }
    let profit = repay_value_usd.checked_mul(incentive)?;
    let seized_value = repay_value_usd.checked_add(profit)?;
    Ok(SeizeQuote {
        seized_value_usd: seized_value,
        seized_ctokens: seized_value.checked_div_product(collateral_price_usd, exchange_rate)?,
        liquidator_profit_usd: profit,
    })
}

/// Same quote expressed as buying collateral at a discount: seized value =
/// repay value / (1 - discount), the equivalent of incentive
/// `discount / (1 - discount)`. A 10% discount is an incentive of 1/9,
/// which has no exact 18-digit form, so this entry point keeps such quotes
/// exact.
pub fn seize_quote_at_discount(
    repay_value_usd: Dec,
    discount: Dec,
    collateral_price_usd: Dec,
    exchange_rate: Dec,
) -> Result<SeizeQuote, RiskError> {
    check_positive(repay_value_usd, "repay value")?;
    check_positive(collateral_price_usd, "collateral price")?;
    check_positive(exchange_rate, "exchange rate")?;
    if discount.is_negative() || discount >= Dec::ONE {
        return Err(RiskError::InvalidShock(discount));
    }
    let seized_value = repay_value_usd.checked_div(Dec::ONE.checked_sub(discount)?)?;
    Ok(SeizeQuote {
        seized_value_usd: seized_value,
        seized_ctokens: seized_value.checked_div_product(collateral_price_usd, exchange_rate)?,
        liquidator_profit_usd: seized_value.checked_sub(repay_value_usd)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SensitivityRow {
    pub shock: Dec,
    /// Unweighted collateral value, at shocked prices, of accounts that are
    /// liquidable under the shock.
    pub liquidable_collateral_usd: Dec,
    pub liquidable_accounts: usize,
}

/// For each shock `s`, reprices `asset` to `price * (1 - s)` and sums the
/// collateral of every account that is then liquidable.
pub fn price_sensitivity(
    state: &GlobalState,
    asset: &AssetId,
    shocks: &[Dec],
) -> Result<Vec<SensitivityRow>, RiskError> {
    let base = state.prices.get(asset).ok_or_else(|| RiskError::MissingPrice(asset.clone()))?;
    if let Some(bad) = shocks.iter().find(|s| s.is_negative() || **s >= Dec::ONE) {
        return Err(RiskError::InvalidShock(*bad));
    }
    shocks
        .iter()
        .map(|&shock| {
            let price = base.checked_mul(Dec::ONE.checked_sub(shock)?)?;
            let prices = Prices { table: &state.prices, shocked: Some((asset, price)) };
            let liquidable = liquidable_under(state, prices)?;
            let total = Dec::checked_sum(liquidable.iter().map(|(_, h)| h.collateral_value_usd))?;
            Ok(SensitivityRow { shock, liquidable_collateral_usd: total, liquidable_accounts: liquidable.len() })
        })
        .collect()
}

/// Collateral-ratio bucket of an account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RatioBucket {
    /// Negative surplus.
    Liquidable,
    /// `lower < ratio <= upper`.
    Range { lower: Dec, upper: Dec },
    /// `ratio > lower`.
    Above { lower: Dec },
    /// No outstanding borrows; ratio undefined.
    NoBorrow,
}

impl fmt::Display for RatioBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioBucket::Liquidable => f.write_str("<1.00"),
            RatioBucket::Range { lower, upper } => {
                write!(f, "({}, {}]", lower.to_string_min_frac(2), upper.to_string_min_frac(2))
            }
            RatioBucket::Above { lower } => write!(f, ">{}", lower.to_string_min_frac(2)),
            RatioBucket::NoBorrow => f.write_str("no-borrow"),
        }
    }
}

/// Partitions every account's collateral value by collateral ratio. All
/// buckets are present in the result, empty ones with zero.
pub fn ratio_buckets(state: &GlobalState, thresholds: &[Dec]) -> Result<BTreeMap<RatioBucket, Dec>, RiskError> {
    if thresholds.first().is_some_and(|t| *t <= Dec::ONE) || thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RiskError::InvalidThresholds);
    }
    let mut buckets = BTreeMap::new();
    buckets.insert(RatioBucket::Liquidable, Dec::ZERO);
    let mut lower = Dec::ONE;
    for &upper in thresholds {
        buckets.insert(RatioBucket::Range { lower, upper }, Dec::ZERO);
        lower = upper;
    }
    buckets.insert(RatioBucket::Above { lower }, Dec::ZERO);
    buckets.insert(RatioBucket::NoBorrow, Dec::ZERO);

    for account in state.participants.keys() {
        let h = account_health(state, account)?;
        let bucket = match h.ratio {
            None => RatioBucket::NoBorrow,
            Some(_) if h.is_liquidable() => RatioBucket::Liquidable,
            Some(ratio) => {
                let mut lower = Dec::ONE;
                let mut found = None;
                for &upper in thresholds {
                    if ratio <= upper {
                        found = Some(RatioBucket::Range { lower, upper });
                        break;
                    }
                    lower = upper;
                }
                found.unwrap_or(RatioBucket::Above { lower })
            }
        };
        let slot = buckets.get_mut(&bucket).expect("bucket pre-populated");
        *slot = slot.checked_add(h.collateral_value_usd)?;
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarketState, Position};

    fn d(s: &str) -> Dec {
        s.parse().unwrap()
    }

    fn asset(s: &str) -> AssetId {
        AssetId::new(s).unwrap()
    }

    fn acct(n: u64) -> AccountId {
        AccountId::synthetic(0xaa, n)
    }

    /// DAI (rate 0.02, cf 0.75, $1) and ETH (rate 1, cf 0.75, $100) markets.
    fn base_state() -> GlobalState {
        let mut s = GlobalState::default();
        for (sym, rate, price) in [("DAI", "0.02", "1"), ("ETH", "1", "100")] {
            s.markets.insert(asset(sym), MarketState::new(asset(sym), 18, d(rate), d("0.75")).unwrap());
            s.prices.set(asset(sym), d(price));
        }
        s
    }

    fn set(s: &mut GlobalState, who: AccountId, sym: &str, ctokens: &str, principal: &str) {
        let p =
            Position { ctoken_balance: d(ctokens), borrow_principal: d(principal), borrow_index_snapshot: Dec::ONE };
        s.participants.entry(who).or_default().insert(asset(sym), p);
    }

    #[test]
    fn borrow_capacity_example() {
        let mut s = base_state();
        set(&mut s, acct(1), "DAI", "500", "0");
        let h = account_health(&s, &acct(1)).unwrap();
        assert_eq!(h.collateral_power_usd, d("7.5"));
        assert_eq!(h.collateral_value_usd, d("10"));
        assert_eq!(h.ratio, None);
        assert!(!h.is_liquidable());
    }

    #[test]
    fn empty_account_is_healthy() {
        let s = base_state();
        assert_eq!(account_health(&s, &acct(7)).unwrap(), AccountHealth::default());
        assert!(!AccountHealth::default().is_liquidable());
        assert!(liquidable_accounts(&s).unwrap().is_empty());
    }

    #[test]
    fn negative_surplus_is_liquidable() {
        // ETH collateral: 1 * 100 * 0.75 = 75; DAI debt 80.
        let mut s = base_state();
        set(&mut s, acct(1), "ETH", "1", "0");
        set(&mut s, acct(1), "DAI", "0", "80");
        let h = account_health(&s, &acct(1)).unwrap();
        assert_eq!((h.collateral_power_usd, h.borrow_value_usd, h.surplus_usd), (d("75"), d("80"), d("-5")));
        assert!(h.is_liquidable());
        assert_eq!(liquidable_accounts(&s).unwrap(), vec![(acct(1), h)]);
    }

    #[test]
    fn missing_price_names_asset() {
        let mut s = base_state();
        set(&mut s, acct(1), "ETH", "1", "0");
        s.prices.prices.remove(&asset("ETH"));
        assert_eq!(account_health(&s, &acct(1)), Err(RiskError::MissingPrice(asset("ETH"))));
    }

    #[test]
    fn max_repay_examples() {
        let mut s = base_state();
        set(&mut s, acct(1), "DAI", "0", "200");
        assert_eq!(max_repay(&s, &acct(1), &asset("DAI")).unwrap(), d("100"));
        s.params.close_factor = Dec::ZERO;
        assert_eq!(max_repay(&s, &acct(1), &asset("DAI")).unwrap(), Dec::ZERO);
        s.params.close_factor = Dec::ONE;
        assert_eq!(max_repay(&s, &acct(1), &asset("DAI")).unwrap(), d("200"));
        assert_eq!(max_repay(&s, &acct(2), &asset("DAI")).unwrap(), Dec::ZERO);
        assert!(max_repay(&s, &acct(1), &asset("WBTC")).is_err());
    }

    #[test]
    fn seize_examples() {
        let q = seize_quote(d("100"), d("0.08"), d("2"), d("0.02")).unwrap();
        assert_eq!((q.seized_value_usd, q.seized_ctokens, q.liquidator_profit_usd), (d("108"), d("2700"), d("8")));
        let q = seize_quote(d("100"), Dec::ZERO, d("2"), d("0.02")).unwrap();
        assert_eq!((q.seized_value_usd, q.liquidator_profit_usd), (d("100"), Dec::ZERO));
        assert!(seize_quote(d("100"), d("0.08"), Dec::ZERO, d("0.02")).is_err());
        assert!(seize_quote(d("100"), d("0.08"), d("1"), Dec::ZERO).is_err());

        let q = seize_quote_at_discount(d("1350000"), d("0.1"), d("1"), d("1")).unwrap();
        assert_eq!((q.seized_value_usd, q.liquidator_profit_usd), (d("1500000"), d("150000")));
        // Incentive 1/9 truncated to 18 digits lands within 1e-12 of the same profit.
        let ninth = Dec::ratio(1, 9).unwrap();
        let q = seize_quote(d("1350000"), ninth, d("1"), d("1")).unwrap();
        assert!(d("150000").checked_sub(q.liquidator_profit_usd).unwrap() < d("0.000000000001"));
    }

    #[test]
    fn sensitivity_threshold() {
        // ETH collateral 1 -> power 75; debt 75/1.02 so the ratio is 1.02.
        let mut s = base_state();
        set(&mut s, acct(1), "ETH", "1", "0");
        let debt = d("75").checked_div(d("1.02")).unwrap();
        set(&mut s, acct(1), "DAI", "0", &debt.to_string());
        let h = account_health(&s, &acct(1)).unwrap();
        assert_eq!(h.ratio, Some(d("1.02")));
        let rows = price_sensitivity(&s, &asset("ETH"), &[Dec::ZERO, d("0.01"), d("0.03")]).unwrap();
        let counts: Vec<_> = rows.iter().map(|r| r.liquidable_accounts).collect();
        assert_eq!(counts, vec![0, 0, 1]);
        assert_eq!(rows[2].liquidable_collateral_usd, d("97"));
        assert_eq!(s.prices.get(&asset("ETH")), Some(d("100")));
        assert!(price_sensitivity(&s, &asset("ETH"), &[Dec::ONE]).is_err());
        assert!(price_sensitivity(&s, &asset("WBTC"), &[Dec::ZERO]).is_err());
    }

    #[test]
    fn buckets() {
        let mut s = base_state();
        // ratio 1.04
        set(&mut s, acct(1), "ETH", "1", "0");
        set(&mut s, acct(1), "DAI", "0", &d("75").checked_div(d("1.04")).unwrap().to_string());
        // liquidable
        set(&mut s, acct(2), "ETH", "1", "0");
        set(&mut s, acct(2), "DAI", "0", "80");
        // no borrow
        set(&mut s, acct(3), "DAI", "500", "0");
        // ratio 2
        set(&mut s, acct(4), "ETH", "2", "0");
        set(&mut s, acct(4), "DAI", "0", "75");
        let b = ratio_buckets(&s, &[d("1.05"), d("1.25")]).unwrap();
        let labels: Vec<_> = b.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        assert_eq!(
            labels,
            vec![
                ("<1.00".to_string(), "100".to_string()),
                ("(1.00, 1.05]".to_string(), "100".to_string()),
                ("(1.05, 1.25]".to_string(), "0".to_string()),
                (">1.25".to_string(), "200".to_string()),
                ("no-borrow".to_string(), "10".to_string()),
            ]
        );
        let total =
            Dec::checked_sum(s.participants.keys().map(|a| account_health(&s, a).unwrap().collateral_value_usd));
        assert_eq!(Dec::checked_sum(b.values().copied()), total);
        assert!(ratio_buckets(&s, &[d("1.25"), d("1.05")]).is_err());
        assert!(ratio_buckets(&s, &[d("1")]).is_err());
    }
}
