//! Deterministic synthetic event streams with ground-truth annotations.
//!
//! Randomness comes from ChaCha8 seeded with `ChaCha8Rng::seed_from_u64`
//! (rand_core's PCG32 seed expansion). Only `next_u64` is drawn; integers in
//! `[0, n)` are `next_u64() % n` and unit fractions are
//! `(next_u64() % (10^18 + 1)) * 10^-18`. The same seed therefore yields the
//! same bytes on every platform.
//!
//! The generator keeps its own brute-force model of balances and health,
//! written independently of the state engine, and reports from it:
//! per-checkpoint liquidable sets and supply/borrow sums, every liquidation
//! with its delay since the account became liquidable, and planted
//! concentration targets.
//!
//! Stream layout: block 1 lists every market, prices it and sets the close
//! factor. Planned liquidations get an isolated collateral market
//! (`PLAN<k>`) and borrow from a shared flat-priced market (`PLANUSD`), so
//! nothing but the planned price drop can move their health. Later blocks
//! hold 1-4 random actions (mint, borrow, repay, redeem, price moves,
//! interest accrual, occasional parameter changes). Natural liquidations
//! are scheduled whenever an account turns liquidable, after a random delay
//! of zero or more blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::Side;
use crate::dec::{ArithmeticError, Dec};
use crate::event::{write_events, Event, EventRecord, OrderingKey};
use crate::model::{AccountId, AssetId, IdError};

const SETUP_BLOCK: u64 = 1;
const REGULAR_TAG: u8 = 0xaa;
const LIQUIDATOR_TAG: u8 = 0x11;
const WHALE_TAG: u8 = 0xee;
const LIQUIDATORS: u64 = 3;
const PLAN_DEBT: &str = "PLANUSD";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn infeasible<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Infeasible(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricePath {
    pub initial: Dec,
    /// Largest fractional move of one random price update; 0 keeps the
    /// price flat apart from `schedule`.
    #[serde(default)]
    pub volatility: Dec,
    /// Prices forced at the start of the given blocks.
    #[serde(default)]
    pub schedule: Vec<(u64, Dec)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub asset: AssetId,
    pub initial_exchange_rate: Dec,
    pub collateral_factor: Dec,
    pub price: PricePath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedLiquidation {
    pub account: AccountId,
    /// Block whose first event makes the account liquidable.
    pub liquidable_block: u64,
    pub liquidation_block: u64,
}

/// Target value shares for dedicated top accounts on one side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedConcentration {
    pub side: Side,
    /// Non-increasing shares, each in (0, 1), summing to less than 1.
    pub shares: Vec<Dec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub markets: Vec<MarketSpec>,
    /// Number of randomly acting accounts.
    pub accounts: u64,
    /// Target stream length; planned and scheduled events may add a few more.
    pub event_count: usize,
    #[serde(default)]
    pub planned_liquidations: Vec<PlannedLiquidation>,
    #[serde(default)]
    pub planned_concentration: Option<PlannedConcentration>,
    /// Checkpoint annotations are written after every block divisible by
    /// this and after the final block.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_incentive")]
    pub liquidation_incentive: Dec,
}

fn default_checkpoint_every() -> u64 {
    10
}

fn default_incentive() -> Dec {
    Dec::from_mantissa(80_000_000_000_000_000)
}

impl ScenarioSpec {
    /// Three volatile markets (DAI, ETH, WBTC) with the given seed and size.
    pub fn standard(seed: u64, accounts: u64, event_count: usize) -> Self {
        let market = |sym: &str, rate: &str, cf: &str, price: &str, vol: &str| MarketSpec {
            asset: AssetId::new(sym).expect("valid symbol"),
            initial_exchange_rate: rate.parse().expect("valid decimal"),
            collateral_factor: cf.parse().expect("valid decimal"),
            price: PricePath {
                initial: price.parse().expect("valid decimal"),
                volatility: vol.parse().expect("valid decimal"),
                schedule: Vec::new(),
            },
        };
        ScenarioSpec {
            seed,
            markets: vec![
                market("DAI", "0.02", "0.75", "1", "0.002"),
                market("ETH", "0.02", "0.75", "350", "0.08"),
                market("WBTC", "0.02", "0.6", "11000", "0.06"),
            ],
            accounts,
            event_count,
            planned_liquidations: Vec::new(),
            planned_concentration: None,
            checkpoint_every: default_checkpoint_every(),
            liquidation_incentive: default_incentive(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketAggregates {
    /// Sum of participant cToken balances.
    pub total_ctoken_supply: Dec,
    /// Sum of participant accrued borrows.
    pub total_borrows: Dec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// State after every event of this block and earlier.
    pub block: u64,
    pub liquidable: Vec<AccountId>,
    pub markets: BTreeMap<AssetId, MarketAggregates>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedLiquidation {
    pub account: AccountId,
    pub key: OrderingKey,
    pub blocks_elapsed: u64,
    pub seized_value_usd: Dec,
    pub planned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedConcentration {
    pub side: Side,
    pub accounts: Vec<AccountId>,
    pub shares: Vec<Dec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotations {
    pub seed: u64,
    pub event_count: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub liquidations: Vec<ExpectedLiquidation>,
    pub concentration: Option<ExpectedConcentration>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub events: Vec<EventRecord>,
    pub annotations: Annotations,
}

impl Scenario {
    pub fn events_jsonl(&self) -> String {
        let mut out = Vec::new();
        write_events(&mut out, &self.events).expect("writing to memory");
        String::from_utf8(out).expect("utf-8")
    }

    pub fn annotations_json(&self) -> String {
        let value = serde_json::to_value(&self.annotations).expect("annotations serialize");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn write_files(
        &self,
        events_path: impl AsRef<Path>,
        annotations_path: impl AsRef<Path>,
    ) -> Result<(), ScenarioError> {
        std::fs::write(events_path, self.events_jsonl())?;
        std::fs::write(annotations_path, self.annotations_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ShadowMarket {
    rate: Dec,
    index: Dec,
    cf: Dec,
    price: Dec,
}

#[derive(Debug, Clone, Copy, Default)]
struct ShadowPos {
    ctokens: Dec,
    principal: Dec,
    snapshot: Dec,
}

#[derive(Debug, Clone, Copy, Default)]
struct ShadowHealth {
    power: Dec,
    debt: Dec,
    value: Dec,
}

impl ShadowHealth {
    fn liquidable(&self) -> bool {
        self.power < self.debt
    }
}

/// Brute-force balance model driving the generator.
#[derive(Debug, Default)]
struct Shadow {
    markets: BTreeMap<AssetId, ShadowMarket>,
    positions: BTreeMap<AccountId, BTreeMap<AssetId, ShadowPos>>,
    close_factor: Dec,
}

impl Shadow {
    fn pos(&self, account: &AccountId, asset: &AssetId) -> ShadowPos {
        self.positions
            .get(account)
            .and_then(|p| p.get(asset))
            .copied()
            .unwrap_or(ShadowPos { snapshot: Dec::ONE, ..Default::default() })
    }

    fn pos_mut(&mut self, account: &AccountId, asset: &AssetId) -> &mut ShadowPos {
        self.positions
            .entry(account.clone())
            .or_default()
            .entry(asset.clone())
            .or_insert(ShadowPos { snapshot: Dec::ONE, ..Default::default() })
    }

    fn owed(&self, pos: &ShadowPos, asset: &AssetId) -> Result<Dec, ArithmeticError> {
        if pos.principal.is_zero() {
            return Ok(Dec::ZERO);
        }
        pos.principal.checked_mul_div(self.markets[asset].index, pos.snapshot)
    }

    fn health(&self, account: &AccountId) -> Result<ShadowHealth, ArithmeticError> {
        let mut h = ShadowHealth::default();
        let Some(positions) = self.positions.get(account) else { return Ok(h) };
        for (asset, pos) in positions {
            let m = &self.markets[asset];
            if !pos.ctokens.is_zero() {
                let v = pos.ctokens.checked_mul(m.rate)?.checked_mul(m.price)?;
                h.value = h.value.checked_add(v)?;
                h.power = h.power.checked_add(v.checked_mul(m.cf)?)?;
            }
            let owed = self.owed(pos, asset)?;
            if !owed.is_zero() {
                h.debt = h.debt.checked_add(owed.checked_mul(m.price)?)?;
            }
        }
        Ok(h)
    }

    fn aggregates(&self) -> Result<BTreeMap<AssetId, MarketAggregates>, ArithmeticError> {
        let mut out: BTreeMap<AssetId, MarketAggregates> = self
            .markets
            .keys()
            .map(|a| (a.clone(), MarketAggregates { total_ctoken_supply: Dec::ZERO, total_borrows: Dec::ZERO }))
            .collect();
        for positions in self.positions.values() {
            for (asset, pos) in positions {
                let agg = out.get_mut(asset).expect("listed");
                agg.total_ctoken_supply = agg.total_ctoken_supply.checked_add(pos.ctokens)?;
                agg.total_borrows = agg.total_borrows.checked_add(self.owed(pos, asset)?)?;
            }
        }
        Ok(out)
    }

    fn borrow_total(&self, asset: &AssetId) -> Result<Dec, ArithmeticError> {
        let mut sum = Dec::ZERO;
        for positions in self.positions.values() {
            if let Some(pos) = positions.get(asset) {
                sum = sum.checked_add(self.owed(pos, asset)?)?;
            }
        }
        Ok(sum)
    }

    fn settle(&mut self, account: &AccountId, asset: &AssetId) -> Result<(), ArithmeticError> {
        let index = self.markets[asset].index;
        let p = self.pos(account, asset);
        let owed = self.owed(&p, asset)?;
        let slot = self.pos_mut(account, asset);
        slot.principal = owed;
        slot.snapshot = index;
        Ok(())
    }

    fn apply(&mut self, event: &Event) -> Result<(), ArithmeticError> {
        match event {
            Event::MarketListed { asset, initial_exchange_rate, initial_collateral_factor, .. } => {
                self.markets.insert(
                    asset.clone(),
                    ShadowMarket {
                        rate: *initial_exchange_rate,
                        index: Dec::ONE,
                        cf: *initial_collateral_factor,
                        price: Dec::ZERO,
                    },
                );
            }
            Event::Mint { market, account, amount_ctokens, .. } => {
                let p = self.pos_mut(account, market);
                p.ctokens = p.ctokens.checked_add(*amount_ctokens)?;
            }
            Event::Redeem { market, account, amount_ctokens, .. } => {
                let p = self.pos_mut(account, market);
                p.ctokens = p.ctokens.checked_sub(*amount_ctokens)?;
            }
            Event::Borrow { market, account, amount_underlying } => {
                self.settle(account, market)?;
                let p = self.pos_mut(account, market);
                p.principal = p.principal.checked_add(*amount_underlying)?;
            }
            Event::RepayBorrow { market, account, amount_underlying, .. } => {
                self.settle(account, market)?;
                let p = self.pos_mut(account, market);
                p.principal = p.principal.checked_sub(*amount_underlying)?;
            }
            Event::LiquidateBorrow {
                borrower,
                liquidator,
                repay_market,
                repay_amount_underlying,
                collateral_market,
                seized_ctokens,
            } => {
                self.settle(borrower, repay_market)?;
                let p = self.pos_mut(borrower, repay_market);
                p.principal = p.principal.checked_sub(*repay_amount_underlying)?;
                let c = self.pos_mut(borrower, collateral_market);
                c.ctokens = c.ctokens.checked_sub(*seized_ctokens)?;
                let l = self.pos_mut(liquidator, collateral_market);
                l.ctokens = l.ctokens.checked_add(*seized_ctokens)?;
            }
            Event::NewCollateralFactor { market, new_factor } => {
                self.markets.get_mut(market).expect("listed").cf = *new_factor;
            }
            Event::AccrueInterest { market, new_borrow_index, new_exchange_rate, .. } => {
                let m = self.markets.get_mut(market).expect("listed");
                m.index = *new_borrow_index;
                m.rate = *new_exchange_rate;
            }
            Event::NewCloseFactor { new_close_factor } => self.close_factor = *new_close_factor,
            Event::PriceUpdate { asset, price_usd } => {
                self.markets.get_mut(asset).expect("listed").price = *price_usd;
            }
            Event::NewInterestRateModel { .. } | Event::NewInterestParams { .. } => {}
        }
        Ok(())
    }
}

struct Rng(ChaCha8Rng);

impl Rng {
    fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }

    /// Uniform in `[0, 1]` with 18-digit resolution.
    fn unit(&mut self) -> Dec {
        Dec::from_mantissa((self.0.next_u64() % 1_000_000_000_000_000_001) as i128)
    }

    /// Uniform in `[lo, hi]`.
    fn between(&mut self, lo: Dec, hi: Dec) -> Result<Dec, ArithmeticError> {
        lo.checked_add(hi.checked_sub(lo)?.checked_mul(self.unit())?)
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            None
        } else {
            Some(&items[self.below(items.len() as u64) as usize])
        }
    }
}

fn dec(s: &str) -> Dec {
    s.parse().expect("valid decimal literal")
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    rng: Rng,
    shadow: Shadow,
    events: Vec<EventRecord>,
    block: u64,
    tx: u64,
    regular: Vec<AccountId>,
    liquidators: Vec<AccountId>,
    planned_accounts: BTreeSet<AccountId>,
    regular_markets: Vec<AssetId>,
    initial_prices: BTreeMap<AssetId, Dec>,
    volatility: BTreeMap<AssetId, Dec>,
    /// Accounts with at least one outstanding borrow.
    borrowers: BTreeSet<AccountId>,
    /// Accounts that have held a position in each market.
    holders: BTreeMap<AssetId, BTreeSet<AccountId>>,
    /// Currently liquidable accounts and when they became so.
    open: BTreeMap<AccountId, OrderingKey>,
    /// Natural liquidations waiting for their block.
    pending: BTreeMap<AccountId, u64>,
    liquidations: Vec<ExpectedLiquidation>,
    checkpoints: Vec<Checkpoint>,
}

impl<'a> Generator<'a> {
    fn emit(&mut self, event: Event) -> Result<(), ScenarioError> {
        let key = OrderingKey::new(self.block, self.tx, 0);
        self.tx += 1;
        let liquidation = match &event {
            Event::LiquidateBorrow { borrower, collateral_market, seized_ctokens, .. } => {
                let m = self.shadow.markets[collateral_market];
                Some((borrower.clone(), seized_ctokens.checked_mul(m.rate)?.checked_mul(m.price)?))
            }
            _ => None,
        };
        self.shadow.apply(&event)?;
        let reevaluate = !matches!(
            event,
            Event::NewInterestRateModel { .. } | Event::NewInterestParams { .. } | Event::NewCloseFactor { .. }
        );
        if let Some((account, seized_value_usd)) = liquidation {
            let start = self.open.remove(&account);
            let blocks_elapsed = start.map_or(0, |s| key.block - s.block);
            self.liquidations.push(ExpectedLiquidation {
                planned: self.planned_accounts.contains(&account),
                account,
                key,
                blocks_elapsed,
                seized_value_usd,
            });
        }
        match &event {
            Event::Mint { market, account, .. } | Event::Redeem { market, account, .. } => {
                self.holders.entry(market.clone()).or_default().insert(account.clone());
            }
            Event::LiquidateBorrow { liquidator, collateral_market, .. } => {
                self.holders.entry(collateral_market.clone()).or_default().insert(liquidator.clone());
            }
            _ => {}
        }
        match &event {
            Event::Borrow { market, account, .. } => {
                self.holders.entry(market.clone()).or_default().insert(account.clone());
                self.borrowers.insert(account.clone());
            }
            Event::RepayBorrow { account, .. } | Event::LiquidateBorrow { borrower: account, .. } => {
                let has_debt = self.shadow.positions[account].values().any(|p| !p.principal.is_zero());
                if !has_debt {
                    self.borrowers.remove(account);
                }
            }
            _ => {}
        }
        self.events.push(EventRecord::new(key, event));
        if reevaluate {
            let candidates = self.affected(&self.events.last().expect("just pushed").event);
            self.refresh_streaks(key, candidates)?;
        }
        Ok(())
    }

    /// Accounts whose health the event can change: the ones it names, or for
    /// market-wide events every borrower holding that market. Open streaks
    /// are always included.
    fn affected(&self, event: &Event) -> BTreeSet<AccountId> {
        let mut out: BTreeSet<AccountId> = self.open.keys().cloned().collect();
        match event {
            Event::Mint { account, .. }
            | Event::Redeem { account, .. }
            | Event::Borrow { account, .. }
            | Event::RepayBorrow { account, .. } => {
                out.insert(account.clone());
            }
            Event::LiquidateBorrow { borrower, liquidator, .. } => {
                out.insert(borrower.clone());
                out.insert(liquidator.clone());
            }
            Event::PriceUpdate { asset: market, .. }
            | Event::AccrueInterest { market, .. }
            | Event::NewCollateralFactor { market, .. } => {
                if let Some(holders) = self.holders.get(market) {
                    out.extend(holders.intersection(&self.borrowers).cloned());
                }
            }
            _ => {}
        }
        out
    }

    fn refresh_streaks(&mut self, key: OrderingKey, candidates: BTreeSet<AccountId>) -> Result<(), ScenarioError> {
        for account in candidates {
            let liquidable = self.shadow.health(&account)?.liquidable();
            if liquidable && !self.open.contains_key(&account) {
                self.open.insert(account.clone(), key);
                if !self.planned_accounts.contains(&account) {
                    let delay = self.liquidation_delay();
                    self.pending.entry(account).or_insert(key.block + delay);
                }
            } else if !liquidable {
                self.open.remove(&account);
            }
        }
        Ok(())
    }

    /// Skewed toward same-block liquidations with a long tail.
    fn liquidation_delay(&mut self) -> u64 {
        match self.rng.below(100) {
            0..=54 => 0,
            55..=74 => 1,
            75..=84 => 2,
            85..=92 => 3 + self.rng.below(14),
            _ => 17 + self.rng.below(24),
        }
    }

    fn setup(&mut self) -> Result<(), ScenarioError> {
        let plan_debt = AssetId::new(PLAN_DEBT)?;
        for m in &self.spec.markets {
            self.emit(Event::MarketListed {
                asset: m.asset.clone(),
                decimals: 18,
                initial_exchange_rate: m.initial_exchange_rate,
                initial_collateral_factor: m.collateral_factor,
            })?;
            self.emit(Event::PriceUpdate { asset: m.asset.clone(), price_usd: m.price.initial })?;
        }
        self.emit(Event::NewCloseFactor { new_close_factor: dec("0.5") })?;
        if self.spec.planned_liquidations.is_empty() {
            return Ok(());
        }
        self.emit(Event::MarketListed {
            asset: plan_debt.clone(),
            decimals: 18,
            initial_exchange_rate: Dec::ONE,
            initial_collateral_factor: Dec::ZERO,
        })?;
        self.emit(Event::PriceUpdate { asset: plan_debt.clone(), price_usd: Dec::ONE })?;
        for (k, plan) in self.spec.planned_liquidations.iter().enumerate() {
            let collateral = plan_market(k)?;
            self.emit(Event::MarketListed {
                asset: collateral.clone(),
                decimals: 18,
                initial_exchange_rate: Dec::ONE,
                initial_collateral_factor: dec("0.8"),
            })?;
            self.emit(Event::PriceUpdate { asset: collateral.clone(), price_usd: Dec::ONE })?;
            // Power 800 against debt 640: ratio 1.25 until the price drop.
            self.emit(Event::Mint {
                market: collateral,
                account: plan.account.clone(),
                amount_underlying: Dec::from_int(1000),
                amount_ctokens: Dec::from_int(1000),
            })?;
            self.emit(Event::Borrow {
                market: plan_debt.clone(),
                account: plan.account.clone(),
                amount_underlying: Dec::from_int(640),
            })?;
        }
        Ok(())
    }

    fn planned_events(&mut self) -> Result<(), ScenarioError> {
        let plan_debt = AssetId::new(PLAN_DEBT)?;
        for (k, plan) in self.spec.planned_liquidations.iter().enumerate() {
            let collateral = plan_market(k)?;
            if plan.liquidable_block == self.block {
                self.emit(Event::PriceUpdate { asset: collateral.clone(), price_usd: dec("0.7") })?;
                if !self.open.contains_key(&plan.account) {
                    return infeasible(format!("planned account {} did not become liquidable", plan.account));
                }
            }
            if plan.liquidation_block == self.block {
                if !self.open.contains_key(&plan.account) {
                    return infeasible(format!(
                        "planned account {} is not liquidable at block {}",
                        plan.account, self.block
                    ));
                }
                self.liquidate(&plan.account, &plan_debt, &collateral, Dec::ONE)?;
            }
        }
        Ok(())
    }

    /// Repays `fraction` of the close-factor maximum and seizes the matching
    /// collateral, capped at the borrower's balance.
    fn liquidate(
        &mut self,
        borrower: &AccountId,
        debt: &AssetId,
        collateral: &AssetId,
        fraction: Dec,
    ) -> Result<(), ScenarioError> {
        let owed = self.shadow.owed(&self.shadow.pos(borrower, debt), debt)?;
        let debt_price = self.shadow.markets[debt].price;
        let c = self.shadow.markets[collateral];
        let balance = self.shadow.pos(borrower, collateral).ctokens;
        let bonus = Dec::ONE.checked_add(self.spec.liquidation_incentive)?;
        let mut repay = self.shadow.close_factor.checked_mul(owed)?.checked_mul(fraction)?;
        let seized_value = repay.checked_mul(debt_price)?.checked_mul(bonus)?;
        let mut seized = seized_value.checked_div_product(c.price, c.rate)?;
        if seized > balance {
            seized = balance;
            let available = balance.checked_mul(c.rate)?.checked_mul(c.price)?;
            repay = available.checked_div_product(bonus, debt_price)?.min(owed);
        }
        if repay.is_zero() || seized.is_zero() {
            return Ok(());
        }
        let liquidator = self.rng.pick(&self.liquidators).expect("liquidators exist").clone();
        self.emit(Event::LiquidateBorrow {
            borrower: borrower.clone(),
            liquidator,
            repay_market: debt.clone(),
            repay_amount_underlying: repay,
            collateral_market: collateral.clone(),
            seized_ctokens: seized,
        })
    }

    fn due_liquidations(&mut self) -> Result<(), ScenarioError> {
        let due: Vec<AccountId> =
            self.pending.iter().filter(|(_, b)| **b <= self.block).map(|(a, _)| a.clone()).collect();
        for account in due {
            self.pending.remove(&account);
            if !self.open.contains_key(&account) {
                continue;
            }
            let (Some(debt), Some(collateral)) =
                (self.largest(&account, Side::Borrow)?, self.largest(&account, Side::Supply)?)
            else {
                continue;
            };
            let fraction = if self.rng.below(10) < 7 { Dec::ONE } else { self.rng.between(dec("0.3"), Dec::ONE)? };
            self.liquidate(&account, &debt, &collateral, fraction)?;
            // Still liquidable: the streak restarted, so queue another.
            if self.open.contains_key(&account) && !self.pending.contains_key(&account) {
                let delay = self.liquidation_delay().max(1);
                self.pending.insert(account, self.block + delay);
            }
        }
        Ok(())
    }

    /// Market with the largest USD value on `side` for the account.
    fn largest(&self, account: &AccountId, side: Side) -> Result<Option<AssetId>, ArithmeticError> {
        let mut best: Option<(Dec, AssetId)> = None;
        let Some(positions) = self.shadow.positions.get(account) else { return Ok(None) };
        for (asset, pos) in positions {
            let m = &self.shadow.markets[asset];
            let v = match side {
                Side::Supply => pos.ctokens.checked_mul(m.rate)?.checked_mul(m.price)?,
                Side::Borrow => self.shadow.owed(pos, asset)?.checked_mul(m.price)?,
            };
            if v.is_positive() && best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, asset.clone()));
            }
        }
        Ok(best.map(|(_, a)| a))
    }

    fn scheduled_prices(&mut self) -> Result<(), ScenarioError> {
        let updates: Vec<(AssetId, Dec)> = self
            .spec
            .markets
            .iter()
            .flat_map(|m| m.price.schedule.iter().filter(|(b, _)| *b == self.block).map(|(_, p)| (m.asset.clone(), *p)))
            .collect();
        for (asset, price_usd) in updates {
            self.emit(Event::PriceUpdate { asset, price_usd })?;
        }
        Ok(())
    }

    fn random_action(&mut self) -> Result<(), ScenarioError> {
        let roll = self.rng.below(100);
        let done = match roll {
            0..=17 => false,
            18..=42 => self.try_borrow()?,
            43..=54 => self.try_repay()?,
            55..=64 => self.try_redeem()?,
            65..=84 => self.price_move()?,
            85..=96 => self.accrue()?,
            _ => self.parameter_change(roll)?,
        };
        if !done {
            self.mint()?;
        }
        Ok(())
    }

    fn mint(&mut self) -> Result<(), ScenarioError> {
        let account = self.rng.pick(&self.regular).expect("accounts exist").clone();
        let market = self.rng.pick(&self.regular_markets).expect("markets exist").clone();
        let m = self.shadow.markets[&market];
        let usd = self.rng.between(dec("100"), dec("10000"))?;
        let underlying = usd.checked_div(m.price)?;
        let ctokens = underlying.checked_div(m.rate)?;
        self.emit(Event::Mint { market, account, amount_underlying: underlying, amount_ctokens: ctokens })?;
        Ok(())
    }

    fn try_borrow(&mut self) -> Result<bool, ScenarioError> {
        let account = self.rng.pick(&self.regular).expect("accounts exist").clone();
        // Mostly borrow the steadiest asset against the rest.
        let market = if self.rng.below(10) < 7 {
            self.regular_markets.iter().min_by_key(|a| self.volatility[*a]).expect("markets exist").clone()
        } else {
            self.rng.pick(&self.regular_markets).expect("markets exist").clone()
        };
        let h = self.shadow.health(&account)?;
        let target_ratio = self.rng.between(dec("1.02"), dec("1.5"))?;
        let room = h.power.checked_div(target_ratio)?.checked_sub(h.debt)?;
        if room <= Dec::ONE {
            return Ok(false);
        }
        let value = room.checked_mul(self.rng.between(dec("0.5"), Dec::ONE)?)?;
        let amount = value.checked_div(self.shadow.markets[&market].price)?;
        if amount.is_zero() {
            return Ok(false);
        }
        self.emit(Event::Borrow { market, account, amount_underlying: amount })?;
        Ok(true)
    }

    fn try_repay(&mut self) -> Result<bool, ScenarioError> {
        let candidates: Vec<AccountId> =
            self.borrowers.iter().filter(|a| !self.planned_accounts.contains(*a)).cloned().collect();
        let Some(account) = self.rng.pick(&candidates).cloned() else { return Ok(false) };
        let debts: Vec<AssetId> = self.shadow.positions[&account]
            .iter()
            .filter(|(_, p)| !p.principal.is_zero())
            .map(|(a, _)| a.clone())
            .collect();
        let market = self.rng.pick(&debts).expect("borrower has debt").clone();
        let owed = self.shadow.owed(&self.shadow.pos(&account, &market), &market)?;
        let amount =
            if self.rng.below(10) < 3 { owed } else { owed.checked_mul(self.rng.between(dec("0.1"), dec("0.9"))?)? };
        if amount.is_zero() {
            return Ok(false);
        }
        self.emit(Event::RepayBorrow { market, account: account.clone(), payer: account, amount_underlying: amount })?;
        Ok(true)
    }

    fn try_redeem(&mut self) -> Result<bool, ScenarioError> {
        let account = self.rng.pick(&self.regular).expect("accounts exist").clone();
        let Some(positions) = self.shadow.positions.get(&account) else { return Ok(false) };
        let held: Vec<AssetId> =
            positions.iter().filter(|(_, p)| p.ctokens.is_positive()).map(|(a, _)| a.clone()).collect();
        let Some(market) = self.rng.pick(&held).cloned() else { return Ok(false) };
        let m = self.shadow.markets[&market];
        let balance = self.shadow.pos(&account, &market).ctokens;
        let ctokens = balance.checked_mul(self.rng.between(dec("0.05"), dec("0.5"))?)?;
        if ctokens.is_zero() {
            return Ok(false);
        }
        // Keep borrowers at a ratio of at least 1.1 after the redeem.
        let h = self.shadow.health(&account)?;
        if !h.debt.is_zero() {
            let lost = ctokens.checked_mul(m.rate)?.checked_mul(m.price)?.checked_mul(m.cf)?;
            let power = h.power.checked_sub(lost)?;
            if power < h.debt.checked_mul(dec("1.1"))? {
                return Ok(false);
            }
        }
        let underlying = ctokens.checked_mul(m.rate)?;
        self.emit(Event::Redeem { market, account, amount_underlying: underlying, amount_ctokens: ctokens })?;
        Ok(true)
    }

    fn price_move(&mut self) -> Result<bool, ScenarioError> {
        let volatile: Vec<AssetId> =
            self.regular_markets.iter().filter(|a| self.volatility[*a].is_positive()).cloned().collect();
        let Some(asset) = self.rng.pick(&volatile).cloned() else { return Ok(false) };
        let vol = self.volatility[&asset];
        let step = self.rng.between(Dec::ZERO.checked_sub(vol)?, vol)?;
        let initial = self.initial_prices[&asset];
        let lo = initial.checked_mul(dec("0.25"))?;
        let hi = initial.checked_mul(dec("4"))?;
        let price = self.shadow.markets[&asset].price.checked_mul(Dec::ONE.checked_add(step)?)?.clamp(lo, hi);
        self.emit(Event::PriceUpdate { asset, price_usd: price })?;
        Ok(true)
    }

    fn accrue(&mut self) -> Result<bool, ScenarioError> {
        let asset = self.rng.pick(&self.regular_markets).expect("markets exist").clone();
        let m = self.shadow.markets[&asset];
        let growth_index = self.rng.between(Dec::ONE, dec("1.001"))?;
        let growth_rate = self.rng.between(Dec::ONE, dec("1.001"))?;
        let before = self.shadow.borrow_total(&asset)?;
        let new_index = m.index.checked_mul(growth_index)?;
        let new_rate = m.rate.checked_mul(growth_rate)?;
        let mut probe = self.shadow.markets[&asset];
        probe.index = new_index;
        let saved = std::mem::replace(self.shadow.markets.get_mut(&asset).expect("listed"), probe);
        let after = self.shadow.borrow_total(&asset)?;
        *self.shadow.markets.get_mut(&asset).expect("listed") = saved;
        self.emit(Event::AccrueInterest {
            market: asset,
            new_borrow_index: new_index,
            new_exchange_rate: new_rate,
            interest_accumulated_underlying: after.checked_sub(before)?,
        })?;
        Ok(true)
    }

    fn parameter_change(&mut self, roll: u64) -> Result<bool, ScenarioError> {
        let asset = self.rng.pick(&self.regular_markets).expect("markets exist").clone();
        match roll % 3 {
            0 => {
                let base =
                    self.spec.markets.iter().find(|m| m.asset == asset).expect("regular market").collateral_factor;
                let lo = base.checked_sub(dec("0.1"))?.max(Dec::ZERO);
                let hi = base.checked_add(dec("0.05"))?.min(dec("0.95")).max(lo);
                let new_factor = self.rng.between(lo, hi)?;
                self.emit(Event::NewCollateralFactor { market: asset, new_factor })?;
            }
            1 => {
                let model_id = format!("model-{}", self.rng.below(4));
                self.emit(Event::NewInterestRateModel { market: asset, model_id })?;
            }
            _ => {
                if self.rng.below(2) == 0 {
                    let new_close_factor = [dec("0.4"), dec("0.5"), dec("0.6")][self.rng.below(3) as usize];
                    self.emit(Event::NewCloseFactor { new_close_factor })?;
                } else {
                    let mut params_blob = BTreeMap::new();
                    params_blob.insert("base_rate".to_string(), self.rng.between(Dec::ZERO, dec("0.05"))?);
                    params_blob.insert("multiplier".to_string(), self.rng.between(dec("0.05"), dec("0.3"))?);
                    self.emit(Event::NewInterestParams { market: asset, params_blob })?;
                }
            }
        }
        Ok(true)
    }

    fn checkpoint(&mut self) -> Result<(), ScenarioError> {
        let mut liquidable = Vec::new();
        for account in self.shadow.positions.keys() {
            if self.shadow.health(account)?.liquidable() {
                liquidable.push(account.clone());
            }
        }
        let markets = self.shadow.aggregates()?;
        self.checkpoints.push(Checkpoint { block: self.block, liquidable, markets });
        Ok(())
    }

    fn end_block(&mut self) -> Result<(), ScenarioError> {
        if self.block.is_multiple_of(self.spec.checkpoint_every) {
            self.checkpoint()?;
        }
        self.block += 1;
        self.tx = 0;
        Ok(())
    }

    /// Final block: dedicated accounts take positions sized so they hold the
    /// planned shares of the side's total value.
    fn plant_concentration(&mut self, plan: &PlannedConcentration) -> Result<ExpectedConcentration, ScenarioError> {
        let market = self.regular_markets[0].clone();
        let m = self.shadow.markets[&market];
        let mut others = Vec::new();
        for positions in self.shadow.positions.values() {
            let mut v = Dec::ZERO;
            for (asset, pos) in positions {
                let sm = &self.shadow.markets[asset];
                v = v.checked_add(match plan.side {
                    Side::Supply => pos.ctokens.checked_mul(sm.rate)?.checked_mul(sm.price)?,
                    Side::Borrow => self.shadow.owed(pos, asset)?.checked_mul(sm.price)?,
                })?;
            }
            others.push(v);
        }
        let rest = Dec::checked_sum(others.iter().copied())?;
        let planned = Dec::checked_sum(plan.shares.iter().copied())?;
        let total = rest.checked_div(Dec::ONE.checked_sub(planned)?)?;
        let smallest = plan.shares.last().copied().unwrap_or(Dec::ONE).checked_mul(total)?;
        if others.iter().any(|v| *v >= smallest) {
            return infeasible("an existing account already exceeds the smallest planned share");
        }
        let mut accounts = Vec::new();
        for (j, share) in plan.shares.iter().enumerate() {
            let whale = AccountId::synthetic(WHALE_TAG, j as u64 + 1);
            let target = share.checked_mul(total)?;
            let underlying = target.checked_div(m.price)?;
            match plan.side {
                Side::Supply => {
                    let ctokens = underlying.checked_div(m.rate)?;
                    self.emit(Event::Mint {
                        market: market.clone(),
                        account: whale.clone(),
                        amount_underlying: underlying,
                        amount_ctokens: ctokens,
                    })?;
                }
                Side::Borrow => {
                    if m.cf.is_zero() {
                        return infeasible("planted borrows need a market with a nonzero collateral factor");
                    }
                    // Collateral worth three times the debt over the factor.
                    let collateral = underlying.checked_mul(dec("3"))?.checked_div(m.cf)?;
                    let ctokens = collateral.checked_div(m.rate)?;
                    let collateral = ctokens.checked_mul(m.rate)?;
                    self.emit(Event::Mint {
                        market: market.clone(),
                        account: whale.clone(),
                        amount_underlying: collateral,
                        amount_ctokens: ctokens,
                    })?;
                    self.emit(Event::Borrow {
                        market: market.clone(),
                        account: whale.clone(),
                        amount_underlying: underlying,
                    })?;
                }
            }
            accounts.push(whale);
        }
        Ok(ExpectedConcentration { side: plan.side, accounts, shares: plan.shares.clone() })
    }
}

fn plan_market(k: usize) -> Result<AssetId, IdError> {
    AssetId::new(format!("PLAN{k}"))
}

fn validate(spec: &ScenarioSpec) -> Result<(), ScenarioError> {
    if spec.markets.is_empty() {
        return infeasible("at least one market is required");
    }
    if spec.accounts == 0 {
        return infeasible("at least one account is required");
    }
    if spec.checkpoint_every == 0 {
        return infeasible("checkpoint_every must be at least 1");
    }
    if spec.liquidation_incentive.is_negative() {
        return infeasible("liquidation_incentive must not be negative");
    }
    let mut symbols = BTreeSet::new();
    for m in &spec.markets {
        if m.asset.as_str().starts_with("PLAN") {
            return infeasible(format!("market symbol {} is reserved for planned liquidations", m.asset));
        }
        if !symbols.insert(&m.asset) {
            return infeasible(format!("market {} listed twice", m.asset));
        }
        if !m.initial_exchange_rate.is_positive() || !m.price.initial.is_positive() {
            return infeasible(format!("market {} needs a positive exchange rate and price", m.asset));
        }
        if m.collateral_factor.is_negative() || m.collateral_factor > Dec::ONE {
            return infeasible(format!("market {} collateral factor outside [0, 1]", m.asset));
        }
        if m.price.volatility.is_negative() || m.price.volatility >= dec("0.5") {
            return infeasible(format!("market {} volatility outside [0, 0.5)", m.asset));
        }
        if m.price.schedule.iter().any(|(b, p)| *b <= SETUP_BLOCK || !p.is_positive()) {
            return infeasible(format!(
                "market {} schedule needs blocks after {SETUP_BLOCK} and positive prices",
                m.asset
            ));
        }
    }
    let mut planned = BTreeSet::new();
    for p in &spec.planned_liquidations {
        if p.liquidable_block <= SETUP_BLOCK {
            return infeasible(format!(
                "planned liquidable block {} must be after the setup block",
                p.liquidable_block
            ));
        }
        if p.liquidation_block < p.liquidable_block {
            return infeasible(format!(
                "planned liquidation of {} at block {} precedes it becoming liquidable at {}",
                p.account, p.liquidation_block, p.liquidable_block
            ));
        }
        let first = p.account.as_str().as_bytes();
        let tag = u8::from_str_radix(std::str::from_utf8(&first[2..4]).expect("ascii"), 16).expect("hex");
        if [REGULAR_TAG, LIQUIDATOR_TAG, WHALE_TAG].contains(&tag)
            && p.account.as_str()[4..26].bytes().all(|b| b == b'0')
        {
            return infeasible(format!("planned account {} collides with a generated address", p.account));
        }
        if !planned.insert(&p.account) {
            return infeasible(format!("account {} planned twice", p.account));
        }
    }
    if let Some(c) = &spec.planned_concentration {
        let total = Dec::checked_sum(c.shares.iter().copied())?;
        let in_range = c.shares.iter().all(|s| s.is_positive() && *s < Dec::ONE);
        if c.shares.is_empty() || !in_range || total >= Dec::ONE || c.shares.windows(2).any(|w| w[1] > w[0]) {
            return infeasible("planned shares must be non-increasing, in (0, 1) and sum below 1");
        }
    }
    Ok(())
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    validate(spec)?;
    let mut g = Generator {
        spec,
        rng: Rng(ChaCha8Rng::seed_from_u64(spec.seed)),
        shadow: Shadow::default(),
        events: Vec::with_capacity(spec.event_count + 64),
        block: SETUP_BLOCK,
        tx: 0,
        regular: (1..=spec.accounts).map(|n| AccountId::synthetic(REGULAR_TAG, n)).collect(),
        liquidators: (1..=LIQUIDATORS).map(|n| AccountId::synthetic(LIQUIDATOR_TAG, n)).collect(),
        planned_accounts: spec.planned_liquidations.iter().map(|p| p.account.clone()).collect(),
        regular_markets: spec.markets.iter().map(|m| m.asset.clone()).collect(),
        initial_prices: spec.markets.iter().map(|m| (m.asset.clone(), m.price.initial)).collect(),
        volatility: spec.markets.iter().map(|m| (m.asset.clone(), m.price.volatility)).collect(),
        borrowers: BTreeSet::new(),
        holders: BTreeMap::new(),
        open: BTreeMap::new(),
        pending: BTreeMap::new(),
        liquidations: Vec::new(),
        checkpoints: Vec::new(),
    };
    g.setup()?;
    g.end_block()?;

    let last_planned = spec.planned_liquidations.iter().map(|p| p.liquidation_block).max().unwrap_or(0);
    let last_scheduled = spec.markets.iter().flat_map(|m| m.price.schedule.iter().map(|(b, _)| *b)).max().unwrap_or(0);
    let horizon = last_planned.max(last_scheduled);
    while g.events.len() < spec.event_count || g.block <= horizon {
        g.scheduled_prices()?;
        g.planned_events()?;
        g.due_liquidations()?;
        let actions = 1 + g.rng.below(4);
        for _ in 0..actions {
            if g.events.len() >= spec.event_count {
                break;
            }
            g.random_action()?;
        }
        // Same-block liquidations for accounts that just became liquidable.
        g.due_liquidations()?;
        g.end_block()?;
    }

    let concentration = match &spec.planned_concentration {
        Some(plan) => {
            let planted = g.plant_concentration(plan)?;
            g.end_block()?;
            Some(planted)
        }
        None => None,
    };
    let final_block = g.block - 1;
    if g.checkpoints.last().map(|c| c.block) != Some(final_block) {
        g.block = final_block;
        g.checkpoint()?;
    }
    Ok(Scenario {
        annotations: Annotations {
            seed: spec.seed,
            event_count: g.events.len(),
            checkpoints: g.checkpoints,
            liquidations: g.liquidations,
            concentration,
        },
        events: g.events,
    })
}
