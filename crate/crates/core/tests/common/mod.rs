//! Brute-force oracles and a small stream builder shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use plf_core::{AccountId, AssetId, Dec, Event, EventRecord, GlobalState, OrderingKey};

pub fn d(s: &str) -> Dec {
    s.parse().unwrap()
}

pub fn asset(s: &str) -> AssetId {
    AssetId::new(s).unwrap()
}

pub fn acct(n: u64) -> AccountId {
    AccountId::synthetic(0x42, n)
}

/// Power, debt and collateral value recomputed from raw position fields.
pub fn naive_health(state: &GlobalState, account: &AccountId) -> (Dec, Dec, Dec) {
    let mut power = Dec::ZERO;
    let mut debt = Dec::ZERO;
    let mut value = Dec::ZERO;
    for (a, pos) in &state.participants[account] {
        let m = &state.markets[a];
        let price = state.prices.get(a).unwrap();
        let v = pos.ctoken_balance.checked_mul(m.exchange_rate).unwrap().checked_mul(price).unwrap();
        value = value.checked_add(v).unwrap();
        power = power.checked_add(v.checked_mul(m.collateral_factor).unwrap()).unwrap();
        let owed = if pos.borrow_principal.is_zero() {
            Dec::ZERO
        } else {
            pos.borrow_principal.checked_mul_div(m.borrow_index, pos.borrow_index_snapshot).unwrap()
        };
        debt = debt.checked_add(owed.checked_mul(price).unwrap()).unwrap();
    }
    (power, debt, value)
}

pub fn naive_liquidable(state: &GlobalState) -> BTreeSet<AccountId> {
    state
        .participants
        .keys()
        .filter(|a| {
            let (power, debt, _) = naive_health(state, a);
            power < debt
        })
        .cloned()
        .collect()
}

/// Per-market sums of cToken balances and accrued borrows over all positions.
pub fn naive_sums(state: &GlobalState) -> BTreeMap<AssetId, (Dec, Dec)> {
    let mut out: BTreeMap<AssetId, (Dec, Dec)> =
        state.markets.keys().map(|a| (a.clone(), (Dec::ZERO, Dec::ZERO))).collect();
    for positions in state.participants.values() {
        for (a, pos) in positions {
            let m = &state.markets[a];
            let slot = out.get_mut(a).unwrap();
            slot.0 = slot.0.checked_add(pos.ctoken_balance).unwrap();
            let owed = pos.borrow_principal.checked_mul_div(m.borrow_index, pos.borrow_index_snapshot).unwrap();
            slot.1 = slot.1.checked_add(owed).unwrap();
        }
    }
    out
}

/// Appends events with consecutive keys.
#[derive(Default)]
pub struct Stream {
    pub events: Vec<EventRecord>,
    block: u64,
    tx: u64,
}

impl Stream {
    pub fn new() -> Self {
        Stream { events: Vec::new(), block: 1, tx: 0 }
    }

    pub fn at(&mut self, block: u64) -> &mut Self {
        assert!(block >= self.block);
        if block > self.block {
            self.block = block;
            self.tx = 0;
        }
        self
    }

    pub fn push(&mut self, event: Event) -> &mut Self {
        self.events.push(EventRecord::new(OrderingKey::new(self.block, self.tx, 0), event));
        self.tx += 1;
        self
    }

    pub fn list(&mut self, sym: &str, rate: &str, cf: &str, price: &str) -> &mut Self {
        self.push(Event::MarketListed {
            asset: asset(sym),
            decimals: 18,
            initial_exchange_rate: d(rate),
            initial_collateral_factor: d(cf),
        });
        self.price(sym, price)
    }

    pub fn price(&mut self, sym: &str, price: &str) -> &mut Self {
        self.push(Event::PriceUpdate { asset: asset(sym), price_usd: d(price) })
    }

    pub fn mint(&mut self, sym: &str, who: &AccountId, underlying: &str, ctokens: &str) -> &mut Self {
        self.push(Event::Mint {
            market: asset(sym),
            account: who.clone(),
            amount_underlying: d(underlying),
            amount_ctokens: d(ctokens),
        })
    }

    pub fn borrow(&mut self, sym: &str, who: &AccountId, amount: &str) -> &mut Self {
        self.push(Event::Borrow { market: asset(sym), account: who.clone(), amount_underlying: d(amount) })
    }

    pub fn liquidate(
        &mut self,
        borrower: &AccountId,
        debt: &str,
        repay: &str,
        collateral: &str,
        seized: &str,
    ) -> &mut Self {
        self.push(Event::LiquidateBorrow {
            borrower: borrower.clone(),
            liquidator: AccountId::synthetic(0x99, 1),
            repay_market: asset(debt),
            repay_amount_underlying: d(repay),
            collateral_market: asset(collateral),
            seized_ctokens: d(seized),
        })
    }
}
