//! A 20-event stream with every expected number worked out by hand.

mod common;

use common::{asset, d};
use plf_core::analytics::{concentration, funds_time_series, track_efficiency, Side, StreakEnd, TrackerConfig};
use plf_core::event::read_event_file;
use plf_core::{
    account_health, liquidable_accounts, replay, state_digest, validate_state, AccountId, Dec, EventRecord,
    GlobalState, OrderingKey,
};

fn events() -> Vec<EventRecord> {
    read_event_file(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/small.jsonl")).unwrap()
}

fn who(c: char) -> AccountId {
    AccountId::new(format!("0x{}{c}", "0".repeat(39))).unwrap()
}

fn ff() -> AccountId {
    AccountId::new(format!("0x{}ff", "0".repeat(38))).unwrap()
}

fn replayed(upto_block: u64) -> GlobalState {
    let events: Vec<_> = events().into_iter().filter(|e| e.key.block <= upto_block).collect();
    let mut state = GlobalState::default();
    let report = replay(&mut state, &events).unwrap();
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    state
}

#[test]
fn final_market_totals() {
    let state = replayed(u64::MAX);
    assert!(validate_state(&state).is_empty());
    let dai = &state.markets[&asset("DAI")];
    // 250000 minted, 42000 redeemed, 4000 minted.
    assert_eq!(dai.total_ctoken_supply, d("212000"));
    // 1000 borrowed + 100 interest - 550 liquidated - 50 repaid.
    assert_eq!(dai.total_borrows, d("500"));
    assert_eq!(dai.exchange_rate, d("0.021"));
    assert_eq!(dai.borrow_index, d("1.1"));
    assert_eq!(dai.interest_model.model_id, "jump-rate");
    assert_eq!(dai.interest_model.params["kink"], d("0.8"));
    let eth = &state.markets[&asset("ETH")];
    assert_eq!(eth.total_ctoken_supply, d("500"));
    assert_eq!(eth.total_borrows, d("0.105"));
    assert_eq!(eth.collateral_factor, d("0.5"));
    assert_eq!(state.cursor, Some(OrderingKey::new(14, 0, 0)));
}

#[test]
fn final_health() {
    let state = replayed(u64::MAX);
    // A: 300 cETH * 0.02 * 200 * 0.5 = 600 power against 500 DAI.
    let a = account_health(&state, &who('a')).unwrap();
    assert_eq!((a.collateral_power_usd, a.borrow_value_usd, a.surplus_usd), (d("600"), d("500"), d("100")));
    // C: 4000 cDAI * 0.021 * 0.75 = 63 against 0.105 ETH at 200.
    let c = account_health(&state, &who('c')).unwrap();
    assert_eq!((c.collateral_power_usd, c.borrow_value_usd), (d("63"), d("21")));
    assert_eq!(state.accrued_borrow(&who('a'), &asset("DAI")).unwrap(), d("500"));
    assert!(liquidable_accounts(&state).unwrap().is_empty());
}

#[test]
fn liquidable_windows() {
    // After the ETH drop: 500 * 0.02 * 140 * 0.75 = 1050 against 1100.
    let s5 = replayed(5);
    let l = liquidable_accounts(&s5).unwrap();
    assert_eq!(l.len(), 1);
    assert_eq!(l[0].0, who('a'));
    assert_eq!(l[0].1.surplus_usd, d("-50"));
    // After the liquidation: 300 cETH gives 630 against 550.
    assert!(liquidable_accounts(&replayed(6)).unwrap().is_empty());
    // Collateral factor cut: 420 against 500.
    assert_eq!(liquidable_accounts(&replayed(9)).unwrap()[0].1.surplus_usd, d("-80"));
}

#[test]
fn efficiency_timeline() {
    let mut state = GlobalState::default();
    let t = track_efficiency(&mut state, &events(), TrackerConfig::default()).unwrap();
    assert_eq!(t.liquidations.len(), 1);
    let r = &t.liquidations[0];
    assert_eq!((r.account.clone(), r.key, r.blocks_elapsed), (who('a'), OrderingKey::new(6, 0, 0), 1));
    assert_eq!(r.streak_start, Some(OrderingKey::new(5, 0, 0)));
    // 200 cETH * 0.02 * 140.
    assert_eq!(r.seized_value_usd, d("560"));
    let ends: Vec<_> = t.streaks.iter().map(|s| (s.start, s.end)).collect();
    assert_eq!(
        ends,
        vec![
            (OrderingKey::new(5, 0, 0), StreakEnd::Liquidated(OrderingKey::new(6, 0, 0))),
            (OrderingKey::new(9, 0, 0), StreakEnd::Recovered(OrderingKey::new(11, 0, 0))),
        ]
    );
    assert!(t.warnings.is_empty());
}

#[test]
fn concentration_shares() {
    let state = replayed(u64::MAX);
    // Supply: B 208000 * 0.021 = 4368, A 1200, liquidator 800, C 84.
    let s = concentration(&state, Side::Supply, 2).unwrap();
    assert_eq!(s.total_usd, d("6452"));
    assert_eq!(s.rows[0].account, who('b'));
    assert_eq!(s.rows[1].account, who('a'));
    assert_eq!(s.top1_share, d("4368").checked_div(d("6452")).unwrap());
    assert_eq!(s.top_n_share, d("5568").checked_div(d("6452")).unwrap());
    let b = concentration(&state, Side::Borrow, 5).unwrap();
    assert_eq!(b.total_usd, d("521"));
    assert_eq!(b.rows.len(), 2);
    assert_eq!(b.top_n_share, Dec::ONE);
    assert!(s.rows.iter().all(|r| r.account != ff() || r.value_usd == d("800")));
}

#[test]
fn funds_series() {
    let mut state = GlobalState::default();
    let rows = funds_time_series(&mut state, &events(), 5).unwrap();
    let got: Vec<_> = rows.iter().map(|r| (r.block, r.supplied_usd, r.borrowed_usd, r.locked_usd)).collect();
    assert_eq!(
        got,
        vec![
            (1, Dec::ZERO, Dec::ZERO, Dec::ZERO),
            (6, d("6650"), d("550"), d("6100")),
            (11, d("6368"), d("500"), d("5868")),
            (14, d("6452"), d("521"), d("5931")),
        ]
    );
}

#[test]
fn digest_is_stable() {
    let a = state_digest(&replayed(u64::MAX));
    let b = state_digest(&replayed(u64::MAX));
    assert_eq!(a, b);
    assert_ne!(a, state_digest(&replayed(13)));
}
