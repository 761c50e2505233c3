use std::path::Path;

use anyhow::{Context, Result};
use plf_core::analytics::{
    concentration, efficiency_cdf, funds_time_series, track_efficiency, Side, TrackerConfig, Weighting,
};
use plf_core::event::read_event_file;
use plf_core::leverage;
use plf_core::risk::price_sensitivity;
use plf_core::scenario::{generate, ScenarioSpec};
use plf_core::snapshot::{read_snapshot, save_snapshot, SnapshotMeta};
use plf_core::{liquidable_accounts, replay, AssetId, Dec, EventRecord, GlobalState, OrderingKey, ReplayReport};
use serde_json::{json, Value};

use crate::args::{Source, StateArgs};
use crate::output::Table;

pub const REPLAY_HEADERS: &[&str] =
    &["events_applied", "cursor_block", "cursor_tx_index", "cursor_log_index", "warnings", "digest"];
pub const LIQUIDABLE_HEADERS: &[&str] =
    &["account", "collateral_value_usd", "collateral_power_usd", "borrow_value_usd", "surplus_usd", "ratio"];
pub const SENSITIVITY_HEADERS: &[&str] = &["shock", "liquidable_collateral_usd", "liquidable_accounts"];
pub const CDF_HEADERS: &[&str] = &["blocks_elapsed", "cumulative_fraction"];
pub const RECORD_HEADERS: &[&str] =
    &["account", "block", "tx_index", "log_index", "streak_start_block", "blocks_elapsed", "seized_value_usd"];
pub const CONCENTRATION_HEADERS: &[&str] = &["rank", "account", "value_usd", "share", "top_n_share", "total_usd"];
pub const TIMESERIES_HEADERS: &[&str] = &["block", "supplied_usd", "borrowed_usd", "locked_usd"];
pub const LEVERAGE_HEADERS: &[&str] =
    &["alpha", "delta", "k", "gamma", "total_collateral", "total_debt", "max_exposure"];
pub const GEN_HEADERS: &[&str] = &["seed", "events", "first_block", "last_block", "liquidations", "checkpoints"];
pub const SNAPSHOT_HEADERS: &[&str] =
    &["format_version", "cursor_block", "cursor_tx_index", "cursor_log_index", "digest", "markets", "participants"];

pub const MARKET_HEADERS: &[&str] = &[
    "asset",
    "decimals",
    "price_usd",
    "exchange_rate",
    "borrow_index",
    "collateral_factor",
    "total_ctoken_supply",
    "total_borrows",
];

fn dec(v: Dec) -> Value {
    Value::String(v.to_string())
}

fn key_cells(key: Option<OrderingKey>) -> [Value; 3] {
    match key {
        Some(k) => [json!(k.block), json!(k.tx_index), json!(k.log_index)],
        None => [Value::Null, Value::Null, Value::Null],
    }
}

fn load_events(path: &Path) -> Result<Vec<EventRecord>> {
    read_event_file(path).with_context(|| format!("reading events from {}", path.display()))
}

fn report_warnings(report: &ReplayReport) {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn replay_onto(state: &mut GlobalState, events: &[EventRecord]) -> Result<ReplayReport> {
    match replay(state, events) {
        Ok(report) => {
            report_warnings(&report);
            Ok(report)
        }
        Err(e) => {
            report_warnings(&e.report);
            Err(e.into())
        }
    }
}

fn events_upto(path: &Path, at_block: Option<u64>) -> Result<Vec<EventRecord>> {
    let mut events = load_events(path)?;
    if let Some(block) = at_block {
        events.retain(|e| e.key.block <= block);
    }
    Ok(events)
}

pub fn load_state(args: &StateArgs) -> Result<GlobalState> {
    match &args.source {
        Source { events: Some(path), .. } => {
            let mut state = GlobalState::default();
            replay_onto(&mut state, &events_upto(path, args.at_block)?)?;
            Ok(state)
        }
        Source { snapshot: Some(path), .. } => {
            Ok(read_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))?.state)
        }
        Source { events: None, snapshot: None } => unreachable!("clap requires one source"),
    }
}

pub fn replay_cmd(events: &Path, resume: Option<&Path>, snapshot_out: Option<&Path>) -> Result<Table> {
    let mut state = match resume {
        Some(path) => read_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))?.state,
        None => GlobalState::default(),
    };
    let report = replay_onto(&mut state, &load_events(events)?)?;
    if let Some(path) = snapshot_out {
        save_snapshot(&state, path).with_context(|| format!("writing snapshot {}", path.display()))?;
    }
    let mut t = Table::new(REPLAY_HEADERS);
    let [b, tx, l] = key_cells(report.final_cursor);
    t.push(vec![json!(report.events_applied), b, tx, l, json!(report.warnings.len()), json!(report.digest)]);
    Ok(t)
}

pub fn liquidable_cmd(state: &GlobalState) -> Result<Table> {
    let mut t = Table::new(LIQUIDABLE_HEADERS);
    for (account, h) in liquidable_accounts(state)? {
        t.push(vec![
            json!(account.as_str()),
            dec(h.collateral_value_usd),
            dec(h.collateral_power_usd),
            dec(h.borrow_value_usd),
            dec(h.surplus_usd),
            h.ratio.map_or(Value::Null, dec),
        ]);
    }
    Ok(t)
}

pub fn sensitivity_cmd(state: &GlobalState, asset: &AssetId, shocks: &[Dec]) -> Result<Table> {
    let mut t = Table::new(SENSITIVITY_HEADERS);
    for row in price_sensitivity(state, asset, shocks)? {
        t.push(vec![dec(row.shock), dec(row.liquidable_collateral_usd), json!(row.liquidable_accounts)]);
    }
    Ok(t)
}

pub fn efficiency_cmd(events: &Path, weighting: Weighting, records: bool) -> Result<Table> {
    let mut state = GlobalState::default();
    let timeline = track_efficiency(&mut state, &load_events(events)?, TrackerConfig::default())?;
    for w in &timeline.warnings {
        eprintln!("warning: event {}: {}: {}", w.key, w.account, w.message);
    }
    if records {
        let mut t = Table::new(RECORD_HEADERS);
        for r in &timeline.liquidations {
            let [b, tx, l] = key_cells(Some(r.key));
            t.push(vec![
                json!(r.account.as_str()),
                b,
                tx,
                l,
                r.streak_start.map_or(Value::Null, |s| json!(s.block)),
                json!(r.blocks_elapsed),
                dec(r.seized_value_usd),
            ]);
        }
        return Ok(t);
    }
    let mut t = Table::new(CDF_HEADERS);
    for p in efficiency_cdf(&timeline, weighting)? {
        t.push(vec![json!(p.blocks), dec(p.cumulative_fraction)]);
    }
    Ok(t)
}

pub fn concentration_cmd(state: &GlobalState, side: Side, top_n: usize) -> Result<Table> {
    let c = concentration(state, side, top_n)?;
    if c.zero_total {
        let what = if side == Side::Supply { "supplied" } else { "borrowed" };
        eprintln!("note: total {what} value is zero; shares reported as 0");
    }
    let mut t = Table::new(CONCENTRATION_HEADERS);
    for r in c.rows.iter().take(top_n) {
        t.push(vec![
            json!(r.rank),
            json!(r.account.as_str()),
            dec(r.value_usd),
            dec(r.share),
            dec(c.top_n_share),
            dec(c.total_usd),
        ]);
    }
    Ok(t)
}

pub fn timeseries_cmd(events: &Path, stride: u64) -> Result<Table> {
    let mut state = GlobalState::default();
    let mut t = Table::new(TIMESERIES_HEADERS);
    for r in funds_time_series(&mut state, &load_events(events)?, stride)? {
        t.push(vec![json!(r.block), dec(r.supplied_usd), dec(r.borrowed_usd), dec(r.locked_usd)]);
    }
    Ok(t)
}

pub fn leverage_cmd(alpha: Dec, delta: Dec, k: u32, gamma: Dec) -> Result<Table> {
    let q = leverage::quote(alpha, delta, k, gamma)?;
    let mut t = Table::new(LEVERAGE_HEADERS);
    t.push(vec![
        dec(q.alpha),
        dec(q.delta),
        json!(q.k),
        dec(q.gamma),
        dec(q.total_collateral),
        dec(q.total_debt),
        dec(q.max_exposure),
    ]);
    Ok(t)
}

pub fn gen_cmd(spec_path: &Path, events_out: &Path, annotations_out: Option<&Path>) -> Result<Table> {
    let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: ScenarioSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    let scenario = generate(&spec)?;
    std::fs::write(events_out, scenario.events_jsonl()).with_context(|| format!("writing {}", events_out.display()))?;
    if let Some(path) = annotations_out {
        std::fs::write(path, scenario.annotations_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    let block = |e: Option<&EventRecord>| e.map_or(Value::Null, |e| json!(e.key.block));
    let mut t = Table::new(GEN_HEADERS);
    t.push(vec![
        json!(spec.seed),
        json!(scenario.events.len()),
        block(scenario.events.first()),
        block(scenario.events.last()),
        json!(scenario.annotations.liquidations.len()),
        json!(scenario.annotations.checkpoints.len()),
    ]);
    Ok(t)
}

fn snapshot_row(meta: &SnapshotMeta, state: &GlobalState) -> Table {
    let mut t = Table::new(SNAPSHOT_HEADERS);
    let [b, tx, l] = key_cells(meta.cursor);
    t.push(vec![
        json!(meta.format_version),
        b,
        tx,
        l,
        json!(meta.digest),
        json!(state.markets.len()),
        json!(state.participants.len()),
    ]);
    t
}

pub fn snapshot_save_cmd(events: &Path, at_block: Option<u64>, path: &Path) -> Result<Table> {
    let mut state = GlobalState::default();
    replay_onto(&mut state, &events_upto(events, at_block)?)?;
    let meta = save_snapshot(&state, path).with_context(|| format!("writing snapshot {}", path.display()))?;
    Ok(snapshot_row(&meta, &state))
}

/// Per-market view of a verified snapshot.
pub fn snapshot_load_cmd(path: &Path) -> Result<Table> {
    let snap = read_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))?;
    let mut t = Table::new(MARKET_HEADERS);
    for (asset, m) in &snap.state.markets {
        t.push(vec![
            json!(asset.as_str()),
            json!(m.decimals),
            snap.state.prices.get(asset).map_or(Value::Null, dec),
            dec(m.exchange_rate),
            dec(m.borrow_index),
            dec(m.collateral_factor),
            dec(m.total_ctoken_supply),
            dec(m.total_borrows),
        ]);
    }
    Ok(t)
}

pub fn snapshot_verify_cmd(path: &Path) -> Result<Table> {
    let snap = read_snapshot(path).with_context(|| format!("verifying snapshot {}", path.display()))?;
    Ok(snapshot_row(&snap.meta(), &snap.state))
}
