//! Event-sourced state engine and risk analytics for protocols for loanable
//! funds (Compound-style lending markets).
//!
//! Protocol event logs are replayed into an exact [`GlobalState`] of markets,
//! participant positions, oracle prices and protocol parameters. On top of
//! that state the crate answers liquidation questions (which accounts are
//! under water, how much can be repaid and seized, how much collateral a
//! price shock exposes) and computes replay-level metrics such as
//! liquidation latency distributions and supply/borrow concentration.
//!
//! All quantities are [`Dec`]: 18-decimal fixed point with truncation toward
//! zero, so every result is reproducible bit for bit.

pub mod analytics;
pub mod dec;
pub mod engine;
pub mod event;
pub mod leverage;
pub mod model;
pub mod risk;
pub mod scenario;
pub mod snapshot;

pub use dec::{ArithmeticError, Dec};
pub use engine::{apply_event, replay, state_digest, ReplayReport};
pub use event::{Event, EventKind, EventRecord, OrderingKey};
pub use model::{
    accrued_borrow_balance, validate_state, AccountId, AssetId, GlobalState, MarketState, Position, PriceTable,
    ProtocolParams,
};
pub use risk::{account_health, liquidable_accounts, AccountHealth};
