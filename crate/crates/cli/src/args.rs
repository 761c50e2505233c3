use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plf_core::analytics::{Side, Weighting};
use plf_core::{AssetId, Dec};

#[derive(Debug, Parser)]
#[command(name = "plf", version, about = "Replay lending-protocol event logs and analyse liquidation risk")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write the result table to this file instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Where a command gets its state from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Event log (JSON lines) to replay from an empty state.
    #[arg(long, value_name = "PATH")]
    pub events: Option<PathBuf>,
    /// Snapshot file to load.
    #[arg(long, value_name = "PATH")]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StateArgs {
    #[command(flatten)]
    pub source: Source,
    /// Replay only events in blocks up to and including this one.
    #[arg(long, value_name = "BLOCK", conflicts_with = "snapshot")]
    pub at_block: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Value,
    Count,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Value => Weighting::Value,
            WeightingArg::Count => Weighting::Count,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Supply,
    Borrow,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Supply => Side::Supply,
            SideArg::Borrow => Side::Borrow,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay an event log and print the replay report.
    Replay {
        #[arg(long, value_name = "PATH")]
        events: PathBuf,
        /// Start from this snapshot instead of an empty state.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Save the final state here.
        #[arg(long, value_name = "PATH")]
        snapshot_out: Option<PathBuf>,
    },
    /// List liquidable accounts with their health.
    Liquidable {
        #[command(flatten)]
        state: StateArgs,
    },
    /// Collateral exposed to liquidation under price shocks of one asset.
    Sensitivity {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, value_parser = parse_asset)]
        asset: AssetId,
        /// Comma-separated fractional price drops in [0, 1).
        #[arg(long, required = true, value_delimiter = ',', value_parser = parse_shock)]
        shocks: Vec<Dec>,
    },
    /// Distribution of blocks elapsed between becoming liquidable and liquidation.
    Efficiency {
        #[arg(long, value_name = "PATH")]
        events: PathBuf,
        #[arg(long, value_enum, default_value_t = WeightingArg::Value)]
        weighting: WeightingArg,
        /// Print individual liquidation records instead of the CDF.
        #[arg(long)]
        records: bool,
    },
    /// Share of supplied or borrowed value held by the largest accounts.
    Concentration {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        top_n: u64,
    },
    /// Supplied, borrowed and locked value sampled every STRIDE blocks.
    Timeseries {
        #[arg(long, value_name = "PATH")]
        events: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
    },
    /// Totals of a recursive borrow-and-redeposit ladder.
    Leverage {
        /// Initial capital.
        #[arg(long, value_parser = parse_non_negative)]
        alpha: Dec,
        /// Collateralization ratio, greater than 1.
        #[arg(long, value_parser = parse_ratio)]
        delta: Dec,
        /// Number of borrow rounds.
        #[arg(long)]
        k: u32,
        /// Interest rate applied to the debt.
        #[arg(long, default_value = "0", value_parser = parse_non_negative)]
        gamma: Dec,
    },
    /// Generate a synthetic event log and its ground-truth annotations.
    GenScenario {
        /// Scenario spec (JSON).
        #[arg(long, value_name = "PATH")]
        spec: PathBuf,
        #[arg(long, value_name = "PATH")]
        events_out: PathBuf,
        #[arg(long, value_name = "PATH")]
        annotations_out: Option<PathBuf>,
    },
    /// Save, inspect or verify state snapshots.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
}

#[derive(Debug, Subcommand)]
pub enum SnapshotCommand {
    /// Replay an event log and save the resulting state.
    Save {
        #[arg(long, value_name = "PATH")]
        events: PathBuf,
        #[arg(long, value_name = "BLOCK")]
        at_block: Option<u64>,
        #[arg(long, value_name = "PATH")]
        snapshot: PathBuf,
    },
    /// Load a snapshot and summarise it.
    Load {
        #[arg(long, value_name = "PATH")]
        snapshot: PathBuf,
    },
    /// Check a snapshot's digest and format version.
    Verify {
        #[arg(long, value_name = "PATH")]
        snapshot: PathBuf,
    },
}

fn parse_dec(s: &str) -> Result<Dec, String> {
    s.trim().parse::<Dec>().map_err(|e| e.to_string())
}

fn parse_asset(s: &str) -> Result<AssetId, String> {
    AssetId::new(s).map_err(|e| e.to_string())
}

fn parse_shock(s: &str) -> Result<Dec, String> {
    let v = parse_dec(s)?;
    if v.is_negative() || v >= Dec::ONE {
        return Err(format!("shock {v} outside [0, 1)"));
    }
    Ok(v)
}

fn parse_non_negative(s: &str) -> Result<Dec, String> {
    let v = parse_dec(s)?;
    if v.is_negative() {
        return Err(format!("{v} is negative"));
    }
    Ok(v)
}

fn parse_ratio(s: &str) -> Result<Dec, String> {
    let v = parse_dec(s)?;
    if v <= Dec::ONE {
        return Err(format!("{v} must be greater than 1"));
    }
    Ok(v)
}
