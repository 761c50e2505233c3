//! `plf`: replay lending-protocol event logs and report liquidation risk.
//!
//! Exit status is 0 on success, 1 when a command fails on its input and 2
//! for invalid command lines.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command, SnapshotCommand};
use output::Table;

fn run(cli: &Cli) -> Result<Table> {
    match &cli.command {
        Command::Replay { events, resume, snapshot_out } => {
            commands::replay_cmd(events, resume.as_deref(), snapshot_out.as_deref())
        }
        Command::Liquidable { state } => commands::liquidable_cmd(&commands::load_state(state)?),
        Command::Sensitivity { state, asset, shocks } => {
            commands::sensitivity_cmd(&commands::load_state(state)?, asset, shocks)
        }
        Command::Efficiency { events, weighting, records } => {
            commands::efficiency_cmd(events, (*weighting).into(), *records)
        }
        Command::Concentration { state, side, top_n } => {
            commands::concentration_cmd(&commands::load_state(state)?, (*side).into(), *top_n as usize)
        }
        Command::Timeseries { events, stride } => commands::timeseries_cmd(events, *stride),
        Command::Leverage { alpha, delta, k, gamma } => commands::leverage_cmd(*alpha, *delta, *k, *gamma),
        Command::GenScenario { spec, events_out, annotations_out } => {
            commands::gen_cmd(spec, events_out, annotations_out.as_deref())
        }
        Command::Snapshot(SnapshotCommand::Save { events, at_block, snapshot }) => {
            commands::snapshot_save_cmd(events, *at_block, snapshot)
        }
        Command::Snapshot(SnapshotCommand::Load { snapshot }) => commands::snapshot_load_cmd(snapshot),
        Command::Snapshot(SnapshotCommand::Verify { snapshot }) => commands::snapshot_verify_cmd(snapshot),
    }
}

fn emit(cli: &Cli, table: &Table) -> Result<()> {
    let text = table.render(cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli).and_then(|table| emit(&cli, &table)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
