//! `intermittent`: batch experiments with machine-readable reports.
//!
//! Exit status: 0 when the experiment's check passes, 2 when it fails, 1 on
//! invalid configuration or a numerical error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;
mod report;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use config::{parse_config_file, Cli, ExperimentConfig};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let file = match &cli.opts.config {
        None => BTreeMap::new(),
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_config_file(&text) {
                Ok(map) => map,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            },
            Err(e) => {
                eprintln!(
                    "invalid config: field `config`: cannot read {}: {e}",
                    path.display()
                );
                return ExitCode::from(1);
            }
        },
    };
    let cfg = match ExperimentConfig::resolve(cli.command, &cli.opts, &file) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    report::execute(&cfg)
}
