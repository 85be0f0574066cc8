//! Command-line front end: synthetic data generation, preprocessing,
//! training, evaluation and the attention-cost benchmark.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration or layout
//! error, 3 unreadable image, 4 non-finite loss, 5 parameter/schema mismatch.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::Parser;
use swinfundus::preprocess::SynthOptions;

use crate::bench::BenchOptions;
use crate::cli::{Cli, Command};
pub use crate::error::{exit, CliError, CliResult};

/// Parses `args` (program name first), runs the command, and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynth {
            out,
            seed,
            n_per_class,
            image_size,
            corrupt,
        } => commands::gen_synth(
            &out,
            &SynthOptions {
                n_per_class,
                image_size,
                seed,
                corrupt_illumination: corrupt,
                ..SynthOptions::default()
            },
        ),
        Command::Preprocess { input, out, cfg } => commands::preprocess(&input, &out, &cfg),
        Command::Train {
            cfg,
            out,
            no_augment,
        } => commands::train(&cfg, out, no_augment).map(drop),
        Command::Eval {
            params,
            cfg,
            split,
            out,
        } => commands::eval(&params, &cfg, split, out).map(drop),
        Command::Bench {
            sizes,
            channels,
            window,
            heads,
            repeats,
            seed,
            out,
        } => commands::bench(
            &BenchOptions {
                sizes,
                channels,
                window,
                heads,
                repeats,
                seed,
            },
            &out,
        ),
    }
}
