//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_predict, cmd_synth, cmd_train};
pub use config::{EvalConfig, PredictConfig, SynthConfig, TrainRunConfig};

use crate::error::Error;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hlmelody", version, about = "Melody estimation with histogram-loss uncertainty")]
pub struct Cli {
    /// TOML file with [synth], [train], [predict] and [eval] sections.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any key of the subcommand's section.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a model on the manifest's training split.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// M1, M2, M3, M_MSE or M_NLL.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue training this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a split with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Suppress the weaker of simultaneous unvoiced/voiced peaks.
        #[arg(long)]
        prune: bool,
    },
    /// Score predictions against reference labels.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn quoted(key: &str, v: impl Into<toml::Value>) -> String {
    format!("{key}={}", v.into())
}

fn push_opt<T: Into<toml::Value>>(out: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push(quoted(key, v));
    }
}

fn path_value(p: PathBuf) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

fn int(v: impl TryInto<i64>) -> toml::Value {
    toml::Value::Integer(v.try_into().unwrap_or(i64::MAX))
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn execute(cli: Cli) -> crate::Result<()> {
    let file = cli.config.as_deref();
    let mut set = Vec::new();
    match cli.command {
        Command::Synth { out_dir, seed, n_train, n_test } => {
            push_opt(&mut set, "out_dir", out_dir.map(path_value));
            push_opt(&mut set, "seed", seed.map(int));
            push_opt(&mut set, "n_train", n_train.map(int));
            push_opt(&mut set, "n_test", n_test.map(int));
            set.extend(cli.set);
            let c: SynthConfig = config::load_section(file, "synth", &set)?;
            cmd_synth(&c)?;
        }
        Command::Train { manifest, checkpoint, trace, method, epochs, seed, resume } => {
            push_opt(&mut set, "manifest", manifest.map(path_value));
            push_opt(&mut set, "checkpoint", checkpoint.map(path_value));
            push_opt(&mut set, "trace", trace.map(path_value));
            push_opt(&mut set, "method", method.map(|m| {
                // accept the same spellings as Method::from_str
                match m.parse::<crate::Method>() {
                    Ok(m) => toml::Value::String(m.as_str().to_string()),
                    Err(_) => toml::Value::String(m),
                }
            }));
            push_opt(&mut set, "epochs", epochs.map(int));
            push_opt(&mut set, "seed", seed.map(int));
            push_opt(&mut set, "resume", resume.map(path_value));
            set.extend(cli.set);
            let c: TrainRunConfig = config::load_section(file, "train", &set)?;
            cmd_train(&c)?;
        }
        Command::Predict { checkpoint, manifest, out_dir, prune } => {
            push_opt(&mut set, "checkpoint", checkpoint.map(path_value));
            push_opt(&mut set, "manifest", manifest.map(path_value));
            push_opt(&mut set, "out_dir", out_dir.map(path_value));
            if prune {
                set.push("prune=true".into());
            }
            set.extend(cli.set);
            let c: PredictConfig = config::load_section(file, "predict", &set)?;
            cmd_predict(&c)?;
        }
        Command::Eval { manifest, predictions, out_dir, seed } => {
            push_opt(&mut set, "manifest", manifest.map(path_value));
            push_opt(&mut set, "predictions", predictions.map(path_value));
            push_opt(&mut set, "out_dir", out_dir.map(path_value));
            push_opt(&mut set, "seed", seed.map(int));
            set.extend(cli.set);
            let c: EvalConfig = config::load_section(file, "eval", &set)?;
            cmd_eval(&c)?;
        }
    }
    Ok(())
}
