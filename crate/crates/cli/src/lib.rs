//! The `specex` command: headless runs, log verification, benchmark tables,
//! search-space accounting and the session server.

pub mod server;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use specex_core::engine::{search_space_accounting, TriggerMode};
use specex_core::headless::{bench_matrix, format_table, run, AutoPolicy, BenchCell};
use specex_core::service::{normalize_timestamps, replay_file, to_jsonl, ReplayOptions, Session, SessionConfig, SessionError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGENCE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "specex", version, about = "Speculative execution for an incremental topic model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a whole session with an automatic accept policy.
    Run(RunArgs),
    /// Re-execute a provenance log and verify every digest.
    Replay(ReplayArgs),
    /// Run a matrix of (n, b, policy) cells and print a table.
    Bench(BenchArgs),
    /// Print the size of the speculation search space.
    Accounting(AccountingArgs),
    /// Serve sessions over HTTP and websockets.
    Serve(ServeArgs),
}

/// Flags shared by every command that opens a session.
#[derive(Debug, Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// TOML session config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// metric, every-buffer or off.
    #[arg(long, value_parser = parse_trigger)]
    pub trigger: Option<TriggerMode>,
}

impl SessionArgs {
    pub fn load(&self) -> Result<SessionConfig, SessionError> {
        let mut config = match &self.config {
            Some(p) => SessionConfig::load(p)?,
            None => SessionConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(t) = self.trigger {
            config.speculation.trigger = t;
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// none, top1, random:<p> or reject.
    #[arg(long, default_value = "top1")]
    pub policy: AutoPolicy,
    /// Results JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Provenance log (JSONL).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write timestamps as zero so logs of equal runs are byte-identical.
    #[arg(long)]
    pub normalize_timestamps: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Corpus to use instead of the path recorded in the log.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, value_delimiter = ',', default_value = "7")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub b: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "reject")]
    pub policy: Vec<AutoPolicy>,
    /// Rows as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AccountingArgs {
    #[arg(long, default_value_t = 280)]
    pub k: u64,
    #[arg(long, default_value_t = 7)]
    pub n: u64,
    #[arg(long, default_value_t = 10)]
    pub b: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Corpus for sessions created without one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_trigger(s: &str) -> Result<TriggerMode, String> {
    match s {
        "metric" => Ok(TriggerMode::Metric),
        "every-buffer" => Ok(TriggerMode::EveryBuffer),
        "off" => Ok(TriggerMode::Off),
        _ => Err(format!("unknown trigger {s:?}; expected metric, every-buffer or off")),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                SessionError::Divergence { .. } | SessionError::NoEntries | SessionError::MalformedLog(_) => {
                    EXIT_DIVERGENCE
                }
                _ => EXIT_USAGE,
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), SessionError> {
    std::fs::write(path, text)?;
    Ok(())
}

fn execute(command: Command, out: &mut dyn Write) -> Result<u8, SessionError> {
    match command {
        Command::Run(a) => {
            let mut session = Session::create(&a.session.corpus, a.session.load()?)?;
            let results = run(&mut session, a.policy)?;
            if let Some(log) = &a.log {
                let entries = session.provenance().entries();
                let entries = if a.normalize_timestamps {
                    normalize_timestamps(entries)
                } else {
                    entries.to_vec()
                };
                write_file(log, &to_jsonl(&entries))?;
            }
            let json = serde_json::to_string_pretty(&results)?;
            match &a.out {
                Some(p) => {
                    write_file(p, &json)?;
                    writeln!(
                        out,
                        "{} sandboxes, {} accepted, {} rejected, final {}",
                        results.sandboxes_total, results.decisions.accepted, results.decisions.rejected, results.final_digest
                    )?;
                }
                None => writeln!(out, "{json}")?,
            }
            Ok(EXIT_OK)
        }
        Command::Replay(a) => {
            let options = ReplayOptions { corpus: a.corpus };
            let session = replay_file(&a.log, &options)?;
            writeln!(
                out,
                "ok: {} entries verified, final digest {}",
                session.provenance().len(),
                session.main().digest()
            )?;
            Ok(EXIT_OK)
        }
        Command::Bench(a) => {
            let mut base = a.session.load()?;
            if a.session.trigger.is_none() && a.session.config.is_none() {
                base.speculation.trigger = TriggerMode::EveryBuffer;
            }
            let mut cells = Vec::new();
            for &n in &a.n {
                for &b in &a.b {
                    for &policy in &a.policy {
                        cells.push(BenchCell { n, b, policy });
                    }
                }
            }
            let rows = bench_matrix(&a.session.corpus, &base, &cells)?;
            write!(out, "{}", format_table(&rows))?;
            if let Some(p) = &a.out {
                write_file(p, &serde_json::to_string_pretty(&rows)?)?;
            }
            Ok(EXIT_OK)
        }
        Command::Accounting(a) => {
            let s = search_space_accounting(a.k, a.n, a.b);
            writeln!(out, "{}", serde_json::to_string_pretty(&s)?)?;
            Ok(EXIT_OK)
        }
        Command::Serve(a) => {
            let config = match &a.config {
                Some(p) => SessionConfig::load(p)?,
                None => SessionConfig::default(),
            };
            let state = server::AppState::new(a.corpus, config);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(&a.addr, state))?;
            Ok(EXIT_OK)
        }
    }
}
