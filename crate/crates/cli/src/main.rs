//! `svsp`: every protocol role behind one binary.
//!
//! Exit codes: 0 success (or attack contained), 1 attack not contained,
//! 2 configuration or startup error, 3 halted by the server, 4 aborted.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;
use tracing_subscriber::EnvFilter;

use config::{DelayRange, Layers};
use svsp_core::crypto::RsaKeyPair;
use svsp_core::endpoints::{
    attack_contained, attack_no_token, attack_replay, capture_tokens, fetch_with, FetchOptions,
    Role, Scenario, Server, ServerConfig,
};
use svsp_core::transport::{NetConditions, SplitMix64};
use svsp_core::wire::{ClientConfig, FetchReport, Outcome, SessionConfig};

const EXIT_OK: u8 = 0;
const EXIT_NOT_CONTAINED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_HALTED: u8 = 3;
const EXIT_ABORTED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "svsp", version, about = "Token-gated datagram streaming")]
struct Cli {
    /// key=value settings file, lowest precedence
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Log filter for stderr (e.g. info, debug, svsp_core=trace)
    #[arg(long, global = true, value_name = "FILTER")]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an RSA key pair; prints p, q, n, e, d in decimal
    Keygen {
        /// Modulus size; each prime gets half
        #[arg(long)]
        bits: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve files from a directory until interrupted
    Serve {
        /// Directory whose files are served by relative name
        #[arg(long, value_name = "DIR")]
        root: Option<PathBuf>,
        /// UDP listen address [default: 127.0.0.1:7878]
        #[arg(long, value_name = "ADDR")]
        bind: Option<SocketAddr>,
        /// Fixes DH keys and token nonces (random when absent)
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Fetch one file, writing it to --out
    Fetch {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run an attacker against a server; succeeds when the server contains it
    Attack {
        #[arg(long, value_enum)]
        mode: AttackMode,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Run a fetch entirely in-process over the network simulator
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Drop probability per datagram
        #[arg(long)]
        loss: Option<f64>,
        #[arg(long)]
        reorder: Option<f64>,
        #[arg(long)]
        dup: Option<f64>,
        /// Single-bit corruption probability per datagram
        #[arg(long)]
        corrupt: Option<f64>,
        /// Per-datagram delay range in ms, MIN:MAX
        #[arg(long)]
        delay: Option<DelayRange>,
        /// Content size in bytes
        #[arg(long)]
        size: Option<u64>,
        #[arg(long, value_enum)]
        attacker: Option<AttackMode>,
        /// Write the full event trace as JSON lines
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
}

#[derive(Args, Debug)]
struct SessionArgs {
    /// Chunks per token window
    #[arg(long = "window")]
    window_size: Option<u16>,
    #[arg(long)]
    chunk_size: Option<u16>,
    #[arg(long)]
    token_timeout_ms: Option<u64>,
    /// Pokes sent before halting a silent client
    #[arg(long)]
    max_pokes: Option<u32>,
}

#[derive(Args, Debug)]
struct TargetArgs {
    /// Server address, host:port
    #[arg(long, value_name = "ADDR")]
    server: Option<String>,
    /// Content name relative to the server root
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Client RSA modulus size
    #[arg(long)]
    rsa_bits: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AttackMode {
    NoToken,
    Replay,
}

/// A failure before any protocol work started.
struct Startup(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Startup {
    fn from(e: E) -> Self {
        Self(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let layers = match Layers::load(cli.config.as_deref(), std::env::vars()) {
        Ok(layers) => layers,
        Err(err) => return fail(err),
    };
    let filter = match layers.pick_or(cli.log.clone(), "log", "info".to_string()) {
        Ok(f) => f,
        Err(err) => return fail(err),
    };
    let filter = match EnvFilter::try_new(&filter) {
        Ok(f) => f,
        Err(err) => return fail(anyhow!("log filter {filter:?}: {err}")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(cli.command, &layers) {
        Ok(code) => ExitCode::from(code),
        Err(Startup(err)) => fail(err),
    }
}

fn fail(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(EXIT_CONFIG)
}

fn run(command: Command, layers: &Layers) -> Result<u8, Startup> {
    match command {
        Command::Keygen { bits, seed } => keygen(layers, bits, seed),
        Command::Serve {
            root,
            bind,
            seed,
            session,
        } => serve(layers, root, bind, seed, &session),
        Command::Fetch { target, out } => fetch(layers, &target, out),
        Command::Attack { mode, target } => attack(layers, mode, &target),
        Command::Simulate {
            seed,
            loss,
            reorder,
            dup,
            corrupt,
            delay,
            size,
            attacker,
            trace,
            session,
        } => {
            let conditions = NetConditions {
                loss_prob: layers.pick_or(loss, "loss_prob", 0.0)?,
                reorder_prob: layers.pick_or(reorder, "reorder_prob", 0.0)?,
                duplicate_prob: layers.pick_or(dup, "duplicate_prob", 0.0)?,
                corrupt_prob: layers.pick_or(corrupt, "corrupt_prob", 0.0)?,
                delay_ms: {
                    let DelayRange(lo, hi) = layers.pick_or(delay, "delay_ms", DelayRange(0, 0))?;
                    (lo, hi)
                },
                seed: layers.pick_or(seed, "seed", 0)?,
            };
            conditions.validate()?;
            let size = layers.pick_or(size, "size", 1 << 20)?;
            simulate(layers, conditions, size, attacker, trace, &session)
        }
    }
}

fn session_config(layers: &Layers, args: &SessionArgs) -> Result<SessionConfig> {
    let defaults = SessionConfig::default();
    let config = SessionConfig {
        chunk_size: layers.pick_or(args.chunk_size, "chunk_size", defaults.chunk_size)?,
        window_size: layers.pick_or(args.window_size, "window_size", defaults.window_size)?,
        token_timeout_ms: layers.pick_or(
            args.token_timeout_ms,
            "token_timeout_ms",
            defaults.token_timeout_ms,
        )?,
        max_pokes: layers.pick_or(args.max_pokes, "max_pokes", defaults.max_pokes)?,
    };
    config.validate()?;
    Ok(config)
}

fn keygen(layers: &Layers, bits: u64, seed: Option<u64>) -> Result<u8, Startup> {
    let seed = layers.pick_or(seed, "seed", 0)?;
    let pair = RsaKeyPair::generate(bits, seed)?;
    let mut out = std::io::stdout().lock();
    for value in [pair.p(), pair.q(), pair.n(), pair.e(), pair.d()] {
        writeln!(out, "{value}")?;
    }
    Ok(EXIT_OK)
}

fn serve(
    layers: &Layers,
    root: Option<PathBuf>,
    bind: Option<SocketAddr>,
    seed: Option<u64>,
    session: &SessionArgs,
) -> Result<u8, Startup> {
    let root: PathBuf = layers.require(root, "root")?;
    let bind = layers.pick_or(bind, "bind", SocketAddr::from(([127, 0, 0, 1], 7878)))?;
    let mut config = ServerConfig::new(bind, root);
    config.session = session_config(layers, session)?;
    config.seed = layers.pick(seed, "seed")?;
    config.log_level = layers.pick_or(None, "log", "info".to_string())?;

    let server = Server::bind(&config)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed))
        .context("installing signal handler")?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "listening={}", server.local_addr())?;
        out.flush()?;
    }
    server.run(&shutdown)?;
    Ok(EXIT_OK)
}

struct Target {
    server: SocketAddr,
    name: String,
    seed: u64,
    options: FetchOptions,
}

fn target(layers: &Layers, args: &TargetArgs) -> Result<Target> {
    let server: String = layers.require(args.server.clone(), "server")?;
    let server = server
        .to_socket_addrs()
        .with_context(|| format!("resolving {server}"))?
        .next()
        .ok_or_else(|| anyhow!("{server} resolved to no address"))?;
    let mut options = FetchOptions::default();
    options.client.rsa_bits =
        layers.pick_or(args.rsa_bits, "rsa_bits", ClientConfig::default().rsa_bits)?;
    Ok(Target {
        server,
        name: layers.require(args.name.clone(), "name")?,
        seed: layers.pick(args.seed, "seed")?.unwrap_or_else(entropy),
        options,
    })
}

fn entropy() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    SplitMix64::new(nanos ^ u64::from(std::process::id())).next_u64()
}

fn print_report(extra: &[(&str, String)], report: &FetchReport) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for (k, v) in extra {
        writeln!(out, "{k}={v}")?;
    }
    out.write_all(report.to_kv_lines().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn outcome_code(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Done => EXIT_OK,
        Outcome::Halted(_) => EXIT_HALTED,
        Outcome::Aborted(_) | Outcome::Incomplete => EXIT_ABORTED,
    }
}

fn fetch(layers: &Layers, args: &TargetArgs, out: Option<PathBuf>) -> Result<u8, Startup> {
    let target = target(layers, args)?;
    let path: PathBuf = layers.require(out, "out")?;
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut sink = BufWriter::new(file);
    let report = fetch_with(
        target.server,
        &target.name,
        &mut sink,
        target.seed,
        &target.options,
    )?;
    sink.flush().context("flushing output")?;
    drop(sink);
    if report.outcome != Outcome::Done {
        // never leave a partial file that looks like a finished download
        let _ = fs::remove_file(&path);
    }
    info!(outcome = %report.outcome, "fetch complete");
    print_report(&[], &report)?;
    Ok(outcome_code(report.outcome))
}

fn attack(layers: &Layers, mode: AttackMode, args: &TargetArgs) -> Result<u8, Startup> {
    let target = target(layers, args)?;
    let report = match mode {
        AttackMode::NoToken => {
            attack_no_token(target.server, &target.name, target.seed, &target.options)?
        }
        AttackMode::Replay => {
            let capture_seed = SplitMix64::new(target.seed).next_u64();
            let (first, tokens) =
                capture_tokens(target.server, &target.name, capture_seed, &target.options)?;
            info!(outcome = %first.outcome, tokens = tokens.len(), "captured transcript");
            attack_replay(
                target.server,
                &target.name,
                tokens,
                target.seed,
                &target.options,
            )?
        }
    };
    let contained = attack_contained(&report);
    print_report(&[("contained", contained.to_string())], &report)?;
    Ok(if contained {
        EXIT_OK
    } else {
        EXIT_NOT_CONTAINED
    })
}

fn simulate(
    layers: &Layers,
    conditions: NetConditions,
    size: u64,
    attacker: Option<AttackMode>,
    trace: Option<PathBuf>,
    session: &SessionArgs,
) -> Result<u8, Startup> {
    let mut content = vec![0u8; usize::try_from(size).context("size")?];
    SplitMix64::new(conditions.seed).fill_bytes(&mut content);
    let role = match attacker {
        None => Role::Honest,
        Some(AttackMode::NoToken) => Role::NoToken,
        Some(AttackMode::Replay) => Role::Replay,
    };
    let seed = conditions.seed;
    let scenario = Scenario::new(content, seed)
        .conditions(conditions)
        .session(session_config(layers, session)?)
        .role(role);
    let outcome = match scenario.run() {
        Ok(outcome) => outcome,
        Err(err) => {
            eprintln!("error: simulation failed: {err}");
            return Ok(EXIT_ABORTED);
        }
    };
    if let Some(path) = trace {
        fs::write(&path, outcome.sim.trace_jsonl())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let stats = outcome.sim.stats;
    let mut summary = vec![
        ("seed", seed.to_string()),
        ("datagrams", stats.datagrams.to_string()),
        ("delivered", stats.delivered.to_string()),
        ("dropped", stats.dropped.to_string()),
        ("duplicated", stats.duplicated.to_string()),
        ("corrupted", stats.corrupted.to_string()),
        ("trace_events", outcome.sim.trace.len().to_string()),
        ("end_time_ms", outcome.sim.end_time_ms.to_string()),
        ("leaked_bytes", outcome.leaked_bytes().to_string()),
    ];
    let code = if role == Role::Honest {
        summary.push(("sha256_match", outcome.output_matches().to_string()));
        outcome_code(outcome.report().outcome)
    } else {
        let contained = attack_contained(outcome.report());
        summary.push(("contained", contained.to_string()));
        if contained {
            EXIT_OK
        } else {
            EXIT_NOT_CONTAINED
        }
    };
    print_report(&summary, outcome.report())?;
    Ok(code)
}
