use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use privgrid::harness::run::{parse_links, AdversaryKind};
use privgrid::harness::{
    emit_traces, load_scenario, run_adversary, run_scenario, write_bundled, HarnessError, RunMode,
    RunOptions, Scenario, TransportKind,
};

#[derive(Parser)]
#[command(
    name = "privgrid",
    version,
    about = "Private decentralized control of solar and batteries on a radial feeder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write traces.
    Run(RunArgs),
    /// Record a short private run and analyse what an adversary learns.
    Adversary(AdversaryArgs),
    /// Write the bundled 13-bus scenario and its synthetic profiles.
    GenScenario(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Plaintext,
    Private,
    Both,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportArg,
    /// First listener address for the TCP transport.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: SocketAddr,
    /// Mirror every protocol message as NDJSON to this address.
    #[arg(long)]
    connect: Option<SocketAddr>,
    /// Write every protocol message as NDJSON to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    eps0: Option<f64>,
    /// Fixed-point resolution exponent for injections.
    #[arg(long)]
    zeta: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "both")]
    mode: Mode,
    /// Run exactly `--max-iter` iterations.
    #[arg(long)]
    fixed_iterations: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "attack")]
struct Attack {
    /// Pool the views of clouds 1..=K.
    #[arg(long, value_name = "K")]
    collusion: Option<usize>,
    /// Tap `bus:cloud` links, comma separated.
    #[arg(long, value_name = "LINKS")]
    eavesdrop: Option<String>,
    /// Rebuild each bus's view from its own data alone.
    #[arg(long)]
    simulate: bool,
}

#[derive(Args)]
struct AdversaryArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    attack: Attack,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "scenarios")]
    out: PathBuf,
    #[arg(long, default_value_t = 96)]
    slots: usize,
}

fn prepare(c: &Common, mode: RunMode) -> Result<(Scenario, RunOptions), HarnessError> {
    let mut sc = load_scenario(&c.scenario)?;
    if let Some(seed) = c.seed {
        sc.seed = seed;
    }
    if let Some(z) = c.zeta {
        sc.set_zeta(z)
            .map_err(|e| HarnessError::Usage(format!("--zeta {z}: {e}")))?;
        info!(
            "quantizer: theta {} gamma {} zeta {}",
            sc.quant.theta(),
            sc.quant.gamma(),
            sc.quant.zeta()
        );
    }
    if let Some(m) = c.max_iter {
        sc.solve.max_iter = m;
    }
    if let Some(e) = c.eps0 {
        if !(e > 0.0) {
            return Err(HarnessError::Usage("--eps0 must be positive".into()));
        }
        sc.solve.eps0 = e;
    }
    if c.transport == TransportArg::Inproc && c.listen.port() != 0 {
        warn!("--listen is ignored with the in-process transport");
    }
    let mut opts = RunOptions::new(mode, sc.solve);
    opts.transport = match c.transport {
        TransportArg::Inproc => TransportKind::InProc,
        TransportArg::Tcp => TransportKind::Tcp(c.listen),
    };
    opts.mirror = c.connect;
    opts.transcript_file = c.transcript.clone();
    Ok((sc, opts))
}

fn run(args: RunArgs) -> Result<ExitCode, HarnessError> {
    let mode = match args.mode {
        Mode::Plaintext => RunMode::Plaintext,
        Mode::Private => RunMode::Private,
        Mode::Both => RunMode::Both,
    };
    let (sc, mut opts) = prepare(&args.common, mode)?;
    opts.solve.fixed_iterations = args.fixed_iterations;
    let report = run_scenario(&sc, &opts)?;
    emit_traces(&report, &args.common.out)?;
    for (label, out, secs) in [
        (
            "plaintext",
            report.plaintext.as_ref(),
            report.plaintext_seconds,
        ),
        (
            "private",
            report.private.as_ref().map(|p| &p.solve),
            report.private_seconds,
        ),
    ] {
        if let Some(o) = out {
            println!(
                "{label:>9}: {} iterations, converged {}, {:.2} s",
                o.iterations(),
                o.converged,
                secs.unwrap_or(0.0)
            );
        }
    }
    if let Some(d) = report.deviation {
        println!("max set-point deviation: {d:.3e}");
    }
    println!("wrote {}", args.common.out.display());
    // with a reference run, the private run is held to its iteration count
    let converged = match (&report.plaintext, &report.private) {
        (Some(p), _) => p.converged,
        (None, Some(p)) => p.solve.converged,
        (None, None) => true,
    };
    if !converged && !args.fixed_iterations {
        eprintln!("did not converge within {} iterations", opts.solve.max_iter);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn adversary(args: AdversaryArgs) -> Result<ExitCode, HarnessError> {
    let mut common = args.common;
    common.max_iter.get_or_insert(3);
    let (sc, mut opts) = prepare(&common, RunMode::Private)?;
    opts.solve.fixed_iterations = true;
    let kind = match (
        args.attack.collusion,
        args.attack.eavesdrop,
        args.attack.simulate,
    ) {
        (Some(k), _, _) => AdversaryKind::Collusion(k),
        (_, Some(links), _) => AdversaryKind::Eavesdrop(parse_links(&links)?),
        _ => AdversaryKind::Simulate,
    };
    let outcome = run_adversary(&sc, &kind, &opts)?;
    let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    std::fs::create_dir_all(&common.out).map_err(|source| HarnessError::Io {
        path: common.out.clone(),
        source,
    })?;
    let path = common.out.join("adversary.json");
    std::fs::write(&path, format!("{text}\n")).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Adversary(a) => adversary(a),
        Command::GenScenario(a) => write_bundled(&a.out, a.slots)
            .map_err(HarnessError::from)
            .map(|p| {
                println!("wrote {}", p.display());
                ExitCode::SUCCESS
            }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
