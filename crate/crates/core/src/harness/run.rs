//! Experiment runs and their on-disk output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use super::scenario::{Scenario, ScenarioError};
use crate::grid::ess_soc_trajectory;
use crate::protocol::adversary::{
    collusion_analysis, collusion_reconstruct, eavesdropper_check, simulator_construct,
    CollusionReport, EavesdropReport, PolyKey, Reconstruction,
};
use crate::protocol::{
    parties, run_algorithm1, InProcTransport, MessageKind, PartyId, PrivateOutcome, ProtocolConfig,
    ProtocolError, TcpTransport, Transcript, Transport,
};
use crate::solver::{
    objective, solve_plaintext, IterateState, Objective, Problem, SolveOptions, SolveOutcome,
    SolverError, TraceRow,
};

/// Bumped whenever a field of `summary.json` changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.to_path_buf();
    move |source| HarnessError::Io { path, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Plaintext,
    Private,
    Both,
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plaintext" => Ok(RunMode::Plaintext),
            "private" => Ok(RunMode::Private),
            "both" => Ok(RunMode::Both),
            _ => Err(format!("unknown mode `{s}` (plaintext, private, both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    /// Loopback listeners starting at this address (port 0: ephemeral).
    Tcp(SocketAddr),
}

impl TransportKind {
    fn label(&self) -> &'static str {
        match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp(_) => "tcp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: RunMode,
    pub transport: TransportKind,
    /// Copy every protocol message, as NDJSON, to this TCP endpoint.
    pub mirror: Option<SocketAddr>,
    /// Also write every protocol message to this file.
    pub transcript_file: Option<PathBuf>,
    pub solve: SolveOptions,
}

impl RunOptions {
    pub fn new(mode: RunMode, solve: SolveOptions) -> Self {
        RunOptions {
            mode,
            transport: TransportKind::InProc,
            mirror: None,
            transcript_file: None,
            solve,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub scenario: String,
    pub mode: RunMode,
    pub transport: &'static str,
    pub problem: Problem,
    pub scenario_data: Scenario,
    pub plaintext: Option<SolveOutcome>,
    pub private: Option<PrivateOutcome>,
    /// Largest absolute difference between the two runs' device set points.
    pub deviation: Option<f64>,
    pub plaintext_seconds: Option<f64>,
    pub private_seconds: Option<f64>,
}

impl RunReport {
    /// The reference run if there is one, else the private run.
    pub fn primary(&self) -> &SolveOutcome {
        self.plaintext
            .as_ref()
            .or(self.private.as_ref().map(|p| &p.solve))
            .expect("every mode runs something")
    }
}

pub fn protocol_config(scenario: &Scenario) -> ProtocolConfig {
    ProtocolConfig::new(
        scenario.sharing,
        scenario.quant,
        scenario.dual_quant,
        scenario.seed,
    )
}

/// Largest `|a - b|` over all PV and battery set points.
pub fn max_deviation(a: &IterateState, b: &IterateState) -> f64 {
    a.pv.iter()
        .chain(&a.ess)
        .zip(b.pv.iter().chain(&b.ess))
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn run_private(
    problem: &Problem,
    config: &ProtocolConfig,
    opts: &RunOptions,
    keep_transcript: usize,
) -> Result<PrivateOutcome, HarnessError> {
    let mut transcript = Transcript::new(keep_transcript);
    let mut sinks: Vec<Box<dyn Write + Send>> = Vec::new();
    if let Some(addr) = opts.mirror {
        let stream = TcpStream::connect(addr).map_err(io_at(Path::new(&addr.to_string())))?;
        sinks.push(Box::new(BufWriter::new(stream)));
    }
    if let Some(path) = &opts.transcript_file {
        sinks.push(Box::new(BufWriter::new(
            File::create(path).map_err(io_at(path))?,
        )));
    }
    if !sinks.is_empty() {
        transcript = transcript.with_sink(Box::new(Tee(sinks)));
    }
    let mut transport: Box<dyn Transport> = match opts.transport {
        TransportKind::InProc => Box::new(InProcTransport::new()),
        TransportKind::Tcp(addr) => Box::new(
            TcpTransport::bind(&parties(problem, config.sharing.clouds()), addr)
                .map_err(ProtocolError::from)?,
        ),
    };
    Ok(run_algorithm1(
        problem,
        config,
        transport.as_mut(),
        &opts.solve,
        transcript,
    )?)
}

struct Tee(Vec<Box<dyn Write + Send>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        for w in &mut self.0 {
            w.write_all(buf)?;
        }
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.0.iter_mut().try_for_each(|w| w.flush())
    }
}

/// Reconstructed flows carry the rounding of every downstream injection,
/// up to half a quantization step each, so a private run cannot certify
/// feasibility more tightly than that.
pub fn private_feas_tol(scenario: &Scenario) -> f64 {
    let floor = 0.5 * scenario.topology.bus_count() as f64 * scenario.quant.resolution();
    scenario.solve.feas_tol.max(floor)
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport, HarnessError> {
    let problem = scenario.problem()?;
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        mode: opts.mode,
        transport: opts.transport.label(),
        problem: problem.clone(),
        scenario_data: scenario.clone(),
        plaintext: None,
        private: None,
        deviation: None,
        plaintext_seconds: None,
        private_seconds: None,
    };
    if matches!(opts.mode, RunMode::Plaintext | RunMode::Both) {
        let t0 = Instant::now();
        let out = solve_plaintext(&problem, &opts.solve)?;
        report.plaintext_seconds = Some(t0.elapsed().as_secs_f64());
        info!(
            "plaintext: {} iterations, converged {}",
            out.iterations(),
            out.converged
        );
        report.plaintext = Some(out);
    }
    if matches!(opts.mode, RunMode::Private | RunMode::Both) {
        let mut private_opts = opts.clone();
        private_opts.solve.feas_tol = private_feas_tol(scenario);
        if let Some(p) = &report.plaintext {
            // compare at equal iteration counts
            private_opts.solve.max_iter = p.iterations();
            private_opts.solve.fixed_iterations = true;
        }
        let t0 = Instant::now();
        let out = run_private(&problem, &protocol_config(scenario), &private_opts, 0)?;
        report.private_seconds = Some(t0.elapsed().as_secs_f64());
        info!(
            "private: {} iterations, {} messages, converged {}",
            out.solve.iterations(),
            out.transcript.total(),
            out.solve.converged
        );
        report.private = Some(out);
    }
    if let (Some(a), Some(b)) = (&report.plaintext, &report.private) {
        report.deviation = Some(max_deviation(&a.final_state, &b.solve.final_state));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub feas_tol: f64,
    pub min_flow: f64,
    /// `max(flow - cap)`, negative when every line has slack.
    pub max_over_cap: f64,
    pub min_soc_margin: f64,
    pub max_rate_excess: f64,
    /// Largest amount a PV set point leaves `[0, forecast]`.
    pub max_pv_excess: f64,
    pub feasible: bool,
}

pub fn feasibility(problem: &Problem, state: &IterateState, feas_tol: f64) -> Feasibility {
    let flows = problem.flows(&problem.injections(state));
    let min_flow = flows
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max_over_cap = flows
        .iter()
        .zip(problem.flow_caps())
        .flat_map(|(f, cap)| f.iter().map(move |x| x - cap))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut min_soc_margin = f64::INFINITY;
    let mut max_rate_excess = f64::NEG_INFINITY;
    for (unit, p) in problem.ess.iter().zip(&state.ess) {
        for s in ess_soc_trajectory(unit, p) {
            min_soc_margin = min_soc_margin.min(s - unit.soc_min).min(unit.soc_max - s);
        }
        for &x in p {
            max_rate_excess = max_rate_excess
                .max(x - unit.charge_cap)
                .max(-x - unit.discharge_cap);
        }
    }
    let max_pv_excess = problem
        .pv
        .iter()
        .zip(&state.pv)
        .flat_map(|(u, p)| p.iter().zip(&u.cap).map(|(x, c)| (-x).max(x - c)))
        .fold(f64::NEG_INFINITY, f64::max);
    let projection_tol = 1e-9;
    Feasibility {
        feas_tol,
        min_flow,
        max_over_cap,
        min_soc_margin,
        max_rate_excess,
        max_pv_excess,
        feasible: min_flow >= -feas_tol
            && max_pv_excess <= projection_tol
            && max_over_cap <= feas_tol
            && min_soc_margin >= -projection_tol
            && max_rate_excess <= projection_tol,
    }
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    iterations: usize,
    converged: bool,
    final_eps: f64,
    final_violation: f64,
    objective: Objective,
    feasibility: Feasibility,
    #[serde(skip_serializing_if = "Option::is_none")]
    protocol: Option<ProtocolSummary<'a>>,
}

#[derive(Debug, Serialize)]
struct ProtocolSummary<'a> {
    transcript_sha256: String,
    messages: std::collections::BTreeMap<MessageKind, usize>,
    retries: usize,
    clouds: usize,
    threshold: usize,
    quant: &'a crate::quantizer::QuantParams,
    dual_quant: &'a crate::quantizer::QuantParams,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    schema_version: u32,
    scenario: &'a str,
    mode: RunMode,
    transport: &'a str,
    seed: u64,
    slots: usize,
    buses: usize,
    solver: SolveOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    plaintext: Option<RunSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    private: Option<RunSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_deviation: Option<f64>,
}

fn run_summary<'a>(
    report: &'a RunReport,
    out: &SolveOutcome,
    private: Option<&'a PrivateOutcome>,
) -> RunSummary<'a> {
    let sc = &report.scenario_data;
    let tol = if private.is_some() {
        private_feas_tol(sc)
    } else {
        sc.solve.feas_tol
    };
    let last = out.trace.last();
    RunSummary {
        iterations: out.iterations(),
        converged: out.converged,
        final_eps: last.map_or(0.0, |r| r.eps_pv.max(r.eps_ess)),
        final_violation: last.map_or(0.0, |r| r.violation),
        objective: objective(&report.problem, &out.final_state),
        feasibility: feasibility(&report.problem, &out.final_state, tol),
        protocol: private.map(|p| ProtocolSummary {
            transcript_sha256: p.transcript.digest_hex(),
            messages: p.transcript.counts().clone(),
            retries: p.retries,
            clouds: sc.sharing.clouds(),
            threshold: sc.sharing.threshold(),
            quant: &sc.quant,
            dual_quant: &sc.dual_quant,
        }),
    }
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io_at(path))
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("slot".to_string())
        .chain((1..=n).map(|k| format!("{prefix}_{k}")))
        .collect()
}

fn slot_rows(series: &[Vec<f64>]) -> impl Iterator<Item = Vec<String>> + '_ {
    let t = series.first().map_or(0, Vec::len);
    (0..t).map(move |s| {
        std::iter::once(s.to_string())
            .chain(series.iter().map(|c| c[s].to_string()))
            .collect()
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Writes `convergence.csv`, `flows.csv`, `injections.csv`, `soc.csv` and
/// `summary.json` into `dir`. Profiles come from [`RunReport::primary`].
pub fn emit_traces(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut traces: Vec<(&str, &[TraceRow])> = Vec::new();
    if let Some(p) = &report.plaintext {
        traces.push(("plaintext", &p.trace));
    }
    if let Some(p) = &report.private {
        traces.push(("private", &p.solve.trace));
    }
    let header: Vec<String> = [
        "mode",
        "iteration",
        "eps_pv",
        "eps_ess",
        "violation",
        "mu_lower_norm",
        "mu_upper_norm",
    ]
    .map(String::from)
    .to_vec();
    write_csv(
        &dir.join("convergence.csv"),
        &header,
        traces.iter().flat_map(|(mode, rows)| {
            rows.iter().map(move |r| {
                vec![
                    mode.to_string(),
                    r.iteration.to_string(),
                    r.eps_pv.to_string(),
                    r.eps_ess.to_string(),
                    r.violation.to_string(),
                    norm(&r.mu_lower_norm).to_string(),
                    norm(&r.mu_upper_norm).to_string(),
                ]
            })
        }),
    )?;

    let problem = &report.problem;
    let state = &report.primary().final_state;
    let flows = problem.flows(&problem.injections(state));
    write_csv(
        &dir.join("flows.csv"),
        &columns("line", flows.len()),
        slot_rows(&flows),
    )?;
    let mut header = columns("pv", state.pv.len());
    header.extend((1..=state.ess.len()).map(|k| format!("ess_{k}")));
    let devices: Vec<Vec<f64>> = state.pv.iter().chain(&state.ess).cloned().collect();
    write_csv(&dir.join("injections.csv"), &header, slot_rows(&devices))?;
    let soc: Vec<Vec<f64>> = problem
        .ess
        .iter()
        .zip(&state.ess)
        .map(|(u, p)| ess_soc_trajectory(u, p))
        .collect();
    write_csv(
        &dir.join("soc.csv"),
        &columns("ess", soc.len()),
        slot_rows(&soc),
    )?;

    let sc = &report.scenario_data;
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        scenario: &report.scenario,
        mode: report.mode,
        transport: report.transport,
        seed: sc.seed,
        slots: problem.slots(),
        buses: problem.bus_count(),
        solver: sc.solve,
        plaintext: report
            .plaintext
            .as_ref()
            .map(|p| run_summary(report, p, None)),
        private: report
            .private
            .as_ref()
            .map(|p| run_summary(report, &p.solve, Some(p))),
        max_deviation: report.deviation,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(io_at(&path))?;

    // Wall-clock figures vary run to run, so they stay out of the summary.
    let timing = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "plaintext_seconds": report.plaintext_seconds,
        "private_seconds": report.private_seconds,
    });
    let path = dir.join("timing.json");
    std::fs::write(&path, format!("{timing:#}\n")).map_err(io_at(&path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryKind {
    /// The first `k` clouds pool their views.
    Collusion(usize),
    /// Taps on `(bus, cloud)` links.
    Eavesdrop(Vec<(usize, usize)>),
    /// Each bus rebuilds a view from its own data and its opened aggregate.
    Simulate,
}

#[derive(Debug, Serialize)]
#[serde(tag = "analysis", rename_all = "snake_case")]
pub enum AdversaryOutcome {
    Collusion {
        colluders: usize,
        threshold: usize,
        sampled: usize,
        perfectly_hiding: bool,
        min_candidates_consistent: usize,
        max_rank: usize,
    },
    ThresholdReached {
        colluders: usize,
        threshold: usize,
        sampled: usize,
        reconstructed_correctly: usize,
    },
    Eavesdrop {
        tapped_links: usize,
        polynomials_seen: usize,
        max_points: usize,
        opened: usize,
        opened_correctly: usize,
        assumption_breached: bool,
    },
    Simulate {
        views: usize,
        matching: usize,
    },
}

/// Samples the aggregate and share polynomials of every bus, for every slot
/// in `slots`, across the recorded iterations.
pub fn sample_keys(buses: usize, iterations: usize, slots: &[usize]) -> Vec<PolyKey> {
    let mut keys = Vec::new();
    for iter in 0..iterations {
        for bus in 1..=buses {
            for &slot in slots {
                for kind in [MessageKind::Share, MessageKind::Aggregate] {
                    keys.push(PolyKey {
                        kind,
                        owner: PartyId::Bus(bus),
                        iter,
                        slot,
                    });
                }
            }
        }
    }
    keys
}

/// Runs a short private session with full recording, then the analysis.
pub fn run_adversary(
    scenario: &Scenario,
    kind: &AdversaryKind,
    opts: &RunOptions,
) -> Result<AdversaryOutcome, HarnessError> {
    let problem = scenario.problem()?;
    let mut config = protocol_config(scenario);
    config.audit = matches!(kind, AdversaryKind::Simulate);
    let iters = opts.solve.max_iter;
    let out = run_private(&problem, &config, opts, usize::MAX)?;
    let msgs = out.transcript.messages();
    let policy = &scenario.sharing;
    let slots: Vec<usize> = (0..problem.slots())
        .step_by((problem.slots() / 8).max(1))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ 0xad7e_5a41);
    Ok(match kind {
        AdversaryKind::Collusion(k) => {
            let colluders: Vec<usize> = (1..=*k).collect();
            let keys = sample_keys(
                problem.bus_count(),
                iters.min(out.solve.iterations()),
                &slots,
            );
            match collusion_analysis(msgs, &colluders, policy, &keys, 10, &mut rng) {
                Ok(report) => collusion_outcome(&report),
                Err(ProtocolError::ThresholdReached {
                    colluders: c,
                    threshold,
                }) => {
                    let rec: Vec<Reconstruction> =
                        collusion_reconstruct(msgs, &colluders, policy, &keys)?;
                    AdversaryOutcome::ThresholdReached {
                        colluders: c,
                        threshold,
                        sampled: rec.len(),
                        reconstructed_correctly: rec
                            .iter()
                            .filter(|r| r.recovered == r.truth)
                            .count(),
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        AdversaryKind::Eavesdrop(links) => eavesdrop_outcome(&eavesdropper_check(
            msgs,
            links,
            problem.bus_count(),
            policy,
        )?),
        AdversaryKind::Simulate => {
            let field = policy.field();
            let mut views = 0;
            let mut matching = 0;
            for rec in &out.audit {
                for bus in 1..=problem.bus_count() {
                    for &t in &slots {
                        let own = scenario
                            .quant
                            .to_field(rec.secrets[bus - 1][t])
                            .map_err(ProtocolError::from)?;
                        let target = field.reduce_i128(rec.bus_openings[bus - 1][t] as i128);
                        let view = simulator_construct(
                            problem.pi(bus),
                            Some((bus - 1, own)),
                            target,
                            policy,
                            &mut rng,
                        )?;
                        views += 1;
                        if view.reconstructed == target {
                            matching += 1;
                        }
                    }
                }
            }
            AdversaryOutcome::Simulate { views, matching }
        }
    })
}

fn collusion_outcome(r: &CollusionReport) -> AdversaryOutcome {
    AdversaryOutcome::Collusion {
        colluders: r.colluders.len(),
        threshold: r.threshold,
        sampled: r.analyses.len(),
        perfectly_hiding: r.perfectly_hiding(),
        min_candidates_consistent: r
            .analyses
            .iter()
            .map(|a| a.candidates_consistent)
            .min()
            .unwrap_or(0),
        max_rank: r.analyses.iter().map(|a| a.rank).max().unwrap_or(0),
    }
}

fn eavesdrop_outcome(r: &EavesdropReport) -> AdversaryOutcome {
    AdversaryOutcome::Eavesdrop {
        tapped_links: r.tapped.len(),
        polynomials_seen: r.polynomials_seen,
        max_points: r.max_points,
        opened: r.opened,
        opened_correctly: r.opened_correctly,
        assumption_breached: r.assumption_breached,
    }
}

/// `bus:cloud` pairs separated by commas, e.g. `1:1,1:2,3:4`.
pub fn parse_links(text: &str) -> Result<Vec<(usize, usize)>, HarnessError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let bad = || HarnessError::Usage(format!("bad link `{pair}`, expected bus:cloud"));
            let (b, c) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok((b.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
        })
        .collect()
}
