use log::{debug, warn};

use crate::quantizer::QuantParams;
use crate::solver::{
    iterate, primal_update, IterateState, Problem, Residuals, SolveOptions, SolveOutcome,
};

use super::message::{Message, PartyId};
use super::party::{BusNode, CloudNode, LineNode, PublicWeights};
use super::transcript::Transcript;
use super::transport::Transport;
use super::{ProtocolConfig, ProtocolError};

/// What the session saw in one iteration, kept when
/// [`ProtocolConfig::audit`] is set. All integers are fixed-point values.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub iteration: usize,
    pub challenges: Vec<u64>,
    /// Shared injections, per bus.
    pub secrets: Vec<Vec<i64>>,
    /// Integers each bus reconstructed for `C_p / delta1_bar`.
    pub bus_openings: Vec<Vec<i64>>,
    /// Integers each line owner reconstructed for its flow.
    pub line_openings: Vec<Vec<i64>>,
}

#[derive(Debug)]
pub struct PrivateOutcome {
    pub solve: SolveOutcome,
    pub transcript: Transcript,
    pub audit: Vec<AuditRecord>,
    /// Rounds that were aborted and run again.
    pub retries: usize,
}

/// Every party of a run, in a fixed order: buses, clouds, line owners.
pub fn parties(problem: &Problem, clouds: usize) -> Vec<PartyId> {
    let n = problem.bus_count();
    (1..=n)
        .map(PartyId::Bus)
        .chain((1..=clouds).map(PartyId::Cloud))
        .chain((1..=problem.topology.line_count()).map(PartyId::Line))
        .collect()
}

struct Session<'a> {
    problem: &'a Problem,
    config: &'a ProtocolConfig,
    transport: &'a mut dyn Transport,
    weights: PublicWeights,
    buses: Vec<BusNode>,
    clouds: Vec<CloudNode>,
    lines: Vec<LineNode>,
    transcript: Transcript,
    audit: Vec<AuditRecord>,
    retries: usize,
    forced_duplicates: usize,
}

/// Runs the primal-dual iteration with every network-wide quantity obtained
/// through the clouds. Stopping uses the same test as the reference run.
pub fn run_algorithm1(
    problem: &Problem,
    config: &ProtocolConfig,
    transport: &mut dyn Transport,
    opts: &SolveOptions,
    transcript: Transcript,
) -> Result<PrivateOutcome, ProtocolError> {
    config.check()?;
    let field = config.sharing.field();
    let init = problem.initial_state();
    let caps = problem.flow_caps();
    let mut session = Session {
        problem,
        config,
        weights: PublicWeights::from_problem(problem),
        buses: (1..=problem.bus_count())
            .map(|k| {
                BusNode::new(
                    k,
                    config.seed,
                    config.sharing,
                    config.quant,
                    config.dual_quant,
                    problem.delta1_bar(),
                    problem.slots(),
                )
            })
            .collect(),
        clouds: (1..=config.sharing.clouds())
            .map(|u| CloudNode::new(u, config.seed, field))
            .collect(),
        lines: (0..problem.topology.line_count())
            .map(|l| {
                LineNode::new(
                    l + 1,
                    init.mu_lower[l].clone(),
                    init.mu_upper[l].clone(),
                    caps[l],
                    problem.steps.beta,
                    config.sharing,
                    config.quant,
                    config.dual_quant,
                )
            })
            .collect(),
        transport,
        transcript,
        audit: Vec::new(),
        retries: 0,
        forced_duplicates: config.forced_duplicate_rounds,
    };
    let solve = iterate(problem, opts, init, |state| session.step(state))?;
    session.transcript.flush()?;
    Ok(PrivateOutcome {
        solve,
        transcript: session.transcript,
        audit: session.audit,
        retries: session.retries,
    })
}

impl Session<'_> {
    fn step(
        &mut self,
        state: &mut IterateState,
    ) -> Result<(Residuals, Vec<Vec<f64>>), ProtocolError> {
        let iter = state.iteration;
        let injections = self.problem.injections(state);
        let mut failures = 0;
        let (cp, cd) = loop {
            match self.exchange(iter, &injections) {
                Ok(v) => break v,
                Err(e) if e.is_retryable() => {
                    failures += 1;
                    self.retries += 1;
                    self.transport.reset();
                    if failures > self.config.retry_budget {
                        return Err(ProtocolError::RetryBudgetExhausted {
                            iter,
                            attempts: failures,
                            last: Box::new(e),
                        });
                    }
                    warn!("iteration {iter}: round aborted ({e}), retry {failures}");
                }
                Err(e) => return Err(e),
            }
        };
        for (l, line) in self.lines.iter_mut().enumerate() {
            line.commit();
            state.mu_lower[l].clone_from(&line.mu_lower);
            state.mu_upper[l].clone_from(&line.mu_upper);
        }
        let res = primal_update(self.problem, state, &cp, &cd)?;
        let flows = self.problem.flows(&self.problem.injections(state));
        Ok((res, flows))
    }

    fn post(&mut self, msg: Message) -> Result<(), ProtocolError> {
        self.transcript.record(&msg)?;
        if msg.to == PartyId::AllBuses {
            for k in 1..=self.buses.len() {
                let mut copy = msg.clone();
                copy.to = PartyId::Bus(k);
                self.transport.send(&copy)?;
            }
        } else {
            self.transport.send(&msg)?;
        }
        Ok(())
    }

    fn collect(&mut self, party: PartyId, count: usize) -> Result<Vec<Message>, ProtocolError> {
        let mut got = self
            .transport
            .collect(party, count, self.config.round_timeout)?;
        got.sort_by_key(|m| m.from);
        Ok(got)
    }

    #[allow(clippy::type_complexity)]
    fn exchange(
        &mut self,
        iter: usize,
        injections: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ProtocolError> {
        let c = self.clouds.len();
        let n = self.buses.len();
        let h = self.lines.len();

        let forced = if self.forced_duplicates > 0 {
            self.forced_duplicates -= 1;
            true
        } else {
            false
        };
        let mut challenges = Vec::with_capacity(c);
        for u in 0..c {
            let m = match (forced, u) {
                (true, u) if u > 0 => {
                    let a = challenges
                        .first()
                        .and_then(|m: &Message| m.alpha)
                        .unwrap_or(1);
                    self.clouds[u].challenge_with(iter, a)
                }
                _ => self.clouds[u].challenge(iter),
            };
            challenges.push(m);
        }
        let alphas: Vec<u64> = challenges.iter().filter_map(|m| m.alpha).collect();
        for m in challenges {
            self.post(m)?;
        }

        let mut secrets = Vec::with_capacity(n);
        for k in 0..n {
            let party = self.buses[k].party();
            let got = self.collect(party, c)?;
            let (shares, ints) = self.buses[k].share(iter, &got, &injections[k])?;
            secrets.push(ints);
            for m in shares {
                self.post(m)?;
            }
        }
        check_headroom(&self.config.quant, &self.weights, &secrets)?;

        for u in 0..c {
            let party = self.clouds[u].party();
            let got = self.collect(party, n)?;
            for m in self.clouds[u].aggregate(iter, &got, &self.weights)? {
                self.post(m)?;
            }
        }

        let mut cp = Vec::with_capacity(n);
        let mut bus_openings = Vec::with_capacity(n);
        for k in 0..n {
            let party = self.buses[k].party();
            let got = self.collect(party, c)?;
            let (v, ints) = self.buses[k].open_coupling(iter, &got)?;
            cp.push(v);
            bus_openings.push(ints);
        }
        let mut line_openings = Vec::with_capacity(h);
        for l in 0..h {
            let party = self.lines[l].party();
            let got = self.collect(party, c)?;
            line_openings.push(self.lines[l].open_flow(iter, &got)?);
        }

        for l in 0..h {
            for m in self.lines[l].report(iter)? {
                self.post(m)?;
            }
        }
        for u in 0..c {
            let party = self.clouds[u].party();
            let got = self.collect(party, h)?;
            for m in
                self.clouds[u].combine_duals(iter, &got, &self.weights, &self.config.dual_quant)?
            {
                self.post(m)?;
            }
        }
        let mut cd = Vec::with_capacity(n);
        for k in 0..n {
            let party = self.buses[k].party();
            let got = self.collect(party, c)?;
            cd.push(self.buses[k].open_dual(iter, &got)?);
        }

        debug!("iteration {iter}: exchange complete");
        if self.config.audit {
            self.audit.push(AuditRecord {
                iteration: iter,
                challenges: alphas,
                secrets,
                bus_openings,
                line_openings,
            });
        }
        Ok((cp, cd))
    }
}

/// The clouds cannot see the integers they combine, so the session checks
/// on their behalf that no weighted sum wraps around the modulus.
fn check_headroom(
    quant: &QuantParams,
    w: &PublicWeights,
    secrets: &[Vec<i64>],
) -> Result<(), ProtocolError> {
    for t in 0..w.slots {
        let col: Vec<i64> = secrets.iter().map(|s| s[t]).collect();
        for weights in w.pi.iter().chain(&w.z) {
            quant.check_weighted_headroom(weights, &col)?;
        }
    }
    Ok(())
}
