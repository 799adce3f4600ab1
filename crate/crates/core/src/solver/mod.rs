//! Projected-gradient primal-dual iteration for the DER scheduling problem.
//!
//! Each PV unit and battery minimizes its own cost plus its share of the
//! feeder's line loss, while per-line multipliers price the flow limits
//! `0 <= Z P <= cap`. Every device update needs two network-wide terms for
//! its bus `i`:
//!
//! - `C_p = delta1_bar * pi_i . P`, the loss coupling;
//! - `C_d = psi_i . (mu_u - mu_l)`, the price of the flow limits.
//!
//! [`solve_plaintext`] computes both directly from everyone's injections.
//! The `protocol` module computes the same quantities without revealing
//! individual injections and then calls [`primal_update`] and
//! [`dual_update`] exactly as here.

mod projection;

pub use projection::{project_cumulative_band, project_ess, project_pv, ProjectionError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, AdjacencyMatrix, EssUnit, GridError, PvUnit, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("the loss coupling needs one resistance on every line")]
    NonUniformResistance,
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("device at bus {bus} but the feeder has buses 1..={n}")]
    UnknownBus { bus: usize, n: usize },
    #[error("{0} must be positive")]
    NonPositiveStep(&'static str),
    #[error("{0} must be nonnegative")]
    NegativeCost(&'static str),
    #[error(
        "no convergence after {iterations} iterations: pv residual {eps_pv:.3e}, \
         ess residual {eps_ess:.3e}, flow-limit violation {violation:.3e}"
    )]
    NonConvergence {
        iterations: usize,
        eps_pv: f64,
        eps_ess: f64,
        violation: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl CostCoefficients {
    /// `2 delta1 r / V0^2`.
    pub fn delta1_bar(&self, resistance: f64, v0: f64) -> f64 {
        2.0 * self.delta1 * resistance / (v0 * v0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha_pv: f64,
    pub alpha_ess: f64,
    pub beta: f64,
}

/// Primal and dual variables at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub iteration: usize,
    pub pv: Vec<Vec<f64>>,
    pub ess: Vec<Vec<f64>>,
    /// Multipliers of `flow >= 0`, one vector per line.
    pub mu_lower: Vec<Vec<f64>>,
    /// Multipliers of `flow <= cap`.
    pub mu_upper: Vec<Vec<f64>>,
}

/// Everything the iteration needs, checked once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub topology: Topology,
    pub z: AdjacencyMatrix,
    pub pv: Vec<PvUnit>,
    pub ess: Vec<EssUnit>,
    /// Baseline consumption per controlled bus (kW).
    pub baseline: Vec<Vec<f64>>,
    pub costs: CostCoefficients,
    pub steps: StepSizes,
    slots: usize,
    delta1_bar: f64,
    pv_at_bus: Vec<Vec<usize>>,
    ess_at_bus: Vec<Vec<usize>>,
    pi: Vec<Vec<u64>>,
}

impl Problem {
    pub fn new(
        topology: Topology,
        pv: Vec<PvUnit>,
        ess: Vec<EssUnit>,
        baseline: Vec<Vec<f64>>,
        costs: CostCoefficients,
        steps: StepSizes,
    ) -> Result<Self, SolverError> {
        let n = topology.bus_count();
        if baseline.len() != n {
            return Err(SolverError::Shape {
                what: "baseline buses".into(),
                expected: n,
                got: baseline.len(),
            });
        }
        let slots = baseline.first().map_or(0, Vec::len);
        let shape = |what: String, got: usize| {
            if got == slots {
                Ok(())
            } else {
                Err(SolverError::Shape {
                    what,
                    expected: slots,
                    got,
                })
            }
        };
        for (k, b) in baseline.iter().enumerate() {
            shape(format!("baseline of bus {}", k + 1), b.len())?;
        }
        let mut pv_at_bus = vec![Vec::new(); n];
        for (v, unit) in pv.iter().enumerate() {
            if unit.bus == 0 || unit.bus > n {
                return Err(SolverError::UnknownBus { bus: unit.bus, n });
            }
            shape(format!("forecast of PV {v}"), unit.cap.len())?;
            PvUnit::new(unit.bus, unit.cap.clone())?;
            pv_at_bus[unit.bus - 1].push(v);
        }
        let mut ess_at_bus = vec![Vec::new(); n];
        for (s, unit) in ess.iter().enumerate() {
            if unit.bus == 0 || unit.bus > n {
                return Err(SolverError::UnknownBus { bus: unit.bus, n });
            }
            unit.validate()?;
            ess_at_bus[unit.bus - 1].push(s);
        }
        for (name, v) in [
            ("alpha_pv", steps.alpha_pv),
            ("alpha_ess", steps.alpha_ess),
            ("beta", steps.beta),
        ] {
            if !(v > 0.0) {
                return Err(SolverError::NonPositiveStep(name));
            }
        }
        for (name, v) in [
            ("delta1", costs.delta1),
            ("delta2", costs.delta2),
            ("delta3", costs.delta3),
        ] {
            if !(v >= 0.0) {
                return Err(SolverError::NegativeCost(name));
            }
        }
        let r = topology
            .uniform_resistance()
            .ok_or(SolverError::NonUniformResistance)?;
        let delta1_bar = costs.delta1_bar(r, topology.v0());
        let z = topology.adjacency();
        let pi = (0..n).map(|i| z.pi(i)).collect();
        Ok(Problem {
            topology,
            z,
            pv,
            ess,
            baseline,
            costs,
            steps,
            slots,
            delta1_bar,
            pv_at_bus,
            ess_at_bus,
            pi,
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }
    pub fn bus_count(&self) -> usize {
        self.topology.bus_count()
    }
    pub fn delta1_bar(&self) -> f64 {
        self.delta1_bar
    }
    /// `pi_i` for 1-based bus `bus`.
    pub fn pi(&self, bus: usize) -> &[u64] {
        &self.pi[bus - 1]
    }
    pub fn pv_at_bus(&self, bus: usize) -> &[usize] {
        &self.pv_at_bus[bus - 1]
    }
    pub fn ess_at_bus(&self, bus: usize) -> &[usize] {
        &self.ess_at_bus[bus - 1]
    }
    pub fn flow_caps(&self) -> Vec<f64> {
        self.topology.lines().iter().map(|l| l.flow_cap).collect()
    }

    /// PV at half its forecast, idle batteries, zero multipliers.
    pub fn initial_state(&self) -> IterateState {
        let h = self.topology.line_count();
        IterateState {
            iteration: 0,
            pv: self
                .pv
                .iter()
                .map(|u| u.cap.iter().map(|c| c / 2.0).collect())
                .collect(),
            ess: vec![vec![0.0; self.slots]; self.ess.len()],
            mu_lower: vec![vec![0.0; self.slots]; h],
            mu_upper: vec![vec![0.0; self.slots]; h],
        }
    }

    /// Net injection of 1-based `bus`.
    pub fn bus_injection(&self, state: &IterateState, bus: usize) -> Vec<f64> {
        let t = self.slots;
        let mut pv = vec![0.0; t];
        for &v in self.pv_at_bus(bus) {
            for (a, b) in pv.iter_mut().zip(&state.pv[v]) {
                *a += b;
            }
        }
        let mut ess = vec![0.0; t];
        for &s in self.ess_at_bus(bus) {
            for (a, b) in ess.iter_mut().zip(&state.ess[s]) {
                *a += b;
            }
        }
        grid::bus_injection(&pv, &ess, &self.baseline[bus - 1])
            .expect("shapes checked at construction")
    }

    pub fn injections(&self, state: &IterateState) -> Vec<Vec<f64>> {
        (1..=self.bus_count())
            .map(|b| self.bus_injection(state, b))
            .collect()
    }

    pub fn flows(&self, injections: &[Vec<f64>]) -> Vec<Vec<f64>> {
        grid::line_flows(&self.z, injections).expect("shapes checked at construction")
    }

    /// `C_p` for 1-based `bus` from full information.
    pub fn coupling_p(&self, injections: &[Vec<f64>], bus: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.slots];
        for (w, p) in self.pi(bus).iter().zip(injections) {
            if *w == 0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(p) {
                *o += *w as f64 * x;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.delta1_bar);
        out
    }

    /// `C_d` for 1-based `bus` from full information.
    pub fn coupling_d(&self, state: &IterateState, bus: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.slots];
        for (line, z) in self.z.psi(bus - 1).iter().enumerate() {
            if *z == 0 {
                continue;
            }
            for ((o, u), l) in out
                .iter_mut()
                .zip(&state.mu_upper[line])
                .zip(&state.mu_lower[line])
            {
                *o += u - l;
            }
        }
        out
    }

    /// Largest amount by which any flow leaves `[0, cap]`.
    pub fn flow_violation(&self, flows: &[Vec<f64>]) -> f64 {
        flows
            .iter()
            .zip(self.topology.lines())
            .flat_map(|(f, line)| f.iter().map(move |x| (-x).max(x - line.flow_cap).max(0.0)))
            .fold(0.0, f64::max)
    }
}

/// `f1 = sum_l r_l (||P_l||^2 + T Q_l^2) / V0^2`.
pub fn power_loss(topo: &Topology, flows: &[Vec<f64>]) -> f64 {
    let v2 = topo.v0() * topo.v0();
    topo.lines()
        .iter()
        .zip(flows)
        .map(|(line, f)| {
            let p2: f64 = f.iter().map(|x| x * x).sum();
            let q2 = f.len() as f64 * line.reactive_flow * line.reactive_flow;
            line.resistance * (p2 + q2) / v2
        })
        .sum()
}

pub fn curtailment_cost(pv: &[f64], cap: &[f64]) -> f64 {
    pv.iter().zip(cap).map(|(p, c)| (p - c).powi(2)).sum()
}

/// `B p` with `B` the identity minus the superdiagonal.
pub fn degradation_stencil(p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|k| p[k] - p.get(k + 1).copied().unwrap_or(0.0))
        .collect()
}

pub fn degradation_cost(p: &[f64]) -> f64 {
    degradation_stencil(p).iter().map(|x| x * x).sum()
}

/// `B^T B p`.
fn degradation_normal(p: &[f64]) -> Vec<f64> {
    let bp = degradation_stencil(p);
    (0..p.len())
        .map(|k| bp[k] - if k > 0 { bp[k - 1] } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss: f64,
    pub curtailment: f64,
    pub degradation: f64,
    /// `delta1 loss + delta2 curtailment + delta3 degradation`.
    pub weighted: f64,
}

pub fn objective(problem: &Problem, state: &IterateState) -> Objective {
    let flows = problem.flows(&problem.injections(state));
    let loss = power_loss(&problem.topology, &flows);
    let curtailment = problem
        .pv
        .iter()
        .zip(&state.pv)
        .map(|(u, p)| curtailment_cost(p, &u.cap))
        .sum();
    let degradation = state.ess.iter().map(|p| degradation_cost(p)).sum();
    let c = problem.costs;
    Objective {
        loss,
        curtailment,
        degradation,
        weighted: c.delta1 * loss + c.delta2 * curtailment + c.delta3 * degradation,
    }
}

/// Objective plus `sum_l mu_l . (-flow_l) + mu_u . (flow_l - cap_l)`.
pub fn lagrangian(problem: &Problem, state: &IterateState) -> f64 {
    let flows = problem.flows(&problem.injections(state));
    let mut value = objective(problem, state).weighted;
    for (line, f) in flows.iter().enumerate() {
        let cap = problem.topology.lines()[line].flow_cap;
        for (k, x) in f.iter().enumerate() {
            value += state.mu_lower[line][k] * (-x) + state.mu_upper[line][k] * (x - cap);
        }
    }
    value
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<(), SolverError> {
    if expected == got {
        Ok(())
    } else {
        Err(SolverError::Shape {
            what: what.into(),
            expected,
            got,
        })
    }
}

/// `2 delta2 (pv - cap) + C_p + C_d`.
pub fn pv_subgradient(
    pv: &[f64],
    cap: &[f64],
    delta2: f64,
    coupling_p: &[f64],
    coupling_d: &[f64],
) -> Result<Vec<f64>, SolverError> {
    for (what, len) in [
        ("forecast", cap.len()),
        ("C_p", coupling_p.len()),
        ("C_d", coupling_d.len()),
    ] {
        check_len(what, pv.len(), len)?;
    }
    Ok((0..pv.len())
        .map(|k| 2.0 * delta2 * (pv[k] - cap[k]) + coupling_p[k] + coupling_d[k])
        .collect())
}

/// `2 delta3 B^T B p - C_p - C_d`.
pub fn ess_subgradient(
    ess: &[f64],
    delta3: f64,
    coupling_p: &[f64],
    coupling_d: &[f64],
) -> Result<Vec<f64>, SolverError> {
    for (what, len) in [("C_p", coupling_p.len()), ("C_d", coupling_d.len())] {
        check_len(what, ess.len(), len)?;
    }
    let btb = degradation_normal(ess);
    Ok((0..ess.len())
        .map(|k| 2.0 * delta3 * btb[k] - coupling_p[k] - coupling_d[k])
        .collect())
}

fn squared_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared update norms of the last primal step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub eps_pv: f64,
    pub eps_ess: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.eps_pv.max(self.eps_ess)
    }
}

/// One projected-gradient step for every device, all reading the same
/// per-bus coupling terms (`coupling_p[i - 1]`, `coupling_d[i - 1]`).
pub fn primal_update(
    problem: &Problem,
    state: &mut IterateState,
    coupling_p: &[Vec<f64>],
    coupling_d: &[Vec<f64>],
) -> Result<Residuals, SolverError> {
    let mut res = Residuals::default();
    let c = problem.costs;
    let s = problem.steps;
    for (v, unit) in problem.pv.iter().enumerate() {
        let b = unit.bus - 1;
        let g = pv_subgradient(
            &state.pv[v],
            &unit.cap,
            c.delta2,
            &coupling_p[b],
            &coupling_d[b],
        )?;
        let stepped: Vec<f64> = state.pv[v]
            .iter()
            .zip(&g)
            .map(|(x, g)| x - s.alpha_pv * g)
            .collect();
        let next = project_pv(&stepped, &unit.cap);
        res.eps_pv = res.eps_pv.max(squared_change(&next, &state.pv[v]));
        state.pv[v] = next;
    }
    for (e, unit) in problem.ess.iter().enumerate() {
        let b = unit.bus - 1;
        let g = ess_subgradient(&state.ess[e], c.delta3, &coupling_p[b], &coupling_d[b])?;
        let stepped: Vec<f64> = state.ess[e]
            .iter()
            .zip(&g)
            .map(|(x, g)| x - s.alpha_ess * g)
            .collect();
        let next = project_ess(&stepped, unit)?;
        res.eps_ess = res.eps_ess.max(squared_change(&next, &state.ess[e]));
        state.ess[e] = next;
    }
    Ok(res)
}

/// Projected ascent on the multipliers of one line.
pub fn dual_update(mu_lower: &mut [f64], mu_upper: &mut [f64], flow: &[f64], cap: f64, beta: f64) {
    for ((l, u), f) in mu_lower.iter_mut().zip(mu_upper.iter_mut()).zip(flow) {
        *l = (*l - beta * f).max(0.0);
        *u = (*u + beta * (f - cap)).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub eps0: f64,
    pub max_iter: usize,
    /// Largest flow-limit violation accepted at termination (kW).
    pub feas_tol: f64,
    /// Ignore the stopping test and run exactly `max_iter` iterations.
    pub fixed_iterations: bool,
    /// Keep every `record_stride`-th state in the trajectory (0 keeps none).
    pub record_stride: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps0: 1e-4,
            max_iter: 2000,
            feas_tol: 1e-6,
            fixed_iterations: false,
            record_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub eps_pv: f64,
    pub eps_ess: f64,
    pub violation: f64,
    /// `||mu_lower_l||` per line after the dual step.
    pub mu_lower_norm: Vec<f64>,
    pub mu_upper_norm: Vec<f64>,
}

impl TraceRow {
    pub fn new(state: &IterateState, res: Residuals, violation: f64) -> Self {
        let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        TraceRow {
            iteration: state.iteration,
            eps_pv: res.eps_pv,
            eps_ess: res.eps_ess,
            violation,
            mu_lower_norm: state.mu_lower.iter().map(norm).collect(),
            mu_upper_norm: state.mu_upper.iter().map(norm).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub trajectory: Vec<IterateState>,
    pub final_state: IterateState,
}

impl SolveOutcome {
    pub fn iterations(&self) -> usize {
        self.final_state.iteration
    }

    /// Turns a non-converged run into [`SolverError::NonConvergence`].
    pub fn ensure_converged(&self) -> Result<&Self, SolverError> {
        if self.converged {
            return Ok(self);
        }
        let last = self.trace.last();
        Err(SolverError::NonConvergence {
            iterations: self.iterations(),
            eps_pv: last.map_or(0.0, |r| r.eps_pv),
            eps_ess: last.map_or(0.0, |r| r.eps_ess),
            violation: last.map_or(0.0, |r| r.violation),
        })
    }
}

/// Shared driver: `step` performs one full iteration in place and returns the
/// primal residuals together with the flows of the updated primal point.
pub(crate) fn iterate<F, E>(
    problem: &Problem,
    opts: &SolveOptions,
    mut state: IterateState,
    mut step: F,
) -> Result<SolveOutcome, E>
where
    F: FnMut(&mut IterateState) -> Result<(Residuals, Vec<Vec<f64>>), E>,
{
    let mut trace = Vec::new();
    let mut trajectory = Vec::new();
    if opts.record_stride > 0 {
        trajectory.push(state.clone());
    }
    let mut converged = false;
    while state.iteration < opts.max_iter {
        let (res, flows) = step(&mut state)?;
        state.iteration += 1;
        let violation = problem.flow_violation(&flows);
        trace.push(TraceRow::new(&state, res, violation));
        if opts.record_stride > 0 && state.iteration % opts.record_stride == 0 {
            trajectory.push(state.clone());
        }
        if !opts.fixed_iterations && res.max() <= opts.eps0 && violation <= opts.feas_tol {
            converged = true;
            break;
        }
    }
    if opts.fixed_iterations {
        converged = trace
            .last()
            .is_some_and(|r| r.eps_pv.max(r.eps_ess) <= opts.eps0 && r.violation <= opts.feas_tol);
    }
    if opts.record_stride > 0 && trajectory.last().map(|s| s.iteration) != Some(state.iteration) {
        trajectory.push(state.clone());
    }
    Ok(SolveOutcome {
        converged,
        trace,
        trajectory,
        final_state: state,
    })
}

/// One full-information iteration: coupling terms from the current point,
/// primal step, then the dual step on the flows that produced the coupling.
pub fn plaintext_step(
    problem: &Problem,
    state: &mut IterateState,
) -> Result<(Residuals, Vec<Vec<f64>>), SolverError> {
    let inj = problem.injections(state);
    let flows = problem.flows(&inj);
    let n = problem.bus_count();
    let cp: Vec<Vec<f64>> = (1..=n).map(|b| problem.coupling_p(&inj, b)).collect();
    let cd: Vec<Vec<f64>> = (1..=n).map(|b| problem.coupling_d(state, b)).collect();
    let res = primal_update(problem, state, &cp, &cd)?;
    let caps = problem.flow_caps();
    for (line, f) in flows.iter().enumerate() {
        dual_update(
            &mut state.mu_lower[line],
            &mut state.mu_upper[line],
            f,
            caps[line],
            problem.steps.beta,
        );
    }
    let after = problem.flows(&problem.injections(state));
    Ok((res, after))
}

/// Full-information reference run.
pub fn solve_plaintext(
    problem: &Problem,
    opts: &SolveOptions,
) -> Result<SolveOutcome, SolverError> {
    iterate(problem, opts, problem.initial_state(), |s| {
        plaintext_step(problem, s)
    })
}
