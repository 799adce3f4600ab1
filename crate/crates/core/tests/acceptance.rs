//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line; the process fails if any does.
//!
//! The oracles here are written independently of the library: tree sums,
//! Lagrangian, rounding and the battery QP are all recomputed from scratch.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use privgrid::field::{FieldElement, PrimeField, MERSENNE_31};
use privgrid::grid::{EssUnit, PvUnit, Topology};
use privgrid::harness::run::{protocol_config, RunMode, RunOptions};
use privgrid::harness::{emit_traces, load_scenario, run_scenario, write_bundled, Scenario};
use privgrid::protocol::adversary::{
    collusion_analysis, collusion_reconstruct, eavesdropper_check, points_in_view,
    simulator_construct, PolyKey,
};
use privgrid::protocol::{
    run_algorithm1, InProcTransport, MessageKind, PartyId, PrivateOutcome, Transcript,
};
use privgrid::quantizer::QuantParams;
use privgrid::shamir::{
    evaluate, gen_polynomial, reconstruct, reconstruct_with_threshold, ShareError, SharePoint,
    SharingPolicy,
};
use privgrid::solver::{
    ess_subgradient, project_ess, pv_subgradient, solve_plaintext, CostCoefficients, IterateState,
    Problem, SolveOptions, StepSizes,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bundled() -> (tempfile::TempDir, Scenario) {
    let dir = tempfile::tempdir().expect("temp dir");
    let toml = write_bundled(dir.path(), 96).expect("bundled scenario");
    let sc = load_scenario(&toml).expect("bundled scenario loads");
    (dir, sc)
}

/// `pi_i(j)`: lines shared by the root paths of `i` and `j`, which is the
/// depth of their lowest common ancestor.
fn pi_oracle(topo: &Topology) -> Vec<Vec<u64>> {
    let n = topo.bus_count();
    let path = |mut b: usize| {
        let mut p = Vec::new();
        while b != 0 {
            p.push(b);
            b = topo.parent(b);
        }
        p
    };
    (1..=n)
        .map(|i| {
            let pi = path(i);
            (1..=n)
                .map(|j| path(j).iter().filter(|b| pi.contains(b)).count() as u64)
                .collect()
        })
        .collect()
}

fn round_half_up(x: f64, zeta: u32) -> i64 {
    (x * 2f64.powi(zeta as i32) + 0.5).floor() as i64
}

fn injections(problem: &Problem, state: &IterateState) -> Vec<Vec<f64>> {
    let t = problem.slots();
    let mut p: Vec<Vec<f64>> = problem
        .baseline
        .iter()
        .map(|b| b.iter().map(|x| -x).collect())
        .collect();
    for (u, x) in problem.pv.iter().zip(&state.pv) {
        (0..t).for_each(|k| p[u.bus - 1][k] += x[k]);
    }
    for (u, x) in problem.ess.iter().zip(&state.ess) {
        (0..t).for_each(|k| p[u.bus - 1][k] -= x[k]);
    }
    p
}

/// Flow of the line into each bus: the bus's injection plus its subtree.
fn flows(topo: &Topology, inj: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut f = inj.to_vec();
    let mut order: Vec<usize> = (1..=topo.bus_count()).collect();
    order.sort_by_key(|&b| std::cmp::Reverse(topo.depth(b)));
    for b in order {
        let parent = topo.parent(b);
        if parent != 0 {
            let child = f[b - 1].clone();
            f[parent - 1]
                .iter_mut()
                .zip(child)
                .for_each(|(a, c)| *a += c);
        }
    }
    f
}

fn lagrangian(problem: &Problem, s: &IterateState) -> f64 {
    let c = problem.costs;
    let topo = &problem.topology;
    let f = flows(topo, &injections(problem, s));
    let mut loss = 0.0;
    let mut coupling = 0.0;
    for (l, line) in topo.lines().iter().enumerate() {
        let fl = &f[line.to - 1];
        loss += line.resistance * fl.iter().map(|x| x * x).sum::<f64>() / (topo.v0() * topo.v0());
        for (k, x) in fl.iter().enumerate() {
            coupling += s.mu_lower[l][k] * (-x) + s.mu_upper[l][k] * (x - line.flow_cap);
        }
    }
    let curtail: f64 = problem
        .pv
        .iter()
        .zip(&s.pv)
        .map(|(u, x)| {
            x.iter()
                .zip(&u.cap)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    let degr: f64 = s
        .ess
        .iter()
        .map(|p| {
            (0..p.len())
                .map(|k| (p[k] - p.get(k + 1).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
        })
        .sum();
    c.delta1 * loss + c.delta2 * curtail + c.delta3 * degr + coupling
}

fn c1_sharing_round_trip() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut exact = 0;
    for k in 0..1000 {
        let c = 4 + k % 5;
        let policy = SharingPolicy::new(c, 4, MERSENNE_31).unwrap();
        let secret = rng.random_range(0..MERSENNE_31);
        let poly = gen_polynomial(secret, &policy, &mut rng).unwrap();
        let mut xs: Vec<u64> = Vec::new();
        while xs.len() < c {
            let x = rng.random_range(1..MERSENNE_31);
            if !xs.contains(&x) {
                xs.push(x);
            }
        }
        let pts: Vec<SharePoint> = xs
            .iter()
            .map(|&x| SharePoint {
                x,
                y: evaluate(&poly, x, policy.field()).unwrap(),
            })
            .collect();
        if reconstruct(&pts, &policy) == Ok(secret) {
            exact += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        exact == 1000 && secs < 5.0,
        format!("{exact}/1000 exact, {secs:.2} s"),
    )
}

fn c2_aggregation_exactness() -> Outcome {
    let t0 = Instant::now();
    let (_dir, sc) = bundled();
    let problem = sc.problem().unwrap();
    let mut config = protocol_config(&sc);
    config.audit = true;
    let opts = SolveOptions {
        max_iter: 50,
        fixed_iterations: true,
        record_stride: 1,
        ..sc.solve
    };
    let out = run_algorithm1(
        &problem,
        &config,
        &mut InProcTransport::new(),
        &opts,
        Transcript::new(0),
    )
    .unwrap();
    let pi = pi_oracle(&problem.topology);
    let zeta = sc.quant.zeta();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for rec in &out.audit {
        let state = &out.solve.trajectory[rec.iteration];
        assert_eq!(state.iteration, rec.iteration);
        let q: Vec<Vec<i64>> = injections(&problem, state)
            .iter()
            .map(|p| p.iter().map(|&x| round_half_up(x, zeta)).collect())
            .collect();
        for (i, row) in pi.iter().enumerate() {
            for t in 0..problem.slots() {
                let want: i64 = row.iter().zip(&q).map(|(&w, qj)| w as i64 * qj[t]).sum();
                checked += 1;
                if rec.bus_openings[i][t] != want {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && out.audit.len() == 50 && secs < 30.0,
        format!("{checked} bus/iteration/slot openings, {mismatches} mismatches, {secs:.2} s"),
    )
}

fn c3_quantization_bound() -> Outcome {
    let q = QuantParams::new(2, 25, 4, MERSENNE_31).unwrap();
    let bound = 2f64.powi(25);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..1_000_000 {
        let x = rng.random_range(-bound..=bound);
        let err = (q.dequantize(q.quantize(x).unwrap()) - x).abs();
        worst = worst.max(err);
        if err > 2f64.powi(-4) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10^6 samples, worst error {worst:.4}, {violations} violations"),
    )
}

fn c4_gradient_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let t = 8;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let topo = Topology::ieee13(0.01, 50.0);
        let baseline: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..t).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let pv: Vec<PvUnit> = (0..24)
            .map(|k| {
                PvUnit::new(
                    k / 2 + 1,
                    (0..t).map(|_| rng.random_range(1.0..3.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let ess: Vec<EssUnit> = (0..24)
            .map(|k| EssUnit {
                bus: k / 2 + 1,
                discharge_cap: 3.0,
                charge_cap: 3.0,
                soc_min: 0.0,
                soc_max: 10.0,
                soc_init: 5.0,
                dt: 0.25,
            })
            .collect();
        let costs = CostCoefficients {
            delta1: 0.25,
            delta2: 0.1,
            delta3: 0.05,
        };
        let steps = StepSizes {
            alpha_pv: 1.0,
            alpha_ess: 1.0,
            beta: 0.01,
        };
        let problem = Problem::new(topo, pv, ess, baseline, costs, steps).unwrap();
        let mut s = problem.initial_state();
        for (x, u) in s.pv.iter_mut().zip(&problem.pv) {
            x.iter_mut()
                .zip(&u.cap)
                .for_each(|(a, c)| *a = rng.random_range(0.05..0.95) * c);
        }
        for x in s.ess.iter_mut() {
            x.iter_mut().for_each(|a| *a = rng.random_range(-2.5..2.5));
        }
        for m in s.mu_lower.iter_mut().chain(s.mu_upper.iter_mut()) {
            m.iter_mut().for_each(|a| *a = rng.random_range(0.0..1.0));
        }
        let inj = problem.injections(&s);
        let h = 1e-4;
        let numeric = |s: &mut IterateState, pv: bool, d: usize, k: usize| {
            let cell =
                |s: &mut IterateState, v: f64| if pv { s.pv[d][k] = v } else { s.ess[d][k] = v };
            let x = if pv { s.pv[d][k] } else { s.ess[d][k] };
            cell(s, x + h);
            let up = lagrangian(&problem, s);
            cell(s, x - h);
            let down = lagrangian(&problem, s);
            cell(s, x);
            (up - down) / (2.0 * h)
        };
        for d in 0..24 {
            let bus = problem.pv[d].bus;
            let cp = problem.coupling_p(&inj, bus);
            let cd = problem.coupling_d(&s, bus);
            let g_pv = pv_subgradient(&s.pv[d], &problem.pv[d].cap, problem.costs.delta2, &cp, &cd)
                .unwrap();
            let g_ess = ess_subgradient(&s.ess[d], problem.costs.delta3, &cp, &cd).unwrap();
            for k in 0..t {
                for (pv, a) in [(true, g_pv[k]), (false, g_ess[k])] {
                    let n = numeric(&mut s, pv, d, k);
                    worst = worst.max((a - n).abs() / a.abs().max(1.0));
                }
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("100 points x 384 coordinates, worst relative error {worst:.2e}"),
    )
}

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// Projection onto the battery set by enumerating active sets in order of
/// size and returning the first KKT point.
fn ess_qp_oracle(v: &[f64], u: &EssUnit) -> Vec<f64> {
    let t = v.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..t {
        let mut e = vec![0.0; t];
        e[k] = 1.0;
        rows.push((e.clone(), u.charge_cap));
        rows.push((e.iter().map(|x| -x).collect(), u.discharge_cap));
        let cum: Vec<f64> = (0..t).map(|j| if j <= k { u.dt } else { 0.0 }).collect();
        rows.push((cum.clone(), u.soc_max - u.soc_init));
        rows.push((cum.iter().map(|x| -x).collect(), u.soc_init - u.soc_min));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut subset = Vec::new();
    fn search(
        start: usize,
        size: usize,
        subset: &mut Vec<usize>,
        rows: &[(Vec<f64>, f64)],
        v: &[f64],
        dot: &dyn Fn(&[f64], &[f64]) -> f64,
    ) -> Option<Vec<f64>> {
        if subset.len() == size {
            let k = subset.len();
            let gram: Vec<Vec<f64>> = subset
                .iter()
                .map(|&i| {
                    subset
                        .iter()
                        .map(|&j| dot(&rows[i].0, &rows[j].0))
                        .collect()
                })
                .collect();
            let rhs: Vec<f64> = subset
                .iter()
                .map(|&i| dot(&rows[i].0, v) - rows[i].1)
                .collect();
            let lambda = if k == 0 {
                Vec::new()
            } else {
                solve_dense(gram, rhs)?
            };
            if lambda.iter().any(|&l| l < -1e-10) {
                return None;
            }
            let mut x = v.to_vec();
            for (&i, l) in subset.iter().zip(&lambda) {
                x.iter_mut().zip(&rows[i].0).for_each(|(a, r)| *a -= l * r);
            }
            return rows
                .iter()
                .all(|(a, b)| dot(a, &x) <= b + 1e-9)
                .then_some(x);
        }
        for i in start..rows.len() {
            subset.push(i);
            if let Some(x) = search(i + 1, size, subset, rows, v, dot) {
                return Some(x);
            }
            subset.pop();
        }
        None
    }
    for size in 0..=t {
        if let Some(x) = search(0, size, &mut subset, &rows, v, &dot) {
            return x;
        }
    }
    panic!("no KKT point found for {v:?}");
}

fn c5_projection_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let soc_min = rng.random_range(0.0..2.0);
        let soc_max = soc_min + rng.random_range(0.5..8.0);
        let u = EssUnit {
            bus: 1,
            discharge_cap: rng.random_range(0.5..3.0),
            charge_cap: rng.random_range(0.5..3.0),
            soc_min,
            soc_max,
            soc_init: rng.random_range(soc_min..=soc_max),
            dt: rng.random_range(0.25..1.0),
        };
        let v: Vec<f64> = (0..t).map(|_| rng.random_range(-6.0..6.0)).collect();
        let got = project_ess(&v, &u).unwrap();
        let want = ess_qp_oracle(&v, &u);
        worst = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    outcome(
        worst <= 1e-6,
        format!("200 instances, worst elementwise error {worst:.2e}"),
    )
}

fn c6_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for (zeta, bound) in [(12u32, 1e-2), (4, 2.56)] {
        let (_dir, mut sc) = bundled();
        sc.set_zeta(zeta).unwrap();
        sc.solve.max_iter = 500;
        let mut opts = RunOptions::new(RunMode::Both, sc.solve);
        opts.solve.fixed_iterations = true;
        let report = run_scenario(&sc, &opts).unwrap();
        let same_count = report.plaintext.as_ref().unwrap().iterations() == 500
            && report.private.as_ref().unwrap().solve.iterations() == 500;
        let dev = report.deviation.unwrap();
        pass &= dev <= bound && same_count;
        details.push(format!("zeta {zeta}: {dev:.2e} <= {bound}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    outcome(
        pass,
        format!("{}, 500 iterations each, {secs:.2} s", details.join(", ")),
    )
}

fn c7_convergence_feasibility() -> Outcome {
    let (_dir, sc) = bundled();
    let problem = sc.problem().unwrap();
    let out = solve_plaintext(&problem, &sc.solve).unwrap();
    let last = out.trace.last().unwrap();
    let s = &out.final_state;
    let f = flows(&problem.topology, &injections(&problem, s));
    let min_flow = f.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9;
    let mut soc_ok = true;
    let mut rate_ok = true;
    for (u, p) in problem.ess.iter().zip(&s.ess) {
        let mut soc = u.soc_init;
        for &x in p {
            soc += u.dt * x;
            soc_ok &= (-tol..=10.0 + tol).contains(&soc);
            rate_ok &= x.abs() <= 3.0 + tol;
        }
    }
    let pv_ok = problem.pv.iter().zip(&s.pv).all(|(u, x)| {
        x.iter()
            .zip(&u.cap)
            .all(|(a, c)| *a >= -tol && *a <= c + tol)
    });
    let eps = last.eps_pv.max(last.eps_ess);
    outcome(
        out.converged && out.iterations() <= 2000 && eps <= 1e-4 && min_flow >= -1e-6 && soc_ok && rate_ok && pv_ok,
        format!(
            "{} iterations, eps {eps:.1e}, min flow {min_flow:.2e}, SoC ok {soc_ok}, rates ok {rate_ok}, PV ok {pv_ok}",
            out.iterations()
        ),
    )
}

fn recorded_run(iters: usize) -> (Scenario, Problem, PrivateOutcome) {
    let (_dir, sc) = bundled();
    let problem = sc.problem().unwrap();
    let mut config = protocol_config(&sc);
    config.audit = true;
    config.keep_transcript = usize::MAX;
    let opts = SolveOptions {
        max_iter: iters,
        fixed_iterations: true,
        ..sc.solve
    };
    let out = run_algorithm1(
        &problem,
        &config,
        &mut InProcTransport::new(),
        &opts,
        Transcript::new(usize::MAX),
    )
    .unwrap();
    (sc, problem, out)
}

fn c8_collusion(run: &(Scenario, Problem, PrivateOutcome)) -> Outcome {
    let (sc, problem, out) = run;
    let msgs = out.transcript.messages();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let keys: Vec<PolyKey> = (0..10)
        .map(|_| PolyKey {
            kind: MessageKind::Aggregate,
            owner: PartyId::Bus(rng.random_range(1..=problem.bus_count())),
            iter: rng.random_range(0..out.audit.len()),
            slot: rng.random_range(0..problem.slots()),
        })
        .collect();
    let below = collusion_analysis(msgs, &[1, 2, 3], &sc.sharing, &keys, 10, &mut rng).unwrap();
    let hiding =
        below.perfectly_hiding() && below.analyses.iter().all(|a| a.candidates_consistent == 10);
    let at = collusion_reconstruct(msgs, &[1, 2, 3, 4], &sc.sharing, &keys).unwrap();
    let field = sc.sharing.field();
    let truthful = at.iter().all(|r| {
        let bus = match r.key.owner {
            PartyId::Bus(b) => b,
            _ => return false,
        };
        let want = out.audit[r.key.iter].bus_openings[bus - 1][r.key.slot];
        r.recovered == field.reduce_i128(want as i128)
    });
    outcome(
        hiding && truthful,
        format!(
            "3 clouds: 10 triples x 10 candidates all consistent = {hiding}; 4 clouds: true aggregate recovered = {truthful}"
        ),
    )
}

fn c9_simulator_and_eavesdropper(run: &(Scenario, Problem, PrivateOutcome)) -> Outcome {
    let (sc, problem, out) = run;
    let field: PrimeField = sc.sharing.field();
    let pi = pi_oracle(&problem.topology);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut matches = 0;
    for _ in 0..100 {
        let rec = &out.audit[rng.random_range(0..out.audit.len())];
        let bus = rng.random_range(1..=problem.bus_count());
        let t = rng.random_range(0..problem.slots());
        let truth: i64 = pi[bus - 1]
            .iter()
            .zip(&rec.secrets)
            .map(|(&w, s)| w as i64 * s[t])
            .sum();
        let target: FieldElement = field.reduce_i128(truth as i128);
        let own = field.reduce_i128(rec.secrets[bus - 1][t] as i128);
        let view = simulator_construct(
            &pi[bus - 1],
            Some((bus - 1, own)),
            target,
            &sc.sharing,
            &mut rng,
        )
        .unwrap();
        if view.reconstructed == target && view.secrets[bus - 1] == own {
            matches += 1;
        }
    }

    let msgs = out.transcript.messages();
    let n = problem.bus_count();
    let c = sc.sharing.clouds();
    let tapped: Vec<(usize, usize)> = (1..=n)
        .flat_map(|b| {
            (1..=c)
                .filter(move |&u| u != b % c + 1)
                .map(move |u| (b, u))
        })
        .collect();
    let report = eavesdropper_check(msgs, &tapped, n, &sc.sharing).unwrap();
    let links: std::collections::BTreeSet<(usize, usize)> = tapped.iter().copied().collect();
    let view = points_in_view(msgs, |m, u| match (m.from, m.to) {
        (PartyId::Bus(b), _) | (_, PartyId::Bus(b)) => links.contains(&(b, u)),
        _ => false,
    });
    let bus_polys: Vec<&Vec<SharePoint>> = view
        .iter()
        .filter(|(k, _)| matches!(k.owner, PartyId::Bus(_)))
        .map(|(_, p)| p)
        .collect();
    let all_insufficient = bus_polys.iter().all(|pts| {
        matches!(
            reconstruct_with_threshold(pts, sc.sharing.threshold(), field),
            Err(ShareError::InsufficientShares { .. })
        )
    });
    let expected_polys = out.audit.len() * n * problem.slots() * 2;
    outcome(
        matches == 100 && all_insufficient && bus_polys.len() == expected_polys && report.opened == 0,
        format!(
            "simulator {matches}/100; eavesdropper: {} bus polynomials, all InsufficientShares = {all_insufficient}",
            bus_polys.len()
        ),
    )
}

fn c10_determinism() -> Outcome {
    let run_into = |dir: &Path| {
        let toml = write_bundled(&dir.join("sc"), 96).unwrap();
        let mut sc = load_scenario(&toml).unwrap();
        sc.solve.max_iter = 40;
        let mut opts = RunOptions::new(RunMode::Private, sc.solve);
        opts.solve.fixed_iterations = true;
        opts.transcript_file = Some(dir.join("transcript.ndjson"));
        let report = run_scenario(&sc, &opts).unwrap();
        emit_traces(&report, &dir.join("out")).unwrap();
        (
            std::fs::read(dir.join("transcript.ndjson")).unwrap(),
            std::fs::read(dir.join("out/summary.json")).unwrap(),
        )
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ta, sa) = run_into(a.path());
    let (tb, sb) = run_into(b.path());
    let lines = ta.iter().filter(|&&c| c == b'\n').count();
    outcome(
        ta == tb && sa == sb && lines > 0,
        format!(
            "{lines} transcript lines identical = {}, summary identical = {}",
            ta == tb,
            sa == sb
        ),
    )
}

fn main() {
    let recorded = recorded_run(5);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("secret-sharing round-trip", Box::new(c1_sharing_round_trip)),
        ("aggregate exactness", Box::new(c2_aggregation_exactness)),
        ("quantization bound", Box::new(c3_quantization_bound)),
        ("gradient oracle", Box::new(c4_gradient_oracle)),
        ("battery projection oracle", Box::new(c5_projection_oracle)),
        ("private/plaintext equivalence", Box::new(c6_equivalence)),
        (
            "convergence and feasibility",
            Box::new(c7_convergence_feasibility),
        ),
        (
            "collusion below and at threshold",
            Box::new(|| c8_collusion(&recorded)),
        ),
        (
            "simulator and eavesdropper",
            Box::new(|| c9_simulator_and_eavesdropper(&recorded)),
        ),
        ("determinism", Box::new(c10_determinism)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "criterion {:>2} {:<34} {}  {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
