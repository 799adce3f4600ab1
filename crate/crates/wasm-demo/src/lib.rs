//! Browser bindings for three small experiments. Each exported function
//! takes plain numbers and returns a JSON string for the page to render;
//! errors come back as `{"error": "..."}`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use privgrid::field::MERSENNE_31;
use privgrid::grid::{EssUnit, Line, PvUnit, Topology};
use privgrid::protocol::{
    run_algorithm1, InProcTransport, MessageKind, ProtocolConfig, Transcript,
};
use privgrid::quantizer::QuantParams;
use privgrid::shamir::{
    consistent_polynomial, evaluate, gen_polynomial, reconstruct, SharePoint, SharingPolicy,
};
use privgrid::solver::{solve_plaintext, CostCoefficients, Problem, SolveOptions, StepSizes};

fn base_quant() -> QuantParams {
    QuantParams::new(2, 25, 4, MERSENNE_31).expect("bundled codec")
}

fn json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
pub struct Quantized {
    pub input: f64,
    pub integer: i64,
    pub residue: u64,
    pub decoded: f64,
    pub error: f64,
    pub resolution: f64,
    pub magnitude_bound: f64,
}

pub fn quantize_value(x: f64, zeta: u32) -> Result<Quantized, String> {
    let q = base_quant().with_zeta(zeta).map_err(|e| e.to_string())?;
    let integer = q.quantize(x).map_err(|e| e.to_string())?;
    let residue = q.to_field(integer).map_err(|e| e.to_string())?;
    let decoded = q.decode(residue).map_err(|e| e.to_string())?;
    Ok(Quantized {
        input: x,
        integer,
        residue,
        decoded,
        error: decoded - x,
        resolution: q.resolution(),
        magnitude_bound: q.magnitude_bound(),
    })
}

#[wasm_bindgen]
pub fn quantize(x: f64, zeta: u32) -> String {
    json(quantize_value(x, zeta))
}

#[derive(Serialize)]
pub struct Candidate {
    pub value: f64,
    /// Share values the colluders would have seen under this secret.
    pub shares: Vec<u64>,
}

#[derive(Serialize)]
pub struct SharingView {
    pub secret: f64,
    pub residue: u64,
    pub shares: Vec<SharePoint>,
    pub colluders: usize,
    pub threshold: usize,
    /// Set when the colluders hold enough shares.
    pub recovered: Option<f64>,
    /// Alternative secrets that explain the colluders' view equally well.
    pub candidates: Vec<Candidate>,
}

pub fn share_view(
    secret: f64,
    clouds: usize,
    threshold: usize,
    colluders: usize,
    seed: u64,
) -> Result<SharingView, String> {
    let policy = SharingPolicy::new(clouds, threshold, MERSENNE_31).map_err(|e| e.to_string())?;
    if colluders > clouds {
        return Err(format!("{colluders} colluders but only {clouds} clouds"));
    }
    let q = base_quant();
    let field = policy.field();
    let residue = q.encode(secret).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let poly = gen_polynomial(residue, &policy, &mut rng).map_err(|e| e.to_string())?;
    let mut shares: Vec<SharePoint> = Vec::with_capacity(clouds);
    while shares.len() < clouds {
        let x = rng.random_range(1..MERSENNE_31);
        if shares.iter().all(|p| p.x != x) {
            let y = evaluate(&poly, x, field).map_err(|e| e.to_string())?;
            shares.push(SharePoint { x, y });
        }
    }
    let seen = &shares[..colluders];
    let mut view = SharingView {
        secret,
        residue,
        shares: shares.clone(),
        colluders,
        threshold,
        recovered: None,
        candidates: Vec::new(),
    };
    if colluders >= threshold {
        let r = reconstruct(seen, &policy).map_err(|e| e.to_string())?;
        view.recovered = Some(q.decode(r).map_err(|e| e.to_string())?);
    } else {
        for k in 0..4 {
            let value = secret + 10.0 * (k as f64 + 1.0) - 25.0;
            let candidate = q.encode(value).map_err(|e| e.to_string())?;
            let alt = consistent_polynomial(seen, candidate, threshold, field)
                .map_err(|e| e.to_string())?;
            let shares = seen
                .iter()
                .map(|p| alt.eval_unchecked(p.x, field))
                .collect();
            view.candidates.push(Candidate {
                value: q.decode(alt.secret()).map_err(|e| e.to_string())?,
                shares,
            });
        }
    }
    Ok(view)
}

#[wasm_bindgen]
pub fn share(secret: f64, clouds: usize, threshold: usize, colluders: usize, seed: u64) -> String {
    json(share_view(secret, clouds, threshold, colluders, seed))
}

const SLOTS: usize = 6;

/// Five buses: 1 at the head, 2 and 3 below it, 4 and 5 below 3.
pub fn small_feeder() -> Problem {
    let lines = [0, 1, 1, 3, 3]
        .iter()
        .enumerate()
        .map(|(k, &from)| Line {
            from,
            to: k + 1,
            resistance: 0.02,
            reactance: 0.0,
            flow_cap: 6.0,
            reactive_flow: 0.0,
        })
        .collect();
    let topo = Topology::new(5, lines, 1.0).expect("valid feeder");
    let sun = [0.0, 1.0, 2.5, 2.5, 1.0, 0.0];
    let pv = (1..=5)
        .map(|b| PvUnit::new(b, sun.to_vec()).expect("valid pv"))
        .collect();
    let ess = (1..=5)
        .map(|bus| EssUnit {
            bus,
            discharge_cap: 2.0,
            charge_cap: 2.0,
            soc_min: 0.5,
            soc_max: 6.0,
            soc_init: 3.0,
            dt: 1.0,
        })
        .collect();
    let baseline = (1..=5).map(|b| vec![0.8 + 0.1 * b as f64; SLOTS]).collect();
    Problem::new(
        topo,
        pv,
        ess,
        baseline,
        CostCoefficients {
            delta1: 0.5,
            delta2: 0.2,
            delta3: 0.1,
        },
        StepSizes {
            alpha_pv: 0.8,
            alpha_ess: 0.8,
            beta: 0.05,
        },
    )
    .expect("valid problem")
}

#[derive(Serialize)]
pub struct FeederRun {
    pub iterations: usize,
    pub zeta: u32,
    pub max_deviation: f64,
    /// Per line, per slot, from each run.
    pub plaintext_flows: Vec<Vec<f64>>,
    pub private_flows: Vec<Vec<f64>>,
    pub messages: BTreeMap<MessageKind, usize>,
    pub digest: String,
}

pub fn feeder_run(iterations: usize, zeta: u32, seed: u64) -> Result<FeederRun, String> {
    if !(1..=2000).contains(&iterations) {
        return Err("iterations must be between 1 and 2000".into());
    }
    let problem = small_feeder();
    let opts = SolveOptions {
        max_iter: iterations,
        fixed_iterations: true,
        ..Default::default()
    };
    let plain = solve_plaintext(&problem, &opts).map_err(|e| e.to_string())?;
    let quant = base_quant().with_zeta(zeta).map_err(|e| e.to_string())?;
    let dual = QuantParams::new(2, 5, 24, MERSENNE_31).map_err(|e| e.to_string())?;
    let policy = SharingPolicy::new(4, 4, MERSENNE_31).map_err(|e| e.to_string())?;
    let config = ProtocolConfig::new(policy, quant, dual, seed);
    let private = run_algorithm1(
        &problem,
        &config,
        &mut InProcTransport::new(),
        &opts,
        Transcript::new(0),
    )
    .map_err(|e| e.to_string())?;
    let a = &plain.final_state;
    let b = &private.solve.final_state;
    let max_deviation =
        a.pv.iter()
            .chain(&a.ess)
            .zip(b.pv.iter().chain(&b.ess))
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
    let flows = |s| problem.flows(&problem.injections(s));
    Ok(FeederRun {
        iterations,
        zeta: quant.zeta(),
        max_deviation,
        plaintext_flows: flows(a),
        private_flows: flows(b),
        messages: private.transcript.counts().clone(),
        digest: private.transcript.digest_hex(),
    })
}

#[wasm_bindgen]
pub fn run_feeder(iterations: usize, zeta: u32, seed: u64) -> String {
    json(feeder_run(iterations, zeta, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_threshold_every_candidate_matches_the_view() {
        let v = share_view(12.5, 5, 4, 3, 7).unwrap();
        assert!(v.recovered.is_none());
        let seen: Vec<u64> = v.shares[..3].iter().map(|p| p.y).collect();
        for c in &v.candidates {
            assert_eq!(c.shares, seen);
        }
        let at = share_view(12.5, 5, 4, 4, 7).unwrap();
        assert_eq!(at.recovered, Some(12.5));
    }

    #[test]
    fn quantize_reports_rounding_error() {
        let q = quantize_value(0.3, 4).unwrap();
        assert!(q.error.abs() <= q.resolution / 2.0);
        assert!(quantize_value(1e12, 4).is_err());
    }

    #[test]
    fn small_feeder_private_run_tracks_plaintext() {
        let r = feeder_run(40, 12, 1).unwrap();
        assert!(r.max_deviation < 1e-2, "{}", r.max_deviation);
        assert!(json(Err::<(), _>("x".into())).contains("error"));
    }
}
