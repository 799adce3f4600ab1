//! Radial feeder topology, LinDistFlow quantities and device models.
//!
//! Bus `0` is the feeder head (substation) and is not controlled. Buses
//! `1..=n` are controlled and each has exactly one parent line; line `k` is
//! the line whose to-bus is bus `k`, so the line count equals `n`.
//!
//! Power sign convention: a bus injection `p_i = pv - ess - load` is positive
//! when the bus generates. `line_flows` returns `Z * P`, the net generation
//! downstream of each line. The controller's flow limits `0 <= flow <= cap`
//! are stated in that convention. See [`Topology::voltages`] for the physical
//! from-to direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("bus {0} is referenced but the feeder has buses 0..={1}")]
    UnknownBus(usize, usize),
    #[error("bus {0} has more than one parent line")]
    DuplicateParent(usize),
    #[error("bus {0} has no parent line")]
    DisconnectedBus(usize),
    #[error("bus 0 is the feeder head and cannot have a parent line")]
    RootHasParent,
    #[error("line into bus {0} closes a cycle")]
    CycleDetected(usize),
    #[error("line into bus {bus}: {what} must be positive, got {value}")]
    NonPositive {
        bus: usize,
        what: &'static str,
        value: f64,
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("storage unit at bus {bus}: {reason}")]
    BadEss { bus: usize, reason: String },
    #[error("PV unit at bus {bus}: forecast cap is negative at slot {slot}")]
    NegativeForecast { bus: usize, slot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    #[serde(default)]
    pub reactance: f64,
    pub flow_cap: f64,
    /// Constant reactive flow (kvar); only enters voltages and the loss offset.
    #[serde(default)]
    pub reactive_flow: f64,
}

/// A validated radial feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    /// `lines[k]` feeds bus `k + 1`.
    lines: Vec<Line>,
    v0: f64,
    /// `parent[k]` is the from-bus of line `k` (0 for the head).
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Number of lines between bus `k + 1` and the head.
    depth: Vec<usize>,
}

impl Topology {
    pub fn new(n: usize, lines: Vec<Line>, v0: f64) -> Result<Self, GridError> {
        if lines.len() != n {
            return Err(GridError::LengthMismatch {
                expected: n,
                got: lines.len(),
            });
        }
        let mut slots: Vec<Option<Line>> = vec![None; n];
        for line in lines {
            if line.from > n {
                return Err(GridError::UnknownBus(line.from, n));
            }
            if line.to > n {
                return Err(GridError::UnknownBus(line.to, n));
            }
            if line.to == 0 {
                return Err(GridError::RootHasParent);
            }
            for (what, value) in [("resistance", line.resistance), ("flow cap", line.flow_cap)] {
                if !(value > 0.0) {
                    return Err(GridError::NonPositive {
                        bus: line.to,
                        what,
                        value,
                    });
                }
            }
            let slot = &mut slots[line.to - 1];
            if slot.is_some() {
                return Err(GridError::DuplicateParent(line.to));
            }
            *slot = Some(line);
        }
        let lines: Vec<Line> = slots
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.ok_or(GridError::DisconnectedBus(k + 1)))
            .collect::<Result<_, _>>()?;
        if !(v0 > 0.0) {
            return Err(GridError::NonPositive {
                bus: 0,
                what: "nominal voltage",
                value: v0,
            });
        }

        let parent: Vec<usize> = lines.iter().map(|l| l.from).collect();
        let mut depth = vec![0usize; n];
        for k in 0..n {
            let mut bus = k + 1;
            let mut steps = 0;
            while bus != 0 {
                bus = parent[bus - 1];
                steps += 1;
                if steps > n {
                    return Err(GridError::CycleDetected(k + 1));
                }
            }
            depth[k] = steps;
        }
        let mut children = vec![Vec::new(); n + 1];
        for (k, &p) in parent.iter().enumerate() {
            children[p].push(k + 1);
        }
        Ok(Topology {
            n,
            lines,
            v0,
            parent,
            children,
            depth,
        })
    }

    /// The bundled 13-bus feeder (head plus twelve controlled buses).
    ///
    /// Only the shape matters to the controller. The branch layout keeps the
    /// downstream set of line 9 equal to buses 9, 10, 11 and that of line 2
    /// equal to buses 2, 3.
    pub fn ieee13(resistance: f64, flow_cap: f64) -> Self {
        const PARENTS: [usize; 12] = [0, 1, 2, 1, 4, 1, 6, 6, 6, 9, 9, 8];
        let lines = PARENTS
            .iter()
            .enumerate()
            .map(|(k, &from)| Line {
                from,
                to: k + 1,
                resistance,
                reactance: 0.0,
                flow_cap,
                reactive_flow: 0.0,
            })
            .collect();
        Topology::new(12, lines, 1.0).expect("bundled feeder is a tree")
    }

    pub fn bus_count(&self) -> usize {
        self.n
    }
    pub fn line_count(&self) -> usize {
        self.n
    }
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }
    /// Line feeding controlled bus `bus` (1-based bus number).
    pub fn line_into(&self, bus: usize) -> &Line {
        &self.lines[bus - 1]
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn parent(&self, bus: usize) -> usize {
        self.parent[bus - 1]
    }
    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }
    pub fn depth(&self, bus: usize) -> usize {
        self.depth[bus - 1]
    }

    /// Common resistance of every line, if there is one.
    pub fn uniform_resistance(&self) -> Option<f64> {
        let r = self.lines.first()?.resistance;
        self.lines.iter().all(|l| l.resistance == r).then_some(r)
    }

    pub fn adjacency(&self) -> AdjacencyMatrix {
        build_adjacency(self)
    }

    /// Squared voltage magnitudes of buses `1..=n`, propagated from the head.
    ///
    /// `flows` are the controller's flows (net generation downstream, see the
    /// module docs); the physical real flow from the from-bus to the to-bus is
    /// their negation.
    pub fn voltages(&self, flows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GridError> {
        if flows.len() != self.n {
            return Err(GridError::LengthMismatch {
                expected: self.n,
                got: flows.len(),
            });
        }
        let t = flows.first().map_or(0, Vec::len);
        let physical: Vec<Vec<f64>> = flows
            .iter()
            .map(|f| f.iter().map(|v| -v).collect())
            .collect();
        voltages_lindistflow(self, &physical, t)
    }
}

/// LinDistFlow voltage drop: `V_j^2 = V_i^2 - 2 (r P_ij + x Q_ij)` from the
/// head outward. `from_to_flows[k]` is the real flow on line `k` measured
/// from its from-bus to its to-bus.
pub fn voltages_lindistflow(
    topo: &Topology,
    from_to_flows: &[Vec<f64>],
    slots: usize,
) -> Result<Vec<Vec<f64>>, GridError> {
    for f in from_to_flows {
        if f.len() != slots {
            return Err(GridError::LengthMismatch {
                expected: slots,
                got: f.len(),
            });
        }
    }
    let root = vec![topo.v0 * topo.v0; slots];
    let mut out = vec![Vec::new(); topo.n];
    let mut stack: Vec<usize> = topo.children(0).to_vec();
    while let Some(bus) = stack.pop() {
        let line = topo.line_into(bus);
        let upstream = if line.from == 0 {
            &root
        } else {
            &out[line.from - 1]
        };
        let v: Vec<f64> = upstream
            .iter()
            .zip(&from_to_flows[bus - 1])
            .map(|(vi, p)| vi - 2.0 * (line.resistance * p + line.reactance * line.reactive_flow))
            .collect();
        out[bus - 1] = v;
        stack.extend_from_slice(topo.children(bus));
    }
    Ok(out)
}

/// The 0/1 matrix `Z`: row `k` marks the buses fed through line `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    rows: Vec<Vec<u8>>,
}

pub fn build_adjacency(topo: &Topology) -> AdjacencyMatrix {
    let n = topo.n;
    let mut rows = vec![vec![0u8; n]; n];
    for (k, row) in rows.iter_mut().enumerate() {
        let mut stack = vec![k + 1];
        while let Some(bus) = stack.pop() {
            row[bus - 1] = 1;
            stack.extend_from_slice(topo.children(bus));
        }
    }
    AdjacencyMatrix { rows }
}

impl AdjacencyMatrix {
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Self {
        AdjacencyMatrix { rows }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Row of line `line` (0-based line index).
    pub fn row(&self, line: usize) -> &[u8] {
        &self.rows[line]
    }

    pub fn get(&self, line: usize, bus: usize) -> u8 {
        self.rows[line][bus]
    }

    /// `pi_i(j) = sum_l Z_l(i) Z_l(j)`; `bus` is a 0-based column index.
    pub fn pi(&self, bus: usize) -> Vec<u64> {
        let n = self.size();
        let mut out = vec![0u64; n];
        for row in self.rows.iter().filter(|r| r[bus] == 1) {
            for (o, &z) in out.iter_mut().zip(row) {
                *o += z as u64;
            }
        }
        out
    }

    /// Column `bus` of `Z`, i.e. the lines whose downstream set holds `bus`.
    pub fn psi(&self, bus: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[bus]).collect()
    }

    /// Downstream sets either nest or are disjoint.
    pub fn is_laminar(&self) -> bool {
        let n = self.size();
        for a in 0..n {
            for b in a + 1..n {
                let (ra, rb) = (&self.rows[a], &self.rows[b]);
                let both = ra
                    .iter()
                    .zip(rb)
                    .filter(|(x, y)| **x == 1 && **y == 1)
                    .count();
                let ca = ra.iter().filter(|&&x| x == 1).count();
                let cb = rb.iter().filter(|&&x| x == 1).count();
                if both != 0 && both != ca.min(cb) {
                    return false;
                }
            }
        }
        true
    }
}

/// `p_i = pv - ess - baseline`, elementwise.
pub fn bus_injection(
    pv_sum: &[f64],
    ess_sum: &[f64],
    baseline: &[f64],
) -> Result<Vec<f64>, GridError> {
    for other in [ess_sum.len(), baseline.len()] {
        if other != pv_sum.len() {
            return Err(GridError::LengthMismatch {
                expected: pv_sum.len(),
                got: other,
            });
        }
    }
    Ok(pv_sum
        .iter()
        .zip(ess_sum)
        .zip(baseline)
        .map(|((p, e), c)| p - e - c)
        .collect())
}

/// `flow_l = sum_j Z_l(j) p_j` for every line and slot.
pub fn line_flows(
    z: &AdjacencyMatrix,
    injections: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, GridError> {
    if injections.len() != z.size() {
        return Err(GridError::LengthMismatch {
            expected: z.size(),
            got: injections.len(),
        });
    }
    let t = injections.first().map_or(0, Vec::len);
    if let Some(bad) = injections.iter().find(|v| v.len() != t) {
        return Err(GridError::LengthMismatch {
            expected: t,
            got: bad.len(),
        });
    }
    Ok(z.rows
        .iter()
        .map(|row| {
            let mut flow = vec![0.0; t];
            for (j, _) in row.iter().enumerate().filter(|(_, &b)| b == 1) {
                for (f, p) in flow.iter_mut().zip(&injections[j]) {
                    *f += p;
                }
            }
            flow
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub bus: usize,
    /// Forecast maximum output per slot (kW).
    pub cap: Vec<f64>,
}

impl PvUnit {
    pub fn new(bus: usize, cap: Vec<f64>) -> Result<Self, GridError> {
        if let Some(slot) = cap.iter().position(|&c| !(c >= 0.0)) {
            return Err(GridError::NegativeForecast { bus, slot });
        }
        Ok(PvUnit { bus, cap })
    }
}

/// A home battery. Positive power charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssUnit {
    pub bus: usize,
    /// Largest discharge rate (kW, positive number).
    pub discharge_cap: f64,
    /// Largest charge rate (kW).
    pub charge_cap: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
    /// Slot length (h).
    pub dt: f64,
}

impl EssUnit {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |reason: String| {
            Err(GridError::BadEss {
                bus: self.bus,
                reason,
            })
        };
        if !(self.discharge_cap > 0.0 && self.charge_cap > 0.0) {
            return bad(format!(
                "rates must be positive, got -{} / +{}",
                self.discharge_cap, self.charge_cap
            ));
        }
        if !(self.dt > 0.0) {
            return bad(format!("slot length must be positive, got {}", self.dt));
        }
        if !(0.0 <= self.soc_min && self.soc_min <= self.soc_init && self.soc_init <= self.soc_max)
        {
            return bad(format!(
                "need 0 <= min <= initial <= max, got {} / {} / {}",
                self.soc_min, self.soc_init, self.soc_max
            ));
        }
        Ok(())
    }
}

/// `SoC_t = s0 + dt * sum_{tau <= t} power_tau`.
pub fn ess_soc_trajectory(unit: &EssUnit, power: &[f64]) -> Vec<f64> {
    power
        .iter()
        .scan(unit.soc_init, |soc, p| {
            *soc += unit.dt * p;
            Some(*soc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(from: usize, to: usize) -> Line {
        Line {
            from,
            to,
            resistance: 0.01,
            reactance: 0.0,
            flow_cap: 1000.0,
            reactive_flow: 0.0,
        }
    }

    fn chain2() -> Topology {
        Topology::new(2, vec![line(0, 1), line(1, 2)], 1.0).unwrap()
    }

    fn from_parents(parents: &[usize]) -> Topology {
        let lines = parents
            .iter()
            .enumerate()
            .map(|(k, &p)| line(p, k + 1))
            .collect();
        Topology::new(parents.len(), lines, 1.0).unwrap()
    }

    /// Ancestor walk: is `bus` fed through the line into `head`?
    fn downstream_oracle(topo: &Topology, head: usize, bus: usize) -> bool {
        let mut b = bus;
        loop {
            if b == head {
                return true;
            }
            if b == 0 {
                return false;
            }
            b = topo.parent(b);
        }
    }

    #[test]
    fn bundled_feeder_rows() {
        let z = Topology::ieee13(0.01, 1000.0).adjacency();
        assert_eq!(z.row(8), &[0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0]);
        assert_eq!(z.row(1), &[0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(z.row(0), &[1; 12]);
        assert!(z.is_laminar());
    }

    #[test]
    fn small_adjacency_examples() {
        let z = chain2().adjacency();
        assert_eq!(z.row(0), &[1, 1]);
        assert_eq!(z.row(1), &[0, 1]);
        let star = from_parents(&[0, 0, 0]).adjacency();
        for k in 0..3 {
            let mut unit = vec![0; 3];
            unit[k] = 1;
            assert_eq!(star.row(k), unit.as_slice());
        }
    }

    #[test]
    fn malformed_topologies_are_rejected() {
        assert_eq!(
            Topology::new(2, vec![line(2, 1), line(1, 2)], 1.0),
            Err(GridError::CycleDetected(1))
        );
        assert_eq!(
            Topology::new(2, vec![line(0, 1), line(0, 1)], 1.0),
            Err(GridError::DuplicateParent(1))
        );
        assert!(matches!(
            Topology::new(2, vec![line(0, 1), line(3, 2)], 1.0),
            Err(GridError::UnknownBus(3, 2))
        ));
        let mut l = line(0, 1);
        l.flow_cap = 0.0;
        assert!(matches!(
            Topology::new(1, vec![l], 1.0),
            Err(GridError::NonPositive { .. })
        ));
    }

    #[test]
    fn pi_examples() {
        let z = chain2().adjacency();
        assert_eq!(z.pi(1), vec![1, 2]);
        let topo = Topology::ieee13(0.01, 1000.0);
        let z = topo.adjacency();
        // coupling for bus 2 is (sum of all injections) + p2 + p3
        let mut expected = vec![1u64; 12];
        expected[1] = 2;
        expected[2] = 2;
        assert_eq!(z.pi(1), expected);
        for bus in 1..=12 {
            assert_eq!(z.pi(bus - 1)[bus - 1], topo.depth(bus) as u64);
        }
    }

    #[test]
    fn psi_examples() {
        let z = from_parents(&[0, 1, 2, 3]).adjacency();
        assert_eq!(z.psi(3), vec![1, 1, 1, 1]);
        let z = Topology::ieee13(0.01, 1000.0).adjacency();
        assert_eq!(z.psi(8), vec![1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn injection_and_flow_examples() {
        assert_eq!(bus_injection(&[0.0], &[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(bus_injection(&[2.5], &[1.0], &[0.5]).unwrap(), vec![1.0]);
        assert_eq!(
            bus_injection(&[1.0, 2.0, 3.0], &[0.5, -1.0, 0.0], &[0.25, 0.25, 4.0]).unwrap(),
            vec![0.25, 2.75, -1.0]
        );
        assert!(bus_injection(&[1.0], &[1.0, 2.0], &[0.0]).is_err());

        let z = chain2().adjacency();
        assert_eq!(
            line_flows(&z, &[vec![0.0], vec![0.0]]).unwrap(),
            vec![vec![0.0], vec![0.0]]
        );
        assert_eq!(
            line_flows(&z, &[vec![1.0], vec![2.0]]).unwrap(),
            vec![vec![3.0], vec![2.0]]
        );

        let z = Topology::ieee13(0.01, 1000.0).adjacency();
        let p: Vec<Vec<f64>> = (0..12).map(|k| vec![k as f64 * 0.5 - 2.0]).collect();
        let total: f64 = p.iter().map(|v| v[0]).sum();
        assert_eq!(line_flows(&z, &p).unwrap()[0][0], total);
    }

    #[test]
    fn voltage_examples() {
        let one = Topology::new(1, vec![line(0, 1)], 1.0).unwrap();
        assert_eq!(
            voltages_lindistflow(&one, &[vec![0.0]], 1).unwrap(),
            vec![vec![1.0]]
        );
        let v = voltages_lindistflow(&one, &[vec![1.0]], 1).unwrap();
        assert!((v[0][0] - 0.98).abs() < 1e-12);
        // consumption at the end of a chain: voltage falls monotonically
        let chain = from_parents(&[0, 1, 2, 3]);
        let z = chain.adjacency();
        let flows = line_flows(&z, &[vec![-1.0], vec![-1.0], vec![-1.0], vec![-1.0]]).unwrap();
        let v = chain.voltages(&flows).unwrap();
        assert!(v.windows(2).all(|w| w[1][0] < w[0][0]));
    }

    #[test]
    fn soc_examples() {
        let unit = EssUnit {
            bus: 1,
            discharge_cap: 3.0,
            charge_cap: 3.0,
            soc_min: 0.0,
            soc_max: 10.0,
            soc_init: 4.0,
            dt: 0.25,
        };
        assert_eq!(ess_soc_trajectory(&unit, &[0.0; 3]), vec![4.0; 3]);
        assert_eq!(
            ess_soc_trajectory(&unit, &[3.0, 3.0, -3.0]),
            vec![4.75, 5.5, 4.75]
        );
        let mut impulse = vec![0.0; 5];
        impulse[2] = 4.0;
        assert_eq!(
            ess_soc_trajectory(&unit, &impulse),
            vec![4.0, 4.0, 5.0, 5.0, 5.0]
        );
        assert!(unit.validate().is_ok());
        assert!(EssUnit {
            soc_init: 11.0,
            ..unit.clone()
        }
        .validate()
        .is_err());
    }

    fn random_tree() -> impl Strategy<Value = Vec<usize>> {
        // parent of bus k is drawn from 0..k, which always yields a tree
        (1usize..14).prop_flat_map(|n| (0..n).map(|k| 0..=k).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn adjacency_matches_ancestor_walk(parents in random_tree()) {
            let topo = from_parents(&parents);
            let z = topo.adjacency();
            prop_assert!(z.is_laminar());
            for k in 0..topo.bus_count() {
                for j in 0..topo.bus_count() {
                    let expect = downstream_oracle(&topo, k + 1, j + 1) as u8;
                    prop_assert_eq!(z.get(k, j), expect);
                    prop_assert_eq!(z.psi(j)[k], expect);
                }
            }
        }

        #[test]
        fn pi_is_symmetric(parents in random_tree()) {
            let z = from_parents(&parents).adjacency();
            let n = z.size();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(z.pi(i)[j], z.pi(j)[i]);
                }
            }
        }

        #[test]
        fn parent_flow_telescopes(parents in random_tree(), seed in any::<u64>()) {
            let topo = from_parents(&parents);
            let n = topo.bus_count();
            let p: Vec<Vec<f64>> = (0..n)
                .map(|k| vec![((seed.rotate_left(k as u32 * 5) % 1000) as f64) / 100.0 - 5.0])
                .collect();
            let flows = line_flows(&topo.adjacency(), &p).unwrap();
            for bus in 1..=n {
                let children: f64 = topo.children(bus).iter().map(|&c| flows[c - 1][0]).sum();
                prop_assert!((flows[bus - 1][0] - p[bus - 1][0] - children).abs() < 1e-9);
            }
        }
    }
}
