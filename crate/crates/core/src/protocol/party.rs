//! The three roles as plain state machines. None of them touches a socket;
//! the session feeds them what they received and posts what they return.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::field::{FieldElement, PrimeField};
use crate::quantizer::QuantParams;
use crate::shamir::{combine, lagrange_at_zero, SecretPolynomial, SharingPolicy};
use crate::solver::{dual_update, Problem};

use super::message::{Message, MessageKind, PartyId};
use super::ProtocolError;

/// Independent stream per party, derived from the run seed.
pub fn party_rng(seed: u64, party: PartyId) -> ChaCha20Rng {
    let digest = Sha256::digest(format!("privgrid/{seed}/{party}").as_bytes());
    ChaCha20Rng::from_seed(digest.into())
}

/// Topology-derived weights every party may know.
#[derive(Debug, Clone)]
pub struct PublicWeights {
    pub slots: usize,
    /// `pi_i`, indexed by bus - 1.
    pub pi: Vec<Vec<u64>>,
    /// Rows of `Z`, indexed by line - 1.
    pub z: Vec<Vec<u64>>,
    /// `psi_i`, indexed by bus - 1.
    pub psi: Vec<Vec<u64>>,
}

impl PublicWeights {
    pub fn from_problem(problem: &Problem) -> Self {
        let n = problem.bus_count();
        PublicWeights {
            slots: problem.slots(),
            pi: (1..=n).map(|b| problem.pi(b).to_vec()).collect(),
            z: (0..problem.z.size())
                .map(|l| problem.z.row(l).iter().map(|&v| v as u64).collect())
                .collect(),
            psi: (0..n)
                .map(|b| problem.z.psi(b).iter().map(|&v| v as u64).collect())
                .collect(),
        }
    }
    pub fn buses(&self) -> usize {
        self.pi.len()
    }
    pub fn lines(&self) -> usize {
        self.z.len()
    }
}

fn expect_kind(
    party: PartyId,
    msgs: &[Message],
    kind: MessageKind,
    iter: usize,
    len: usize,
) -> Result<(), ProtocolError> {
    for m in msgs {
        if m.kind != kind || m.iter != iter || m.values.len() != len {
            return Err(ProtocolError::Unexpected {
                party,
                reason: format!(
                    "wanted {kind:?} for iteration {iter} with {len} values, got {:?} for {} with {}",
                    m.kind,
                    m.iter,
                    m.values.len()
                ),
            });
        }
    }
    Ok(())
}

/// Opens a vector secret from aggregates carrying their challenge: the
/// `threshold` smallest challenges are used, as in scalar reconstruction.
pub fn open_vector(
    party: PartyId,
    aggregates: &[Message],
    threshold: usize,
    field: PrimeField,
) -> Result<Vec<FieldElement>, ProtocolError> {
    if aggregates.len() < threshold {
        return Err(ProtocolError::Unexpected {
            party,
            reason: format!("{} aggregates for threshold {threshold}", aggregates.len()),
        });
    }
    let mut by_x: Vec<&Message> = aggregates.iter().collect();
    by_x.sort_by_key(|m| m.alpha);
    let used = &by_x[..threshold];
    let xs: Vec<FieldElement> = used.iter().map(|m| m.alpha.unwrap_or(0)).collect();
    let w = lagrange_at_zero(&xs, field)?;
    let slots = used[0].values.len();
    let mut ys = vec![0; threshold];
    Ok((0..slots)
        .map(|t| {
            for (y, m) in ys.iter_mut().zip(used) {
                *y = m.values[t];
            }
            combine(&w, &ys, field)
        })
        .collect())
}

pub struct CloudNode {
    pub id: usize,
    rng: ChaCha20Rng,
    field: PrimeField,
    alpha: Option<FieldElement>,
}

impl CloudNode {
    pub fn new(id: usize, seed: u64, field: PrimeField) -> Self {
        CloudNode {
            id,
            rng: party_rng(seed, PartyId::Cloud(id)),
            field,
            alpha: None,
        }
    }

    pub fn party(&self) -> PartyId {
        PartyId::Cloud(self.id)
    }

    pub fn alpha(&self) -> Option<FieldElement> {
        self.alpha
    }

    /// Fresh nonzero challenge, shared by every slot of this iteration.
    pub fn challenge(&mut self, iter: usize) -> Message {
        let a = self.rng.random_range(1..self.field.modulus());
        self.alpha = Some(a);
        Message::challenge(iter, self.id, a)
    }

    /// Announces a given challenge instead of a fresh one.
    pub fn challenge_with(&mut self, iter: usize, alpha: FieldElement) -> Message {
        self.alpha = Some(alpha);
        Message::challenge(iter, self.id, alpha)
    }

    fn weighted(&self, shares: &[&Message], weights: &[u64], t: usize) -> FieldElement {
        let acc: u128 = shares
            .iter()
            .zip(weights)
            .map(|(m, &w)| w as u128 * m.values[t] as u128)
            .sum();
        (acc % self.field.modulus() as u128) as FieldElement
    }

    /// One share from every bus in, one aggregate per bus (weights `pi_i`)
    /// and one per line owner (weights `Z_l`) out.
    pub fn aggregate(
        &self,
        iter: usize,
        shares: &[Message],
        w: &PublicWeights,
    ) -> Result<Vec<Message>, ProtocolError> {
        let party = self.party();
        let alpha = self.alpha.ok_or_else(|| ProtocolError::Unexpected {
            party,
            reason: "no challenge issued".into(),
        })?;
        expect_kind(party, shares, MessageKind::Share, iter, w.slots)?;
        let mut ordered: Vec<&Message> = Vec::with_capacity(w.buses());
        for bus in 1..=w.buses() {
            match shares
                .iter()
                .filter(|m| m.from == PartyId::Bus(bus))
                .collect::<Vec<_>>()[..]
            {
                [m] => ordered.push(m),
                _ => {
                    return Err(ProtocolError::Unexpected {
                        party,
                        reason: format!("need exactly one share from bus:{bus}"),
                    })
                }
            }
        }
        let targets =
            w.pi.iter()
                .enumerate()
                .map(|(i, pi)| (PartyId::Bus(i + 1), pi))
                .chain(
                    w.z.iter()
                        .enumerate()
                        .map(|(l, z)| (PartyId::Line(l + 1), z)),
                );
        Ok(targets
            .map(|(to, weights)| {
                let values = (0..w.slots)
                    .map(|t| self.weighted(&ordered, weights, t))
                    .collect();
                Message::aggregate(iter, self.id, to, alpha, values)
            })
            .collect())
    }

    /// Combines the multiplier reports along each bus's path to the root:
    /// `sum_l psi_i(l) (mu_u - mu_l)`, computed on the fixed-point integers.
    pub fn combine_duals(
        &self,
        iter: usize,
        reports: &[Message],
        w: &PublicWeights,
        dual: &QuantParams,
    ) -> Result<Vec<Message>, ProtocolError> {
        let party = self.party();
        expect_kind(party, reports, MessageKind::DualReport, iter, 2 * w.slots)?;
        let t_len = w.slots;
        let mut diff = vec![vec![0i64; t_len]; w.lines()];
        let mut mag = vec![vec![0i64; t_len]; w.lines()];
        let mut seen = vec![false; w.lines()];
        for m in reports {
            let l = match (m.from, m.line) {
                (PartyId::Line(l), Some(k)) if l == k && l >= 1 && l <= w.lines() => l - 1,
                _ => {
                    return Err(ProtocolError::Unexpected {
                        party,
                        reason: format!("dual report from {}", m.from),
                    })
                }
            };
            if std::mem::replace(&mut seen[l], true) {
                return Err(ProtocolError::Unexpected {
                    party,
                    reason: format!("two reports from line:{}", l + 1),
                });
            }
            for t in 0..t_len {
                let lo = dual.from_field(m.values[t])?;
                let up = dual.from_field(m.values[t_len + t])?;
                diff[l][t] = up - lo;
                mag[l][t] = up.abs() + lo.abs();
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(ProtocolError::Unexpected {
                party,
                reason: format!("no report from line:{}", l + 1),
            });
        }
        let mut out = Vec::with_capacity(w.buses());
        for (i, psi) in w.psi.iter().enumerate() {
            let mut values = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let col: Vec<i64> = mag.iter().map(|r| r[t]).collect();
                dual.check_weighted_headroom(psi, &col)?;
                let sum: i64 = psi.iter().zip(&diff).map(|(&p, r)| p as i64 * r[t]).sum();
                values.push(dual.to_field(sum)?);
            }
            out.push(Message::dual_combination(iter, self.id, i + 1, values));
        }
        Ok(out)
    }
}

pub struct BusNode {
    pub id: usize,
    rng: ChaCha20Rng,
    policy: SharingPolicy,
    quant: QuantParams,
    dual: QuantParams,
    delta1_bar: f64,
    slots: usize,
    challenges: Vec<(usize, FieldElement)>,
}

impl BusNode {
    pub fn new(
        id: usize,
        seed: u64,
        policy: SharingPolicy,
        quant: QuantParams,
        dual: QuantParams,
        delta1_bar: f64,
        slots: usize,
    ) -> Self {
        BusNode {
            id,
            rng: party_rng(seed, PartyId::Bus(id)),
            policy,
            quant,
            dual,
            delta1_bar,
            slots,
            challenges: Vec::new(),
        }
    }

    pub fn party(&self) -> PartyId {
        PartyId::Bus(self.id)
    }

    /// Checks the challenges, then shares every slot of `injection` with a
    /// fresh polynomial. Returns the outgoing shares and the fixed-point
    /// integers that were shared.
    pub fn share(
        &mut self,
        iter: usize,
        challenges: &[Message],
        injection: &[f64],
    ) -> Result<(Vec<Message>, Vec<i64>), ProtocolError> {
        let party = self.party();
        expect_kind(party, challenges, MessageKind::Challenge, iter, 0)?;
        let mut got: Vec<(usize, FieldElement)> = challenges
            .iter()
            .map(|m| (m.from.cloud_index().unwrap_or(0), m.alpha.unwrap_or(0)))
            .collect();
        got.sort();
        let expected: Vec<usize> = (1..=self.policy.clouds()).collect();
        if got.iter().map(|c| c.0).collect::<Vec<_>>() != expected {
            return Err(ProtocolError::Unexpected {
                party,
                reason: "need one challenge from every cloud".into(),
            });
        }
        let mut xs: Vec<FieldElement> = got.iter().map(|c| c.1).collect();
        xs.sort_unstable();
        if let Some(w) = xs.windows(2).find(|w| w[0] == w[1]) {
            return Err(ProtocolError::DuplicateChallenge { iter, alpha: w[0] });
        }
        self.challenges = got;
        let field = self.policy.field();
        let ints = injection
            .iter()
            .map(|&x| self.quant.quantize(x))
            .collect::<Result<Vec<i64>, _>>()?;
        let mut values = vec![Vec::with_capacity(self.slots); self.challenges.len()];
        for &z in &ints {
            let poly = SecretPolynomial::random(
                self.quant.to_field(z)?,
                self.policy.threshold(),
                field,
                &mut self.rng,
            )?;
            for (v, &(_, a)) in values.iter_mut().zip(&self.challenges) {
                v.push(poly.eval_unchecked(a, field));
            }
        }
        let msgs = self
            .challenges
            .iter()
            .zip(values)
            .map(|(&(u, _), v)| Message::share(iter, self.id, u, v))
            .collect();
        Ok((msgs, ints))
    }

    /// `C_p` from the clouds' aggregates, with the integers it was read from.
    pub fn open_coupling(
        &self,
        iter: usize,
        aggregates: &[Message],
    ) -> Result<(Vec<f64>, Vec<i64>), ProtocolError> {
        let party = self.party();
        expect_kind(party, aggregates, MessageKind::Aggregate, iter, self.slots)?;
        let mut seen: Vec<(usize, FieldElement)> = aggregates
            .iter()
            .map(|m| (m.from.cloud_index().unwrap_or(0), m.alpha.unwrap_or(0)))
            .collect();
        seen.sort();
        if seen != self.challenges {
            return Err(ProtocolError::Unexpected {
                party,
                reason: "aggregates do not match this round's challenges".into(),
            });
        }
        let opened = open_vector(
            party,
            aggregates,
            self.policy.threshold(),
            self.policy.field(),
        )?;
        let ints = opened
            .into_iter()
            .map(|y| self.quant.from_field(y))
            .collect::<Result<Vec<i64>, _>>()?;
        let cp = ints
            .iter()
            .map(|&z| self.delta1_bar * self.quant.dequantize(z))
            .collect();
        Ok((cp, ints))
    }

    /// `C_d` from the clouds' combinations, which must all agree.
    pub fn open_dual(&self, iter: usize, combos: &[Message]) -> Result<Vec<f64>, ProtocolError> {
        let party = self.party();
        expect_kind(
            party,
            combos,
            MessageKind::DualCombination,
            iter,
            self.slots,
        )?;
        let first = combos.first().ok_or_else(|| ProtocolError::Unexpected {
            party,
            reason: "no dual combination".into(),
        })?;
        if combos.len() != self.policy.clouds() || combos.iter().any(|m| m.values != first.values) {
            return Err(ProtocolError::DualMismatch { bus: self.id, iter });
        }
        first
            .values
            .iter()
            .map(|&y| self.dual.decode(y).map_err(ProtocolError::from))
            .collect()
    }
}

pub struct LineNode {
    pub id: usize,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    cap: f64,
    beta: f64,
    policy: SharingPolicy,
    quant: QuantParams,
    dual: QuantParams,
    pending: Option<Vec<f64>>,
}

impl LineNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        mu_lower: Vec<f64>,
        mu_upper: Vec<f64>,
        cap: f64,
        beta: f64,
        policy: SharingPolicy,
        quant: QuantParams,
        dual: QuantParams,
    ) -> Self {
        LineNode {
            id,
            mu_lower,
            mu_upper,
            cap,
            beta,
            policy,
            quant,
            dual,
            pending: None,
        }
    }

    pub fn party(&self) -> PartyId {
        PartyId::Line(self.id)
    }

    /// Current multipliers, lower then upper, to every cloud.
    pub fn report(&self, iter: usize) -> Result<Vec<Message>, ProtocolError> {
        let values = self
            .mu_lower
            .iter()
            .chain(&self.mu_upper)
            .map(|&m| self.dual.encode(m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((1..=self.policy.clouds())
            .map(|u| Message::dual_report(iter, self.id, u, values.clone()))
            .collect())
    }

    /// Reconstructs this line's flow; the multiplier step waits for [`commit`](Self::commit).
    pub fn open_flow(
        &mut self,
        iter: usize,
        aggregates: &[Message],
    ) -> Result<Vec<i64>, ProtocolError> {
        let party = self.party();
        expect_kind(
            party,
            aggregates,
            MessageKind::Aggregate,
            iter,
            self.mu_lower.len(),
        )?;
        let mut from: Vec<PartyId> = aggregates.iter().map(|m| m.from).collect();
        from.sort();
        from.dedup();
        if from.len() != self.policy.clouds() || aggregates.len() != from.len() {
            return Err(ProtocolError::Unexpected {
                party,
                reason: "need one aggregate from every cloud".into(),
            });
        }
        let opened = open_vector(
            party,
            aggregates,
            self.policy.threshold(),
            self.policy.field(),
        )?;
        let ints = opened
            .into_iter()
            .map(|y| self.quant.from_field(y))
            .collect::<Result<Vec<i64>, _>>()?;
        self.pending = Some(ints.iter().map(|&z| self.quant.dequantize(z)).collect());
        Ok(ints)
    }

    pub fn commit(&mut self) {
        if let Some(flow) = self.pending.take() {
            dual_update(
                &mut self.mu_lower,
                &mut self.mu_upper,
                &flow,
                self.cap,
                self.beta,
            );
        }
    }
}
