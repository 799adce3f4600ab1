//! What an honest-but-curious observer can and cannot learn from a
//! transcript.
//!
//! Views are rebuilt from recorded messages. A point on a sharing
//! polynomial is `(alpha_u, y)`, where `alpha_u` is the challenge cloud `u`
//! announced in that iteration.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::field::{FieldElement, PrimeField};
use crate::shamir::{
    consistent_polynomial, evaluate, reconstruct_with_threshold, SecretPolynomial, ShareError,
    SharePoint, SharingPolicy,
};

use super::message::{Message, MessageKind, PartyId};
use super::ProtocolError;

/// Identifies one sharing polynomial in a run. `owner` is the bus that
/// dealt it (for shares) or the party an aggregate is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolyKey {
    pub kind: MessageKind,
    pub owner: PartyId,
    pub iter: usize,
    pub slot: usize,
}

/// Points on every polynomial, restricted to messages `visible` accepts.
/// `visible` receives the message and the cloud on the other end.
pub fn points_in_view<F>(messages: &[Message], mut visible: F) -> BTreeMap<PolyKey, Vec<SharePoint>>
where
    F: FnMut(&Message, usize) -> bool,
{
    let mut alphas: BTreeMap<(usize, usize), FieldElement> = BTreeMap::new();
    let mut out: BTreeMap<PolyKey, Vec<SharePoint>> = BTreeMap::new();
    for m in messages {
        let (owner, cloud, x) = match (m.kind, m.from, m.to) {
            (MessageKind::Challenge, PartyId::Cloud(u), _) => {
                if let Some(a) = m.alpha {
                    alphas.insert((m.iter, u), a);
                }
                continue;
            }
            (MessageKind::Share, PartyId::Bus(_), PartyId::Cloud(u)) => {
                match alphas.get(&(m.iter, u)) {
                    Some(&a) => (m.from, u, a),
                    None => continue,
                }
            }
            (MessageKind::Aggregate, PartyId::Cloud(u), to) => match m.alpha {
                Some(a) => (to, u, a),
                None => continue,
            },
            _ => continue,
        };
        if !visible(m, cloud) {
            continue;
        }
        for (slot, &y) in m.values.iter().enumerate() {
            let key = PolyKey {
                kind: m.kind,
                owner,
                iter: m.iter,
                slot,
            };
            let pts = out.entry(key).or_default();
            // A retried round re-deals; keep only the latest points.
            if let Some(p) = pts.iter_mut().find(|p| p.x == x) {
                p.y = y;
            } else {
                pts.push(SharePoint { x, y });
            }
        }
    }
    out
}

/// Largest number of points on one polynomial in the joint view of `clouds`.
pub fn max_points_in_cloud_view(messages: &[Message], clouds: &[usize]) -> usize {
    let set: BTreeSet<usize> = clouds.iter().copied().collect();
    points_in_view(messages, |_, u| set.contains(&u))
        .values()
        .map(Vec::len)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialAnalysis {
    pub key: PolyKey,
    pub points: usize,
    /// Rank of the observed rows of the Vandermonde system in `d` unknowns.
    pub rank: usize,
    /// Candidate secrets for which a consistent polynomial was exhibited.
    pub candidates_consistent: usize,
    pub candidates_tried: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollusionReport {
    pub colluders: Vec<usize>,
    pub threshold: usize,
    pub analyses: Vec<PolynomialAnalysis>,
}

impl CollusionReport {
    /// Every sampled system is rank deficient and every candidate fits.
    pub fn perfectly_hiding(&self) -> bool {
        self.analyses
            .iter()
            .all(|a| a.rank < self.threshold && a.candidates_consistent == a.candidates_tried)
    }
}

fn check_colluders(colluders: &[usize], policy: &SharingPolicy) -> Result<(), ProtocolError> {
    let set: BTreeSet<usize> = colluders.iter().copied().collect();
    if set.len() != colluders.len() || colluders.iter().any(|&u| u == 0 || u > policy.clouds()) {
        return Err(ProtocolError::Config(format!(
            "colluders must be distinct clouds in 1..={}",
            policy.clouds()
        )));
    }
    Ok(())
}

/// For fewer than `d` colluding clouds: for each sampled polynomial their
/// joint view gives a rank-deficient system, and for each of `candidates`
/// random secrets a degree-`d-1` polynomial through the observed points with
/// that secret is exhibited and checked.
pub fn collusion_analysis<R: Rng + ?Sized>(
    messages: &[Message],
    colluders: &[usize],
    policy: &SharingPolicy,
    samples: &[PolyKey],
    candidates: usize,
    rng: &mut R,
) -> Result<CollusionReport, ProtocolError> {
    check_colluders(colluders, policy)?;
    let d = policy.threshold();
    if colluders.len() >= d {
        return Err(ProtocolError::ThresholdReached {
            colluders: colluders.len(),
            threshold: d,
        });
    }
    let field = policy.field();
    let set: BTreeSet<usize> = colluders.iter().copied().collect();
    let view = points_in_view(messages, |_, u| set.contains(&u));
    let mut analyses = Vec::with_capacity(samples.len());
    for key in samples {
        let pts = view.get(key).cloned().unwrap_or_default();
        let rows = pts
            .iter()
            .map(|p| (0..d as u64).map(|m| field.pow(p.x, m)).collect())
            .collect();
        let rank = field.rank(rows);
        let mut tried = BTreeSet::new();
        while tried.len() < candidates {
            tried.insert(rng.random_range(0..field.modulus()));
        }
        let mut consistent = 0;
        for &c in &tried {
            if fits(&consistent_polynomial(&pts, c, d, field)?, &pts, c, field)? {
                consistent += 1;
            }
        }
        analyses.push(PolynomialAnalysis {
            key: *key,
            points: pts.len(),
            rank,
            candidates_consistent: consistent,
            candidates_tried: tried.len(),
        });
    }
    Ok(CollusionReport {
        colluders: colluders.to_vec(),
        threshold: d,
        analyses,
    })
}

fn fits(
    poly: &SecretPolynomial,
    pts: &[SharePoint],
    secret: FieldElement,
    field: PrimeField,
) -> Result<bool, ShareError> {
    if poly.secret() != secret {
        return Ok(false);
    }
    for p in pts {
        if evaluate(poly, p.x, field)? != p.y {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconstruction {
    pub key: PolyKey,
    pub recovered: FieldElement,
    /// What the full set of clouds' points gives.
    pub truth: FieldElement,
}

/// With `d` or more colluders, opens each sampled polynomial from their
/// points alone and from every cloud's points for comparison.
pub fn collusion_reconstruct(
    messages: &[Message],
    colluders: &[usize],
    policy: &SharingPolicy,
    samples: &[PolyKey],
) -> Result<Vec<Reconstruction>, ProtocolError> {
    check_colluders(colluders, policy)?;
    let d = policy.threshold();
    let field = policy.field();
    let set: BTreeSet<usize> = colluders.iter().copied().collect();
    let view = points_in_view(messages, |_, u| set.contains(&u));
    let full = points_in_view(messages, |_, _| true);
    samples
        .iter()
        .map(|key| {
            let pts = view.get(key).cloned().unwrap_or_default();
            let all = full.get(key).cloned().unwrap_or_default();
            Ok(Reconstruction {
                key: *key,
                recovered: reconstruct_with_threshold(&pts, d, field)?,
                truth: reconstruct_with_threshold(&all, d, field)?,
            })
        })
        .collect()
}

/// A transcript fragment built without the peers' real secrets.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedView {
    pub secrets: Vec<FieldElement>,
    pub challenges: Vec<FieldElement>,
    /// One aggregate share per cloud.
    pub aggregate_shares: Vec<FieldElement>,
    pub reconstructed: FieldElement,
}

/// Random peer secrets with `sum_j w_j s_j = target (mod e)`. If `own` is
/// given, that entry keeps the caller's value. One peer with an invertible
/// weight absorbs the difference.
pub fn simulate_peer_secrets<R: Rng + ?Sized>(
    weights: &[u64],
    own: Option<(usize, FieldElement)>,
    target: FieldElement,
    field: PrimeField,
    rng: &mut R,
) -> Result<Vec<FieldElement>, ProtocolError> {
    let mut s: Vec<FieldElement> = (0..weights.len())
        .map(|_| rng.random_range(0..field.modulus()))
        .collect();
    if let Some((i, v)) = own {
        s[i] = v;
    }
    let free = (0..weights.len())
        .find(|&j| own.map(|o| o.0) != Some(j) && field.reduce(weights[j]) != 0)
        .ok_or_else(|| ProtocolError::Config("no peer with a nonzero weight to adjust".into()))?;
    let rest = (0..weights.len()).filter(|&j| j != free).fold(0, |acc, j| {
        field.add(acc, field.mul(field.reduce(weights[j]), s[j]))
    });
    let w_inv = field
        .inv(field.reduce(weights[free]))
        .map_err(ShareError::from)?;
    s[free] = field.mul(field.sub(target, rest), w_inv);
    Ok(s)
}

/// Builds a view for a bus that knows only its own secret, its weights and
/// the aggregate it opened: fake peer secrets, fresh polynomials and fresh
/// distinct challenges, aggregated and reconstructed exactly as in a run.
pub fn simulator_construct<R: Rng + ?Sized>(
    weights: &[u64],
    own: Option<(usize, FieldElement)>,
    target: FieldElement,
    policy: &SharingPolicy,
    rng: &mut R,
) -> Result<SimulatedView, ProtocolError> {
    let field = policy.field();
    let secrets = simulate_peer_secrets(weights, own, target, field, rng)?;
    let polys = secrets
        .iter()
        .map(|&s| SecretPolynomial::random(s, policy.threshold(), field, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut challenges: Vec<FieldElement> = Vec::with_capacity(policy.clouds());
    while challenges.len() < policy.clouds() {
        let a = rng.random_range(1..field.modulus());
        if !challenges.contains(&a) {
            challenges.push(a);
        }
    }
    let aggregate_shares: Vec<FieldElement> = challenges
        .iter()
        .map(|&a| {
            polys.iter().zip(weights).fold(0, |acc, (p, &w)| {
                field.add(acc, field.mul(field.reduce(w), p.eval_unchecked(a, field)))
            })
        })
        .collect();
    let points: Vec<SharePoint> = challenges
        .iter()
        .zip(&aggregate_shares)
        .map(|(&x, &y)| SharePoint { x, y })
        .collect();
    let reconstructed = reconstruct_with_threshold(&points, policy.threshold(), field)?;
    Ok(SimulatedView {
        secrets,
        challenges,
        aggregate_shares,
        reconstructed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EavesdropReport {
    pub tapped: Vec<(usize, usize)>,
    pub polynomials_seen: usize,
    pub max_points: usize,
    /// Polynomials the eavesdropper can open, each checked against the
    /// value every cloud's points give.
    pub opened: usize,
    pub opened_correctly: usize,
    /// Some bus has every one of its cloud links tapped.
    pub assumption_breached: bool,
}

/// An outsider who reads the bus-cloud links in `tapped` (`(bus, cloud)`
/// pairs). Line-owner links are not modelled as tappable.
pub fn eavesdropper_check(
    messages: &[Message],
    tapped: &[(usize, usize)],
    buses: usize,
    policy: &SharingPolicy,
) -> Result<EavesdropReport, ProtocolError> {
    let links: BTreeSet<(usize, usize)> = tapped.iter().copied().collect();
    let on_link = |m: &Message, u: usize| -> bool {
        let bus = match (m.from, m.to) {
            (PartyId::Bus(b), _) | (_, PartyId::Bus(b)) => b,
            _ => return false,
        };
        links.contains(&(bus, u))
    };
    let view = points_in_view(messages, on_link);
    let full = points_in_view(messages, |_, _| true);
    let d = policy.threshold();
    let field = policy.field();
    let mut opened = 0;
    let mut opened_correctly = 0;
    for (key, pts) in &view {
        if pts.len() >= d {
            opened += 1;
            let got = reconstruct_with_threshold(pts, d, field)?;
            let truth = reconstruct_with_threshold(&full[key], d, field)?;
            if got == truth {
                opened_correctly += 1;
            }
        }
    }
    let assumption_breached =
        (1..=buses).any(|b| (1..=policy.clouds()).all(|u| links.contains(&(b, u))));
    Ok(EavesdropReport {
        tapped: links.into_iter().collect(),
        polynomials_seen: view.len(),
        max_points: view.values().map(Vec::len).max().unwrap_or(0),
        opened,
        opened_correctly,
        assumption_breached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MERSENNE_31;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fake_pair_hits_the_aggregate() {
        let f = PrimeField::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        // true secrets (3, 4) under weights (1, 1) aggregate to 7
        let fake = simulate_peer_secrets(&[1, 1], None, 7, f, &mut rng).unwrap();
        assert_eq!(f.add(fake[0], fake[1]), 7);
        assert_ne!(fake, vec![3, 4]);
        let kept = simulate_peer_secrets(&[2, 1, 3], Some((0, 5)), 100, f, &mut rng).unwrap();
        assert_eq!(kept[0], 5);
        let total = kept
            .iter()
            .zip([2u64, 1, 3])
            .fold(0, |a, (&s, w)| f.add(a, f.mul(w, s)));
        assert_eq!(total, 100);
    }

    #[test]
    fn simulated_view_reconstructs_target() {
        let policy = SharingPolicy::new(4, 4, MERSENNE_31).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for target in [0, 1, 12345, MERSENNE_31 - 1] {
            let v = simulator_construct(&[3, 1, 1, 2], Some((0, 77)), target, &policy, &mut rng)
                .unwrap();
            assert_eq!(v.reconstructed, target);
            assert_eq!(v.secrets[0], 77);
        }
        assert!(simulate_peer_secrets(&[1, 0], Some((0, 1)), 5, policy.field(), &mut rng).is_err());
    }

    fn dealt() -> (Vec<Message>, SharingPolicy) {
        let policy = SharingPolicy::new(3, 2, MERSENNE_31).unwrap();
        let f = policy.field();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let alphas = [11u64, 22, 33];
        let mut msgs: Vec<Message> = alphas
            .iter()
            .enumerate()
            .map(|(u, &a)| Message::challenge(0, u + 1, a))
            .collect();
        for bus in 1..=2 {
            let p = SecretPolynomial::random(40 + bus as u64, 2, f, &mut rng).unwrap();
            for (u, &a) in alphas.iter().enumerate() {
                msgs.push(Message::share(0, bus, u + 1, vec![p.eval_unchecked(a, f)]));
            }
        }
        (msgs, policy)
    }

    #[test]
    fn below_threshold_every_candidate_fits() {
        let (msgs, policy) = dealt();
        let key = PolyKey {
            kind: MessageKind::Share,
            owner: PartyId::Bus(1),
            iter: 0,
            slot: 0,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let r = collusion_analysis(&msgs, &[2], &policy, &[key], 10, &mut rng).unwrap();
        assert!(r.perfectly_hiding());
        assert_eq!((r.analyses[0].points, r.analyses[0].rank), (1, 1));
        assert!(matches!(
            collusion_analysis(&msgs, &[1, 3], &policy, &[key], 10, &mut rng),
            Err(ProtocolError::ThresholdReached {
                colluders: 2,
                threshold: 2
            })
        ));
        let rec = collusion_reconstruct(&msgs, &[1, 3], &policy, &[key]).unwrap();
        assert_eq!(rec[0].recovered, 41);
        assert_eq!(rec[0].truth, 41);
        assert_eq!(max_points_in_cloud_view(&msgs, &[2]), 1);
    }

    #[test]
    fn eavesdropper_needs_every_link_of_a_bus() {
        let (msgs, policy) = dealt();
        let none = eavesdropper_check(&msgs, &[], 2, &policy).unwrap();
        assert_eq!((none.polynomials_seen, none.opened), (0, 0));
        let one = eavesdropper_check(&msgs, &[(1, 1), (2, 3)], 2, &policy).unwrap();
        assert_eq!(
            (one.max_points, one.opened, one.assumption_breached),
            (1, 0, false)
        );
        let two = eavesdropper_check(&msgs, &[(1, 1), (1, 2)], 2, &policy).unwrap();
        assert_eq!((two.opened, two.opened_correctly), (1, 1));
    }
}
