//! Euclidean projections onto the device feasible sets.
//!
//! The storage set is the intersection of a rate box and a state-of-charge
//! band. Dykstra's method alternates between the two. The band step is a
//! box-constrained least-squares problem in cumulative coordinates
//! `s = cumsum(p)`, where `p = D s` with `D` the lower bidiagonal first
//! difference. Its Hessian `D^T D` is tridiagonal, so a primal active-set
//! loop with one Thomas solve per pass finds the exact minimizer.

use thiserror::Error;

use crate::grid::EssUnit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("storage at bus {bus}: initial state of charge {soc} lies outside [{min}, {max}]")]
    InfeasibleSet {
        bus: usize,
        soc: f64,
        min: f64,
        max: f64,
    },
    #[error("storage at bus {bus}: {reason}")]
    BadUnit { bus: usize, reason: String },
}

const DYKSTRA_TOL: f64 = 1e-12;
const DYKSTRA_MAX_ITER: usize = 20_000;

pub fn project_pv(v: &[f64], cap: &[f64]) -> Vec<f64> {
    v.iter().zip(cap).map(|(x, c)| x.clamp(0.0, *c)).collect()
}

fn clamp_rates(v: &[f64], unit: &EssUnit) -> Vec<f64> {
    v.iter()
        .map(|x| x.clamp(-unit.discharge_cap, unit.charge_cap))
        .collect()
}

/// Bounds `l <= cumsum(p) <= u` equivalent to the SoC band.
fn band_bounds(unit: &EssUnit, t: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = (unit.soc_min - unit.soc_init) / unit.dt;
    let hi = (unit.soc_max - unit.soc_init) / unit.dt;
    (vec![lo; t], vec![hi; t])
}

fn in_band(p: &[f64], lo: &[f64], hi: &[f64], tol: f64) -> bool {
    let mut s = 0.0;
    for (k, x) in p.iter().enumerate() {
        s += x;
        if s < lo[k] - tol || s > hi[k] + tol {
            return false;
        }
    }
    true
}

/// Solves the tridiagonal system `a_k x_{k-1} + b_k x_k + c_k x_{k+1} = d_k`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for k in 1..n {
        let m = b[k] - a[k] * cp[k - 1];
        cp[k] = c[k] / m;
        dp[k] = (d[k] - a[k] * dp[k - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for k in (0..n - 1).rev() {
        x[k] = dp[k] - cp[k] * x[k + 1];
    }
    x
}

/// `argmin ||D s - x||^2` over `lo <= s <= hi`, returned as `p = D s`.
pub fn project_cumulative_band(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let t = x.len();
    if t == 0 {
        return Vec::new();
    }
    // linear term D^T x
    let g: Vec<f64> = (0..t)
        .map(|k| x[k] - x.get(k + 1).copied().unwrap_or(0.0))
        .collect();
    let hdiag = |k: usize| if k + 1 == t { 1.0 } else { 2.0 };
    let hmul = |s: &[f64]| -> Vec<f64> {
        (0..t)
            .map(|k| {
                let mut v = hdiag(k) * s[k];
                if k > 0 {
                    v -= s[k - 1];
                }
                if k + 1 < t {
                    v -= s[k + 1];
                }
                v
            })
            .collect()
    };

    // Primal active set: `fixed[k]` pins s_k at the bound it currently sits
    // on. Each pass solves the reduced system, then either walks to the first
    // blocking bound or releases the bound with the worst multiplier.
    let clamp = |k: usize, v: f64| v.clamp(lo[k], hi[k]);
    let mut s: Vec<f64> = x
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .enumerate()
        .map(|(k, v)| clamp(k, v))
        .collect();
    let mut fixed: Vec<bool> = (0..t).map(|k| s[k] <= lo[k] || s[k] >= hi[k]).collect();
    let (mut a, mut b, mut c, mut d) = (vec![0.0; t], vec![0.0; t], vec![0.0; t], vec![0.0; t]);
    for _ in 0..(20 * t + 100) {
        for k in 0..t {
            if fixed[k] {
                (a[k], b[k], c[k], d[k]) = (0.0, 1.0, 0.0, s[k]);
            } else {
                a[k] = if k > 0 { -1.0 } else { 0.0 };
                b[k] = hdiag(k);
                c[k] = if k + 1 < t { -1.0 } else { 0.0 };
                d[k] = g[k];
            }
        }
        let target = thomas(&a, &b, &c, &d);
        let mut step = 1.0;
        let mut blocking = None;
        for k in (0..t).filter(|&k| !fixed[k]) {
            let dk = target[k] - s[k];
            let (room, bound) = if dk < 0.0 {
                ((lo[k] - s[k]) / dk, lo[k])
            } else if dk > 0.0 {
                ((hi[k] - s[k]) / dk, hi[k])
            } else {
                continue;
            };
            if room < step {
                step = room.max(0.0);
                blocking = Some((k, bound));
            }
        }
        for k in (0..t).filter(|&k| !fixed[k]) {
            s[k] = clamp(k, s[k] + step * (target[k] - s[k]));
        }
        if let Some((k, bound)) = blocking {
            s[k] = bound;
            fixed[k] = true;
            continue;
        }
        // reduced minimizer reached; check the signs of the bound multipliers
        let hs = hmul(&s);
        let mut worst = (0.0, None);
        for k in (0..t).filter(|&k| fixed[k]) {
            let lambda = hs[k] - g[k];
            let wrong = if s[k] <= lo[k] { -lambda } else { lambda };
            if wrong > worst.0 {
                worst = (wrong, Some(k));
            }
        }
        match worst.1 {
            Some(k) if worst.0 > 1e-13 => fixed[k] = false,
            _ => break,
        }
    }
    (0..t)
        .map(|k| s[k] - if k > 0 { s[k - 1] } else { 0.0 })
        .collect()
}

/// Projection onto `{ -discharge <= p <= charge } ∩ { soc_min <= s0 + dt cumsum(p) <= soc_max }`.
pub fn project_ess(v: &[f64], unit: &EssUnit) -> Result<Vec<f64>, ProjectionError> {
    if !(unit.soc_min <= unit.soc_init && unit.soc_init <= unit.soc_max) {
        return Err(ProjectionError::InfeasibleSet {
            bus: unit.bus,
            soc: unit.soc_init,
            min: unit.soc_min,
            max: unit.soc_max,
        });
    }
    if !(unit.dt > 0.0 && unit.discharge_cap >= 0.0 && unit.charge_cap >= 0.0) {
        return Err(ProjectionError::BadUnit {
            bus: unit.bus,
            reason: "rates and slot length must be positive".into(),
        });
    }
    let t = v.len();
    let (lo, hi) = band_bounds(unit, t);
    let boxed = clamp_rates(v, unit);
    if in_band(&boxed, &lo, &hi, 0.0) {
        return Ok(boxed);
    }
    let banded = project_cumulative_band(v, &lo, &hi);
    if banded
        .iter()
        .all(|p| *p >= -unit.discharge_cap && *p <= unit.charge_cap)
    {
        return Ok(banded);
    }

    let mut x = v.to_vec();
    let mut p_inc = vec![0.0; t];
    let mut q_inc = vec![0.0; t];
    for _ in 0..DYKSTRA_MAX_ITER {
        let shifted: Vec<f64> = x.iter().zip(&p_inc).map(|(a, b)| a + b).collect();
        let y = clamp_rates(&shifted, unit);
        for k in 0..t {
            p_inc[k] = shifted[k] - y[k];
        }
        let shifted: Vec<f64> = y.iter().zip(&q_inc).map(|(a, b)| a + b).collect();
        let next = project_cumulative_band(&shifted, &lo, &hi);
        for k in 0..t {
            q_inc[k] = shifted[k] - next[k];
        }
        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let gap = next
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if change < DYKSTRA_TOL && gap < DYKSTRA_TOL * 100.0 {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(t_soc: (f64, f64, f64), rates: (f64, f64), dt: f64) -> EssUnit {
        EssUnit {
            bus: 1,
            discharge_cap: rates.0,
            charge_cap: rates.1,
            soc_min: t_soc.0,
            soc_init: t_soc.1,
            soc_max: t_soc.2,
            dt,
        }
    }

    fn bundled() -> EssUnit {
        unit((0.0, 4.0, 10.0), (3.0, 3.0), 0.25)
    }

    #[test]
    fn pv_examples() {
        let cap = [2.5, 2.5];
        assert_eq!(project_pv(&[1.0, 2.0], &cap), vec![1.0, 2.0]);
        assert_eq!(project_pv(&[-1.0, 3.0], &cap), vec![0.0, 2.5]);
        let once = project_pv(&[-0.5, 7.0], &cap);
        assert_eq!(project_pv(&once, &cap), once);
    }

    #[test]
    fn ess_examples() {
        let u = bundled();
        let inside = vec![1.0, -2.0, 0.5];
        assert_eq!(project_ess(&inside, &u).unwrap(), inside);
        assert_eq!(project_ess(&[5.0], &u).unwrap(), vec![3.0]);
        let bad = unit((0.0, 11.0, 10.0), (3.0, 3.0), 0.25);
        assert!(matches!(
            project_ess(&[0.0], &bad),
            Err(ProjectionError::InfeasibleSet { .. })
        ));
    }

    #[test]
    fn band_binds_over_long_horizon() {
        // charging at the full rate for 96 slots would overfill the battery
        let u = bundled();
        let p = project_ess(&vec![3.0; 96], &u).unwrap();
        let soc = crate::grid::ess_soc_trajectory(&u, &p);
        assert!(soc.iter().all(|s| *s <= 10.0 + 1e-9));
        assert!((soc[95] - 10.0).abs() < 1e-9);
        assert!(p.iter().all(|x| *x <= 3.0 + 1e-12 && *x >= -3.0 - 1e-12));
    }

    #[test]
    fn thomas_matches_dense_example() {
        // [2 -1 0; -1 2 -1; 0 -1 1] x = [1 0 1] has x = [2 3 4]
        let x = thomas(
            &[0.0, -1.0, -1.0],
            &[2.0, 2.0, 1.0],
            &[-1.0, -1.0, 0.0],
            &[1.0, 0.0, 1.0],
        );
        for (a, b) in x.iter().zip([2.0, 3.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn arb_unit() -> impl Strategy<Value = EssUnit> {
        (
            0.5f64..4.0,
            0.5f64..4.0,
            0.0f64..1.0,
            0.5f64..3.0,
            0.1f64..1.0,
        )
            .prop_map(|(dis, ch, frac, cap, dt)| unit((0.0, frac * cap, cap), (dis, ch), dt))
    }

    /// Largest KKT violation of `p` for `min ||D s - x||^2, lo <= s <= hi`.
    fn band_kkt_violation(x: &[f64], lo: f64, hi: f64, p: &[f64]) -> f64 {
        let t = x.len();
        let s: Vec<f64> = p
            .iter()
            .scan(0.0, |a, v| {
                *a += v;
                Some(*a)
            })
            .collect();
        // gradient in s is D^T (p - x)
        let r: Vec<f64> = p.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut worst = 0.0f64;
        for k in 0..t {
            let g = r[k] - r.get(k + 1).copied().unwrap_or(0.0);
            let stationarity = if s[k] <= lo + 1e-9 {
                (-g).max(0.0)
            } else if s[k] >= hi - 1e-9 {
                g.max(0.0)
            } else {
                g.abs()
            };
            worst = worst.max(stationarity).max(lo - s[k]).max(s[k] - hi);
        }
        worst
    }

    proptest! {
        #[test]
        fn band_step_satisfies_kkt(
            x in prop::collection::vec(-6.0f64..6.0, 1..40),
            lo in -3.0f64..0.0,
            hi in 0.0f64..3.0,
        ) {
            let t = x.len();
            let p = project_cumulative_band(&x, &vec![lo; t], &vec![hi; t]);
            prop_assert!(band_kkt_violation(&x, lo, hi, &p) < 1e-9);
        }

        #[test]
        fn ess_projection_is_feasible_and_idempotent(
            u in arb_unit(),
            v in prop::collection::vec(-8.0f64..8.0, 1..24),
        ) {
            let p = project_ess(&v, &u).unwrap();
            let soc = crate::grid::ess_soc_trajectory(&u, &p);
            for (x, s) in p.iter().zip(&soc) {
                prop_assert!(*x >= -u.discharge_cap - 1e-9 && *x <= u.charge_cap + 1e-9);
                prop_assert!(*s >= u.soc_min - 1e-9 && *s <= u.soc_max + 1e-9);
            }
            let again = project_ess(&p, &u).unwrap();
            for (a, b) in again.iter().zip(&p) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn ess_projection_is_nonexpansive(
            u in arb_unit(),
            pair in (1usize..16).prop_flat_map(|t| (
                prop::collection::vec(-8.0f64..8.0, t),
                prop::collection::vec(-8.0f64..8.0, t),
            )),
        ) {
            let (a, b) = pair;
            let pa = project_ess(&a, &u).unwrap();
            let pb = project_ess(&b, &u).unwrap();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in + 1e-7);
        }

        #[test]
        fn pv_projection_is_nonexpansive(
            a in prop::collection::vec(-5.0f64..5.0, 8),
            b in prop::collection::vec(-5.0f64..5.0, 8),
        ) {
            let cap = [2.5; 8];
            let (pa, pb) = (project_pv(&a, &cap), project_pv(&b, &cap));
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }
    }
}
