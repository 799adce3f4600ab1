//! Shamir secret sharing over `GF(e)`.
//!
//! A secret is the constant term of a random polynomial with `d`
//! coefficients (degree `d - 1`). Any `d` evaluations at distinct nonzero
//! points recover it by Lagrange interpolation at zero; fewer than `d` leave
//! every candidate secret equally consistent.
//!
//! Shares of different polynomials taken at the same challenge point can be
//! combined linearly: `sum_j w_j * y_j(x)` is a share of the polynomial whose
//! constant term is `sum_j w_j * secret_j`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShareError {
    #[error("threshold {threshold} must satisfy 2 <= d <= c = {clouds}")]
    BadPolicy { clouds: usize, threshold: usize },
    #[error("challenge point must be nonzero")]
    ZeroChallenge,
    #[error("challenge point {0} appears more than once")]
    DuplicateChallenge(FieldElement),
    #[error("need {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("{shares} shares but {weights} weights")]
    LengthMismatch { shares: usize, weights: usize },
    #[error("shares are not consistent with a single polynomial of degree {degree}")]
    Inconsistent { degree: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Number of clouds `c`, reconstruction threshold `d`, and the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPolicy {
    clouds: usize,
    threshold: usize,
    field: PrimeField,
}

impl SharingPolicy {
    pub fn new(clouds: usize, threshold: usize, modulus: u64) -> Result<Self, ShareError> {
        if threshold < 2 || threshold > clouds {
            return Err(ShareError::BadPolicy { clouds, threshold });
        }
        Ok(SharingPolicy {
            clouds,
            threshold,
            field: PrimeField::new(modulus)?,
        })
    }

    pub fn clouds(&self) -> usize {
        self.clouds
    }
    pub fn threshold(&self) -> usize {
        self.threshold
    }
    pub fn field(&self) -> PrimeField {
        self.field
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretPolynomial {
    coefficients: Vec<FieldElement>,
}

impl SecretPolynomial {
    /// Polynomial with `secret` as constant term and `threshold - 1` uniform
    /// random coefficients. `threshold = 1` yields the constant polynomial.
    pub fn random<R: Rng + ?Sized>(
        secret: FieldElement,
        threshold: usize,
        field: PrimeField,
        rng: &mut R,
    ) -> Result<Self, ShareError> {
        let secret = field.check(secret)?;
        let mut coefficients = Vec::with_capacity(threshold.max(1));
        coefficients.push(secret);
        for _ in 1..threshold {
            coefficients.push(rng.random_range(0..field.modulus()));
        }
        Ok(SecretPolynomial { coefficients })
    }

    pub fn from_coefficients(
        coefficients: Vec<FieldElement>,
        field: PrimeField,
    ) -> Result<Self, ShareError> {
        for &c in &coefficients {
            field.check(c)?;
        }
        assert!(!coefficients.is_empty(), "polynomial needs a constant term");
        Ok(SecretPolynomial { coefficients })
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    pub fn secret(&self) -> FieldElement {
        self.coefficients[0]
    }

    /// Number of coefficients, i.e. the reconstruction threshold.
    pub fn threshold(&self) -> usize {
        self.coefficients.len()
    }

    /// Horner evaluation without the zero-point guard; used for plotting and
    /// by the adversary tooling.
    pub fn eval_unchecked(&self, x: FieldElement, field: PrimeField) -> FieldElement {
        self.coefficients
            .iter()
            .rev()
            .fold(0, |acc, &c| field.add(field.mul(acc, x), c))
    }
}

/// `poly` with fresh random coefficients for `secret` under `policy`.
pub fn gen_polynomial<R: Rng + ?Sized>(
    secret: FieldElement,
    policy: &SharingPolicy,
    rng: &mut R,
) -> Result<SecretPolynomial, ShareError> {
    SecretPolynomial::random(secret, policy.threshold, policy.field, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharePoint {
    pub x: FieldElement,
    pub y: FieldElement,
}

pub fn evaluate(
    poly: &SecretPolynomial,
    x: FieldElement,
    field: PrimeField,
) -> Result<FieldElement, ShareError> {
    let x = field.check(x)?;
    if x == 0 {
        return Err(ShareError::ZeroChallenge);
    }
    Ok(poly.eval_unchecked(x, field))
}

fn check_points(points: &[SharePoint], field: PrimeField) -> Result<(), ShareError> {
    let mut xs: Vec<FieldElement> = Vec::with_capacity(points.len());
    for p in points {
        field.check(p.x)?;
        field.check(p.y)?;
        if p.x == 0 {
            return Err(ShareError::ZeroChallenge);
        }
        xs.push(p.x);
    }
    xs.sort_unstable();
    if let Some(w) = xs.windows(2).find(|w| w[0] == w[1]) {
        return Err(ShareError::DuplicateChallenge(w[0]));
    }
    Ok(())
}

/// Value at `at` of the unique polynomial through `points`
/// (degree `points.len() - 1`). Points must have distinct x.
pub fn interpolate_at(
    points: &[SharePoint],
    at: FieldElement,
    field: PrimeField,
) -> Result<FieldElement, ShareError> {
    let mut acc = 0;
    for (t, pt) in points.iter().enumerate() {
        let mut num = 1;
        let mut den = 1;
        for (u, pu) in points.iter().enumerate() {
            if u == t {
                continue;
            }
            num = field.mul(num, field.sub(at, pu.x));
            den = field.mul(den, field.sub(pt.x, pu.x));
        }
        let basis = field.mul(num, field.inv(den)?);
        acc = field.add(acc, field.mul(pt.y, basis));
    }
    Ok(acc)
}

/// Lagrange reconstruction of the constant term from `threshold` points.
///
/// Points are sorted by challenge and the first `threshold` are used, so the
/// result does not depend on arrival order.
pub fn reconstruct_with_threshold(
    points: &[SharePoint],
    threshold: usize,
    field: PrimeField,
) -> Result<FieldElement, ShareError> {
    if points.len() < threshold.max(1) {
        return Err(ShareError::InsufficientShares {
            needed: threshold.max(1),
            got: points.len(),
        });
    }
    check_points(points, field)?;
    let mut sorted = points.to_vec();
    sorted.sort_unstable_by_key(|p| p.x);
    sorted.truncate(threshold.max(1));
    // basis at zero: prod_{u != t} x_u / (x_u - x_t)
    let mut acc = 0;
    for (t, pt) in sorted.iter().enumerate() {
        let mut num = 1;
        let mut den = 1;
        for (u, pu) in sorted.iter().enumerate() {
            if u == t {
                continue;
            }
            num = field.mul(num, pu.x);
            den = field.mul(den, field.sub(pu.x, pt.x));
        }
        let basis = field.mul(num, field.inv(den)?);
        acc = field.add(acc, field.mul(pt.y, basis));
    }
    Ok(acc)
}

pub fn reconstruct(
    points: &[SharePoint],
    policy: &SharingPolicy,
) -> Result<FieldElement, ShareError> {
    reconstruct_with_threshold(points, policy.threshold, policy.field)
}

/// Lagrange weights `l_t(0)` for the given challenge points, so that the
/// constant term of any polynomial through `(x_t, y_t)` is `sum_t l_t(0) y_t`.
/// Vector secrets reuse one set of challenges, so the weights are computed
/// once per round.
pub fn lagrange_at_zero(
    xs: &[FieldElement],
    field: PrimeField,
) -> Result<Vec<FieldElement>, ShareError> {
    let points: Vec<SharePoint> = xs.iter().map(|&x| SharePoint { x, y: 0 }).collect();
    check_points(&points, field)?;
    xs.iter()
        .enumerate()
        .map(|(t, &xt)| {
            let (num, den) = xs
                .iter()
                .enumerate()
                .filter(|(u, _)| *u != t)
                .fold((1, 1), |(n, d), (_, &xu)| {
                    (field.mul(n, xu), field.mul(d, field.sub(xu, xt)))
                });
            Ok(field.mul(num, field.inv(den)?))
        })
        .collect()
}

/// `sum_t weights_t * ys_t mod e`.
pub fn combine(weights: &[FieldElement], ys: &[FieldElement], field: PrimeField) -> FieldElement {
    weights
        .iter()
        .zip(ys)
        .fold(0, |acc, (&w, &y)| field.add(acc, field.mul(w, y)))
}

/// Every coefficient of the polynomial of degree `points.len() - 1` through
/// `points`, by solving the Vandermonde system.
pub fn interpolate_coefficients(
    points: &[SharePoint],
    field: PrimeField,
) -> Result<SecretPolynomial, ShareError> {
    check_points(points, field)?;
    let k = points.len() as u64;
    let matrix = points
        .iter()
        .map(|p| (0..k).map(|m| field.pow(p.x, m)).collect())
        .collect();
    let rhs = points.iter().map(|p| p.y).collect();
    SecretPolynomial::from_coefficients(field.solve(matrix, rhs)?, field)
}

/// Like [`reconstruct`], but every point beyond the first `d` must lie on the
/// interpolated polynomial; a corrupted share is reported instead of silently
/// shifting the secret.
pub fn reconstruct_strict(
    points: &[SharePoint],
    policy: &SharingPolicy,
) -> Result<FieldElement, ShareError> {
    let secret = reconstruct(points, policy)?;
    let mut sorted = points.to_vec();
    sorted.sort_unstable_by_key(|p| p.x);
    let (base, extra) = sorted.split_at(policy.threshold);
    for p in extra {
        if interpolate_at(base, p.x, policy.field)? != p.y {
            return Err(ShareError::Inconsistent {
                degree: policy.threshold - 1,
            });
        }
    }
    Ok(secret)
}

/// `sum_j w_j * share_j mod e`, a share of the weighted sum of secrets at the
/// common challenge point.
pub fn weighted_aggregate(
    shares: &[FieldElement],
    weights: &[u64],
    field: PrimeField,
) -> Result<FieldElement, ShareError> {
    if shares.len() != weights.len() {
        return Err(ShareError::LengthMismatch {
            shares: shares.len(),
            weights: weights.len(),
        });
    }
    Ok(shares.iter().zip(weights).fold(0, |acc, (&s, &w)| {
        if w == 0 {
            acc
        } else {
            field.add(acc, field.mul(field.reduce(w), s))
        }
    }))
}

/// Given fewer than `threshold` shares, constructs a polynomial with
/// constant term `candidate` that passes through all of them.
///
/// The unknown coefficients `a_1..a_{k}` (k = number of shares) solve the
/// system `sum_m a_m x_j^m = y_j - candidate`; the coefficient matrix is a
/// scaled Vandermonde matrix and is invertible for distinct nonzero `x_j`.
/// Remaining coefficients up to degree `threshold - 1` are zero.
pub fn consistent_polynomial(
    shares: &[SharePoint],
    candidate: FieldElement,
    threshold: usize,
    field: PrimeField,
) -> Result<SecretPolynomial, ShareError> {
    let k = shares.len();
    if k >= threshold {
        return Err(ShareError::InsufficientShares {
            needed: threshold - 1,
            got: k,
        });
    }
    check_points(shares, field)?;
    let candidate = field.check(candidate)?;
    let matrix: Vec<Vec<FieldElement>> = shares
        .iter()
        .map(|p| (1..=k as u64).map(|m| field.pow(p.x, m)).collect())
        .collect();
    let rhs: Vec<FieldElement> = shares.iter().map(|p| field.sub(p.y, candidate)).collect();
    let solution = if k == 0 {
        Vec::new()
    } else {
        field.solve(matrix, rhs)?
    };
    let mut coefficients = vec![0; threshold];
    coefficients[0] = candidate;
    coefficients[1..=k].copy_from_slice(&solution);
    SecretPolynomial::from_coefficients(coefficients, field)
}
