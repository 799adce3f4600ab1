//! Arithmetic in a prime field `GF(e)` with residues stored as `u64`.
//!
//! Every product is widened to `u128` and reduced immediately, so moduli up to
//! `2^63` are safe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A residue in `[0, e)`.
pub type FieldElement = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} exceeds 2^63")]
    TooLarge(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("linear system is singular modulo {0}")]
    Singular(u64),
    #[error("value {value} is not a residue modulo {modulus}")]
    NotReduced { value: u64, modulus: u64 },
}

/// The default field size, the Mersenne prime `2^31 - 1`.
pub const MERSENNE_31: u64 = 2_147_483_647;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PrimeField {
    modulus: u64,
}

impl TryFrom<u64> for PrimeField {
    type Error = FieldError;
    fn try_from(modulus: u64) -> Result<Self, Self::Error> {
        PrimeField::new(modulus)
    }
}

impl From<PrimeField> for u64 {
    fn from(f: PrimeField) -> u64 {
        f.modulus
    }
}

impl Default for PrimeField {
    fn default() -> Self {
        PrimeField {
            modulus: MERSENNE_31,
        }
    }
}

impl PrimeField {
    pub fn new(modulus: u64) -> Result<Self, FieldError> {
        if modulus > 1 << 63 {
            return Err(FieldError::TooLarge(modulus));
        }
        if !is_prime(modulus) {
            return Err(FieldError::NotPrime(modulus));
        }
        Ok(PrimeField { modulus })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// `floor(e / 2)`, the largest magnitude a signed value may take and
    /// still be recovered from its residue.
    #[inline]
    pub fn half(&self) -> u64 {
        self.modulus / 2
    }

    #[inline]
    pub fn contains(&self, v: u64) -> bool {
        v < self.modulus
    }

    pub fn check(&self, v: u64) -> Result<FieldElement, FieldError> {
        if self.contains(v) {
            Ok(v)
        } else {
            Err(FieldError::NotReduced {
                value: v,
                modulus: self.modulus,
            })
        }
    }

    #[inline]
    pub fn reduce(&self, v: u64) -> FieldElement {
        v % self.modulus
    }

    #[inline]
    pub fn reduce_i128(&self, v: i128) -> FieldElement {
        v.rem_euclid(self.modulus as i128) as u64
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        ((a as u128 + b as u128) % self.modulus as u128) as u64
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        let a = a % self.modulus;
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        ((a as u128 * b as u128) % self.modulus as u128) as u64
    }

    pub fn pow(&self, base: FieldElement, mut exp: u64) -> FieldElement {
        let mut base = base % self.modulus;
        let mut acc = 1 % self.modulus;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        let a = a % self.modulus;
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.modulus - 2))
    }

    /// Solves the square system `m * x = rhs` by Gauss-Jordan elimination.
    pub fn solve(
        &self,
        mut m: Vec<Vec<FieldElement>>,
        mut rhs: Vec<FieldElement>,
    ) -> Result<Vec<FieldElement>, FieldError> {
        let k = rhs.len();
        debug_assert!(m.len() == k && m.iter().all(|r| r.len() == k));
        for col in 0..k {
            let pivot = (col..k)
                .find(|&r| m[r][col] % self.modulus != 0)
                .ok_or(FieldError::Singular(self.modulus))?;
            m.swap(col, pivot);
            rhs.swap(col, pivot);
            let inv = self.inv(m[col][col])?;
            for c in col..k {
                m[col][c] = self.mul(m[col][c], inv);
            }
            rhs[col] = self.mul(rhs[col], inv);
            for r in 0..k {
                if r == col {
                    continue;
                }
                let factor = m[r][col];
                if factor == 0 {
                    continue;
                }
                for c in col..k {
                    let t = self.mul(factor, m[col][c]);
                    m[r][c] = self.sub(m[r][c], t);
                }
                let t = self.mul(factor, rhs[col]);
                rhs[r] = self.sub(rhs[r], t);
            }
        }
        Ok(rhs)
    }

    /// Rank of a rectangular matrix over the field.
    pub fn rank(&self, mut m: Vec<Vec<FieldElement>>) -> usize {
        let cols = m.first().map_or(0, Vec::len);
        let mut rank = 0;
        for col in 0..cols {
            let Some(pivot) = (rank..m.len()).find(|&r| m[r][col] % self.modulus != 0) else {
                continue;
            };
            m.swap(rank, pivot);
            let inv = self.inv(m[rank][col]).expect("pivot is nonzero");
            for r in rank + 1..m.len() {
                let factor = self.mul(m[r][col], inv);
                for c in col..cols {
                    let t = self.mul(factor, m[rank][c]);
                    m[r][c] = self.sub(m[r][c], t);
                }
            }
            rank += 1;
        }
        rank
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in SMALL {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
