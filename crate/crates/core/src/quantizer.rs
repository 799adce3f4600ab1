//! Fixed-point codec between reals and prime-field residues.
//!
//! A real `x` with `|x| <= theta^gamma` is scaled by `theta^zeta` and rounded
//! to the nearest integer (ties toward `+inf`), giving a signed integer in
//! `[-theta^(gamma+zeta), theta^(gamma+zeta) - 1]`. Signed integers are then
//! embedded into `GF(e)` by `z mod e` and recovered by mapping residues at or
//! above `e/2` back to negatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, PrimeField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("quantizer basis must exceed 1 (got {0})")]
    BadBasis(u64),
    #[error("theta^(gamma+zeta) does not fit in 62 bits")]
    RangeTooWide,
    #[error("{value} lies outside the representable range +/-{bound}")]
    OutOfRange { value: f64, bound: f64 },
    #[error("signed value {value} exceeds the field headroom {half}")]
    Overflow { value: i128, half: u64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Parameters of the fixed-point set: basis `theta`, magnitude `gamma`,
/// resolution `zeta`, and the prime field the integers are embedded in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantParams", into = "RawQuantParams")]
pub struct QuantParams {
    theta: u64,
    gamma: u32,
    zeta: u32,
    field: PrimeField,
    scale: f64,
    bound: f64,
    int_bound: i64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawQuantParams {
    theta: u64,
    gamma: u32,
    zeta: u32,
    modulus: u64,
}

impl TryFrom<RawQuantParams> for QuantParams {
    type Error = QuantError;
    fn try_from(r: RawQuantParams) -> Result<Self, Self::Error> {
        QuantParams::new(r.theta, r.gamma, r.zeta, r.modulus)
    }
}

impl From<QuantParams> for RawQuantParams {
    fn from(q: QuantParams) -> Self {
        RawQuantParams {
            theta: q.theta,
            gamma: q.gamma,
            zeta: q.zeta,
            modulus: q.field.modulus(),
        }
    }
}

fn checked_pow(base: u64, exp: u32) -> Option<u64> {
    let v = base.checked_pow(exp)?;
    (v < 1 << 62).then_some(v)
}

impl QuantParams {
    /// Builds a codec. Parameter sets without sign-recovery headroom
    /// (`theta^(gamma+zeta) > floor(e/2)`) are accepted with a warning; the
    /// values that actually reach the field are checked at `to_field` time.
    pub fn new(theta: u64, gamma: u32, zeta: u32, modulus: u64) -> Result<Self, QuantError> {
        if theta < 2 {
            return Err(QuantError::BadBasis(theta));
        }
        let field = PrimeField::new(modulus)?;
        let int_bound = checked_pow(theta, gamma + zeta).ok_or(QuantError::RangeTooWide)?;
        let scale = checked_pow(theta, zeta).ok_or(QuantError::RangeTooWide)? as f64;
        let bound = checked_pow(theta, gamma).ok_or(QuantError::RangeTooWide)? as f64;
        let q = QuantParams {
            theta,
            gamma,
            zeta,
            field,
            scale,
            bound,
            int_bound: int_bound as i64,
        };
        if !q.has_headroom() {
            log::warn!(
                "theta^(gamma+zeta) = {} exceeds floor(e/2) = {}; extreme values will not survive sign recovery",
                int_bound,
                field.half()
            );
        }
        Ok(q)
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }
    pub fn gamma(&self) -> u32 {
        self.gamma
    }
    pub fn zeta(&self) -> u32 {
        self.zeta
    }
    pub fn field(&self) -> PrimeField {
        self.field
    }
    pub fn modulus(&self) -> u64 {
        self.field.modulus()
    }

    /// `theta^(-zeta)`, the grid spacing and the worst-case rounding error.
    pub fn resolution(&self) -> f64 {
        1.0 / self.scale
    }

    /// `theta^gamma`, the largest accepted magnitude.
    pub fn magnitude_bound(&self) -> f64 {
        self.bound
    }

    /// `theta^(gamma+zeta) <= floor(e/2)`.
    pub fn has_headroom(&self) -> bool {
        self.int_bound as u64 <= self.field.half()
    }

    /// Same basis and field with a different resolution; `gamma` is reduced
    /// if needed so that the headroom invariant keeps holding.
    pub fn with_zeta(&self, zeta: u32) -> Result<Self, QuantError> {
        let mut gamma = self.gamma;
        let keep_headroom = self.has_headroom();
        loop {
            let q = QuantParams::new(self.theta, gamma, zeta, self.field.modulus())?;
            if !keep_headroom || q.has_headroom() || gamma == 0 {
                return Ok(q);
            }
            gamma -= 1;
        }
    }

    pub fn quantize(&self, x: f64) -> Result<i64, QuantError> {
        if !x.is_finite() || x.abs() > self.bound {
            return Err(QuantError::OutOfRange {
                value: x,
                bound: self.bound,
            });
        }
        let z = (x * self.scale + 0.5).floor() as i64;
        Ok(z.clamp(-self.int_bound, self.int_bound - 1))
    }

    pub fn dequantize(&self, z: i64) -> f64 {
        z as f64 / self.scale
    }

    pub fn to_field(&self, z: i64) -> Result<FieldElement, QuantError> {
        if z.unsigned_abs() > self.field.half() {
            return Err(QuantError::Overflow {
                value: z as i128,
                half: self.field.half(),
            });
        }
        Ok(self.field.reduce_i128(z as i128))
    }

    pub fn from_field(&self, y: FieldElement) -> Result<i64, QuantError> {
        let y = self.field.check(y)?;
        let e = self.field.modulus();
        // y >= e/2  <=>  2y >= e
        if (y as u128) * 2 >= e as u128 {
            Ok(y as i64 - e as i64)
        } else {
            Ok(y as i64)
        }
    }

    /// `quantize` followed by `to_field`.
    pub fn encode(&self, x: f64) -> Result<FieldElement, QuantError> {
        self.to_field(self.quantize(x)?)
    }

    /// `from_field` followed by `dequantize`.
    pub fn decode(&self, y: FieldElement) -> Result<f64, QuantError> {
        Ok(self.dequantize(self.from_field(y)?))
    }

    /// Guards a weighted integer sum before it is computed inside the field:
    /// `sum |w_j z_j|` must stay within `floor(e/2)` for sign recovery.
    pub fn check_weighted_headroom(
        &self,
        weights: &[u64],
        values: &[i64],
    ) -> Result<(), QuantError> {
        let total: i128 = weights
            .iter()
            .zip(values)
            .map(|(&w, &z)| w as i128 * (z as i128).abs())
            .sum();
        if total > self.field.half() as i128 {
            return Err(QuantError::Overflow {
                value: total,
                half: self.field.half(),
            });
        }
        Ok(())
    }
}
