//! Private evaluation of the coupling terms.
//!
//! Each iteration runs five message phases over a [`Transport`]:
//!
//! 1. every cloud broadcasts a challenge `alpha_u`;
//! 2. every bus shares its fixed-point injection vector, one polynomial per
//!    slot, evaluated at every challenge;
//! 3. every cloud forms `pi_i`-weighted aggregates for each bus and
//!    `Z_l`-weighted aggregates for each line owner;
//! 4. buses open `C_p / delta1_bar`, line owners open their flow;
//! 5. line owners report their multipliers, clouds combine them along each
//!    bus's path to the root, and buses check the clouds agree.
//!
//! Line owners are a separate role from buses and clouds: they learn one
//! flow each and publish their multipliers. Multipliers travel as field
//! encoded fixed-point numbers, not as shares.

pub mod adversary;
pub mod message;
pub mod party;
pub mod session;
pub mod transcript;
pub mod transport;

use std::time::Duration;

use thiserror::Error;

pub use message::{Message, MessageKind, PartyId};
pub use session::{parties, run_algorithm1, AuditRecord, PrivateOutcome};
pub use transcript::Transcript;
pub use transport::{InProcTransport, TcpTransport, Transport, TransportError};

use crate::quantizer::{QuantError, QuantParams};
use crate::shamir::{ShareError, SharingPolicy};
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Share(#[from] ShareError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("iteration {iter}: two clouds sent challenge {alpha}")]
    DuplicateChallenge { iter: usize, alpha: u64 },
    #[error("{party}: {reason}")]
    Unexpected { party: PartyId, reason: String },
    #[error("bus:{bus}: clouds disagree on the dual combination in iteration {iter}")]
    DualMismatch { bus: usize, iter: usize },
    #[error("iteration {iter}: gave up after {attempts} failed rounds, last: {last}")]
    RetryBudgetExhausted {
        iter: usize,
        attempts: usize,
        last: Box<ProtocolError>,
    },
    #[error("{colluders} colluding clouds reach the threshold {threshold}")]
    ThresholdReached { colluders: usize, threshold: usize },
    #[error("{0}")]
    Config(String),
}

impl ProtocolError {
    /// Faults that abort the current round but not the run.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProtocolError::Transport(_) | ProtocolError::DuplicateChallenge { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub sharing: SharingPolicy,
    pub quant: QuantParams,
    /// Codec for the multipliers.
    pub dual_quant: QuantParams,
    pub seed: u64,
    pub round_timeout: Duration,
    pub retry_budget: usize,
    /// Iterations whose messages the transcript retains.
    pub keep_transcript: usize,
    pub audit: bool,
    /// Fault injection: the first this-many challenge rounds reuse one
    /// challenge for every cloud.
    pub forced_duplicate_rounds: usize,
}

impl ProtocolConfig {
    pub fn new(
        sharing: SharingPolicy,
        quant: QuantParams,
        dual_quant: QuantParams,
        seed: u64,
    ) -> Self {
        ProtocolConfig {
            sharing,
            quant,
            dual_quant,
            seed,
            round_timeout: Duration::from_secs(10),
            retry_budget: 3,
            keep_transcript: 0,
            audit: false,
            forced_duplicate_rounds: 0,
        }
    }

    pub fn check(&self) -> Result<(), ProtocolError> {
        let m = self.sharing.field().modulus();
        if self.quant.modulus() != m || self.dual_quant.modulus() != m {
            return Err(ProtocolError::Config(format!(
                "codecs use moduli {} and {}, sharing uses {m}",
                self.quant.modulus(),
                self.dual_quant.modulus()
            )));
        }
        Ok(())
    }
}
