//! Party identifiers and the NDJSON message format.
//!
//! Every message is one JSON object per line:
//!
//! ```text
//! {"type":"share","iter":3,"from":"bus:4","to":"cloud:2","values":[...]}
//! ```
//!
//! `alpha` appears only on challenges and aggregates, `line` only on the two
//! dual message types. A challenge is broadcast to every bus and is written
//! once, addressed to `bus:*`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::field::FieldElement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartyId {
    Bus(usize),
    /// Broadcast address for challenges.
    AllBuses,
    Cloud(usize),
    Line(usize),
}

impl PartyId {
    pub fn bus_index(&self) -> Option<usize> {
        match self {
            PartyId::Bus(k) => Some(*k),
            _ => None,
        }
    }
    pub fn cloud_index(&self) -> Option<usize> {
        match self {
            PartyId::Cloud(u) => Some(*u),
            _ => None,
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Bus(k) => write!(f, "bus:{k}"),
            PartyId::AllBuses => f.write_str("bus:*"),
            PartyId::Cloud(u) => write!(f, "cloud:{u}"),
            PartyId::Line(l) => write!(f, "line:{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad party id `{0}`")]
pub struct BadPartyId(pub String);

impl FromStr for PartyId {
    type Err = BadPartyId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadPartyId(s.to_string());
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        if kind == "bus" && idx == "*" {
            return Ok(PartyId::AllBuses);
        }
        let k: usize = idx.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "bus" => Ok(PartyId::Bus(k)),
            "cloud" => Ok(PartyId::Cloud(k)),
            "line" => Ok(PartyId::Line(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for PartyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Challenge,
    Share,
    Aggregate,
    DualReport,
    DualCombination,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Challenge,
        MessageKind::Share,
        MessageKind::Aggregate,
        MessageKind::DualReport,
        MessageKind::DualCombination,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    #[serde(rename = "type")]
    pub kind: MessageKind,
    pub iter: usize,
    pub from: PartyId,
    pub to: PartyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<FieldElement>,
    pub values: Vec<FieldElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Message {
    pub fn challenge(iter: usize, cloud: usize, alpha: FieldElement) -> Self {
        Message {
            kind: MessageKind::Challenge,
            iter,
            from: PartyId::Cloud(cloud),
            to: PartyId::AllBuses,
            alpha: Some(alpha),
            values: Vec::new(),
            line: None,
        }
    }

    pub fn share(iter: usize, bus: usize, cloud: usize, values: Vec<FieldElement>) -> Self {
        Message {
            kind: MessageKind::Share,
            iter,
            from: PartyId::Bus(bus),
            to: PartyId::Cloud(cloud),
            alpha: None,
            values,
            line: None,
        }
    }

    /// `to` is a bus (for `C_p`) or a line owner (for the flow).
    pub fn aggregate(
        iter: usize,
        cloud: usize,
        to: PartyId,
        alpha: FieldElement,
        values: Vec<FieldElement>,
    ) -> Self {
        Message {
            kind: MessageKind::Aggregate,
            iter,
            from: PartyId::Cloud(cloud),
            to,
            alpha: Some(alpha),
            values,
            line: None,
        }
    }

    /// Lower multipliers followed by upper multipliers of `line`.
    pub fn dual_report(iter: usize, line: usize, cloud: usize, values: Vec<FieldElement>) -> Self {
        Message {
            kind: MessageKind::DualReport,
            iter,
            from: PartyId::Line(line),
            to: PartyId::Cloud(cloud),
            alpha: None,
            values,
            line: Some(line),
        }
    }

    /// `line` is the line feeding `bus`, the last edge of the path the
    /// combination sums over.
    pub fn dual_combination(
        iter: usize,
        cloud: usize,
        bus: usize,
        values: Vec<FieldElement>,
    ) -> Self {
        Message {
            kind: MessageKind::DualCombination,
            iter,
            from: PartyId::Cloud(cloud),
            to: PartyId::Bus(bus),
            alpha: None,
            values,
            line: Some(bus),
        }
    }

    /// Structural checks beyond what serde enforces.
    pub fn validate(&self, modulus: FieldElement) -> Result<(), String> {
        use MessageKind::*;
        let has_alpha = matches!(self.kind, Challenge | Aggregate);
        if self.alpha.is_some() != has_alpha {
            return Err(format!(
                "{:?} must {}carry alpha",
                self.kind,
                if has_alpha { "" } else { "not " }
            ));
        }
        let has_line = matches!(self.kind, DualReport | DualCombination);
        if self.line.is_some() != has_line {
            return Err(format!(
                "{:?} must {}carry line",
                self.kind,
                if has_line { "" } else { "not " }
            ));
        }
        if let Some(a) = self.alpha {
            if a == 0 || a >= modulus {
                return Err(format!("alpha {a} outside [1, {modulus})"));
            }
        }
        if let Some(v) = self.values.iter().find(|&&v| v >= modulus) {
            return Err(format!("value {v} is not reduced mod {modulus}"));
        }
        let ok = match self.kind {
            Challenge => matches!((self.from, self.to), (PartyId::Cloud(_), PartyId::AllBuses)),
            Share => matches!((self.from, self.to), (PartyId::Bus(_), PartyId::Cloud(_))),
            Aggregate => matches!(
                (self.from, self.to),
                (PartyId::Cloud(_), PartyId::Bus(_) | PartyId::Line(_))
            ),
            DualReport => matches!((self.from, self.to), (PartyId::Line(_), PartyId::Cloud(_))),
            DualCombination => matches!((self.from, self.to), (PartyId::Cloud(_), PartyId::Bus(_))),
        };
        if !ok {
            return Err(format!(
                "{:?} cannot go from {} to {}",
                self.kind, self.from, self.to
            ));
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("message serialization is infallible")
    }
}

pub fn write_ndjson<W: Write>(mut w: W, messages: &[Message]) -> std::io::Result<()> {
    for m in messages {
        writeln!(w, "{}", m.to_ndjson())?;
    }
    w.flush()
}

/// Reads and validates a transcript. Blank lines are skipped.
pub fn read_ndjson<R: BufRead>(r: R, modulus: FieldElement) -> Result<Vec<Message>, CodecError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: Message = serde_json::from_str(&line).map_err(|source| CodecError::Json {
            line: k + 1,
            source,
        })?;
        m.validate(modulus).map_err(|reason| CodecError::Invalid {
            line: k + 1,
            reason,
        })?;
        out.push(m);
    }
    Ok(out)
}
