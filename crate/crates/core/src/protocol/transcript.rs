//! Ordered log of every message a session sends.

use std::collections::BTreeMap;
use std::io::Write;

use sha2::{Digest, Sha256};

use super::message::{Message, MessageKind};

/// Always keeps a SHA-256 digest of the NDJSON lines and per-type counts.
/// Messages themselves are retained only for iterations below
/// `keep_iterations`, since a long run produces millions of values.
pub struct Transcript {
    hasher: Sha256,
    counts: BTreeMap<MessageKind, usize>,
    messages: Vec<Message>,
    keep_iterations: usize,
    sink: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transcript")
            .field("digest", &self.digest_hex())
            .field("counts", &self.counts)
            .field("kept", &self.messages.len())
            .finish()
    }
}

impl Transcript {
    pub fn new(keep_iterations: usize) -> Self {
        Transcript {
            hasher: Sha256::new(),
            counts: BTreeMap::new(),
            messages: Vec::new(),
            keep_iterations,
            sink: None,
        }
    }

    /// Every recorded line is also written to `sink`.
    pub fn with_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn record(&mut self, msg: &Message) -> std::io::Result<()> {
        let line = msg.to_ndjson();
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        *self.counts.entry(msg.kind).or_default() += 1;
        if msg.iter < self.keep_iterations {
            self.messages.push(msg.clone());
        }
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{line}")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        match self.sink.as_mut() {
            Some(s) => s.flush(),
            None => Ok(()),
        }
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<MessageKind, usize> {
        &self.counts
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn iteration(&self, iter: usize) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.iter == iter)
    }
}
