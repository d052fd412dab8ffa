//! Append-only, hash-chained audit log of emitted actions and their proofs.
//!
//! One entry per line, serialized as compact JSON with keys in sorted order.
//! Each entry carries the digest of the previous line (a fixed genesis value
//! for the first) and a keyed sponge MAC over its own canonical bytes with
//! the `sig` field removed. The log can be checked against an [`Anchor`]
//! (entry count and head digest) to also catch truncation at the tail.

pub mod attack;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ActionRecord;
use crate::zkp::sponge::{hash_bytes, keyed_hash, pack_bytes};
use crate::zkp::Felt;

/// `prev_digest` of the first entry.
pub const GENESIS: Felt = Felt::new(0x7a6b_7365_6e73_6530);

/// Per-site MAC key.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey(Vec<Felt>);

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

impl SigningKey {
    pub const BYTES: usize = 32;

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Parameter("signing key needs at least 16 bytes".into()));
        }
        Ok(SigningKey(pack_bytes(bytes)))
    }

    pub fn generate(seed: u64) -> Vec<u8> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..Self::BYTES).map(|_| rng.random()).collect()
    }

    /// Reads a hex-encoded key file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let bytes = hex::decode(text.trim()).map_err(|e| Error::Format(format!("key file: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn mac(&self, bytes: &[u8]) -> Felt {
        keyed_hash(&self.0, bytes)
    }
}

/// Caller-supplied fields of an entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryFields {
    pub ts: u64,
    pub site_id: String,
    pub zone: String,
    pub action: ActionRecord,
    /// Calibrated confidence the decision used.
    pub u: f64,
    /// Predicted class.
    pub class: usize,
    /// Ground-truth label when known (synthetic runs).
    pub label: Option<usize>,
    pub c: Felt,
    pub h_theta: Felt,
    pub t_win: u64,
    /// Bytes of the proof covering this window.
    pub pi_size: usize,
    /// Windows covered by that proof.
    pub batch: usize,
    /// Verifier outcome for that proof.
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub ts: u64,
    pub site_id: String,
    pub zone: String,
    pub action: ActionRecord,
    pub u: f64,
    pub class: usize,
    pub label: Option<usize>,
    pub c: Felt,
    pub h_theta: Felt,
    pub t_win: u64,
    pub pi_size: usize,
    pub batch: usize,
    pub verified: bool,
    pub prev_digest: Felt,
    pub sig: Felt,
}

impl AuditEntry {
    fn unsigned(f: EntryFields, prev_digest: Felt) -> Self {
        AuditEntry {
            ts: f.ts,
            site_id: f.site_id,
            zone: f.zone,
            action: f.action,
            u: f.u,
            class: f.class,
            label: f.label,
            c: f.c,
            h_theta: f.h_theta,
            t_win: f.t_win,
            pi_size: f.pi_size,
            batch: f.batch,
            verified: f.verified,
            prev_digest,
            sig: Felt::ZERO,
        }
    }

    /// Canonical line: sorted keys, no insignificant whitespace.
    pub fn canonical(&self) -> String {
        canonical_json(self).expect("audit entry serializes")
    }

    /// Canonical bytes covered by `sig`.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("audit entry serializes");
        v.as_object_mut().expect("entry is an object").remove("sig");
        v.to_string().into_bytes()
    }
}

fn canonical_json<T: Serialize>(x: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    Ok(serde_json::to_value(x)?.to_string())
}

/// Digest chaining a line to its successor.
pub fn line_digest(line: &str) -> Felt {
    hash_bytes(line.as_bytes())
}

/// Entry count and head digest recorded out of band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub entries: usize,
    pub head: Felt,
}

impl Anchor {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Single-writer log, optionally mirrored to a file.
#[derive(Debug, Default)]
pub struct AuditLog {
    path: Option<PathBuf>,
    lines: Vec<String>,
    head: Option<Felt>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed log, resuming after its last line.
    /// The existing contents are not verified here.
    pub fn open(path: &Path) -> Result<Self> {
        let lines = match fs::read_to_string(path) {
            Ok(text) => text.lines().map(str::to_string).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                fs::write(path, "")?;
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        let head = lines.last().map(|l: &String| line_digest(l));
        Ok(AuditLog { path: Some(path.to_path_buf()), lines, head })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// The log as file text, one newline-terminated line per entry.
    pub fn text(&self) -> String {
        self.lines.iter().flat_map(|l| [l.as_str(), "\n"]).collect()
    }

    pub fn anchor(&self) -> Anchor {
        Anchor { entries: self.lines.len(), head: self.head.unwrap_or(GENESIS) }
    }

    /// Chains, signs and appends one entry. On I/O failure the log is left
    /// as it was.
    pub fn append(&mut self, fields: EntryFields, key: &SigningKey) -> Result<AuditEntry> {
        let mut entry = AuditEntry::unsigned(fields, self.head.unwrap_or(GENESIS));
        entry.sig = key.mac(&entry.signed_bytes());
        let line = entry.canonical();
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::Append(format!("{}: {e}", path.display())))?;
            f.write_all(format!("{line}\n").as_bytes())
                .map_err(|e| Error::Append(format!("{}: {e}", path.display())))?;
        }
        self.head = Some(line_digest(&line));
        self.lines.push(line);
        Ok(entry)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub valid: bool,
    /// Index of the first entry that fails parsing, canonical form, chaining
    /// or signature (or where the anchor says entries are missing).
    pub first_bad: Option<usize>,
    pub entries: usize,
}

/// Verifier position after a verified prefix: the last line's digest and
/// the number of entries read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainState {
    pub prev: Felt,
    pub entries: usize,
}

impl ChainState {
    pub fn genesis() -> Self {
        ChainState { prev: GENESIS, entries: 0 }
    }

    /// State after accepting `line` (without its newline).
    pub fn after(self, line: &str) -> Self {
        ChainState { prev: line_digest(line), entries: self.entries + 1 }
    }
}

/// Checks every line of `log` in order. The newline ending a line belongs
/// to that line's entry.
pub fn verify_chain(log: &[u8], key: &SigningKey, anchor: Option<&Anchor>) -> ChainReport {
    let mut v = ChainVerifier::new(key);
    v.feed(log);
    v.finish(anchor)
}

/// Incremental chain verification over bytes fed in any chunking.
#[derive(Debug)]
pub struct ChainVerifier<'k> {
    key: &'k SigningKey,
    state: ChainState,
    partial: Vec<u8>,
    failed: bool,
}

impl<'k> ChainVerifier<'k> {
    pub fn new(key: &'k SigningKey) -> Self {
        Self::resume(key, ChainState::genesis())
    }

    /// Continues after a prefix already verified up to `state`.
    pub fn resume(key: &'k SigningKey, state: ChainState) -> Self {
        ChainVerifier { key, state, partial: Vec::new(), failed: false }
    }

    pub fn state(&self) -> ChainState {
        self.state
    }

    /// Consumes complete lines; returns `false` once an entry has failed.
    pub fn feed(&mut self, mut bytes: &[u8]) -> bool {
        if self.failed {
            return false;
        }
        while let Some(end) = bytes.iter().position(|&b| b == b'\n') {
            let ok = if self.partial.is_empty() {
                self.check(&bytes[..end])
            } else {
                let mut line = std::mem::take(&mut self.partial);
                line.extend_from_slice(&bytes[..end]);
                self.check(&line)
            };
            bytes = &bytes[end + 1..];
            if !ok {
                self.failed = true;
                return false;
            }
        }
        self.partial.extend_from_slice(bytes);
        true
    }

    fn check(&mut self, raw: &[u8]) -> bool {
        let Ok(line) = std::str::from_utf8(raw) else {
            return false;
        };
        let Ok(entry) = serde_json::from_str::<AuditEntry>(line) else {
            return false;
        };
        if entry.canonical() != line || entry.prev_digest != self.state.prev || self.key.mac(&entry.signed_bytes()) != entry.sig {
            return false;
        }
        self.state = self.state.after(line);
        true
    }

    /// Report over everything fed. An unterminated last line is bad.
    pub fn finish(self, anchor: Option<&Anchor>) -> ChainReport {
        let n = self.state.entries;
        let bad = |i: usize| ChainReport { valid: false, first_bad: Some(i), entries: n };
        if self.failed || !self.partial.is_empty() {
            return bad(n);
        }
        if let Some(a) = anchor {
            if n < a.entries {
                return bad(n);
            }
            if n > a.entries || self.state.prev != a.head {
                return bad(n.saturating_sub(1));
            }
        }
        ChainReport { valid: true, first_bad: None, entries: n }
    }
}

/// Parses entries without checking the chain.
pub fn parse_entries(text: &str) -> Result<Vec<AuditEntry>> {
    text.lines().map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Metrics recomputed from log entries alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub windows: usize,
    pub abstained: usize,
    pub abstain_rate: f64,
    pub coverage: f64,
    /// Error rate among accepted windows with a known label.
    pub risk: f64,
    pub proof_acceptance: f64,
    pub proof_bytes_per_window: f64,
}

pub fn summarize(entries: &[AuditEntry]) -> LogSummary {
    use crate::policy::Decision;
    let n = entries.len();
    let abstained = entries.iter().filter(|e| e.action.decision == Decision::Abstain).count();
    let (mut labelled, mut wrong) = (0usize, 0usize);
    for e in entries.iter().filter(|e| e.action.decision != Decision::Abstain) {
        if let Some(y) = e.label {
            labelled += 1;
            wrong += usize::from(y != e.class);
        }
    }
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    LogSummary {
        windows: n,
        abstained,
        abstain_rate: ratio(abstained as f64, n),
        coverage: ratio((n - abstained) as f64, n),
        risk: ratio(wrong as f64, labelled),
        proof_acceptance: ratio(entries.iter().filter(|e| e.verified).count() as f64, n),
        proof_bytes_per_window: entries.iter().map(|e| e.pi_size as f64 / e.batch.max(1) as f64).sum::<f64>()
            / n.max(1) as f64,
    }
}
