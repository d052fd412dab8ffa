//! Canonical binary encoding of proofs (`"ZKPF"`), little-endian throughout:
//!
//! ```text
//! magic[4] version:u16 B:u32
//! B x statement { c:u64 h_theta:u64 tau_fp:u64 t_win:u64 nonce:u64 action:u8 }
//! root:u64 depth:u8 seed:u64 k:u32
//! k x opening { constraint:u32  W x { slot:u32 value:u64 salt:u64 path:depth x u64 } }
//! (2 + 4B) x binding { salt:u64 path:depth x u64 }
//! ```
//!
//! Statements can also be exported as JSON for third-party verification.

use super::circuit::Statement;
use super::field::Felt;
use super::proof::{Binding, Opening, Proof, SlotOpening};
use super::r1cs::MAX_WIRES;
use crate::error::{Error, Result};
use crate::policy::Decision;

pub const MAGIC: &[u8; 4] = b"ZKPF";
pub const VERSION: u16 = 1;
pub const STATEMENT_BYTES: usize = 41;

fn put_felt(out: &mut Vec<u8>, f: Felt) {
    out.extend_from_slice(&f.to_le_bytes());
}

pub fn encode_statement(out: &mut Vec<u8>, s: &Statement) {
    put_felt(out, s.c);
    put_felt(out, s.h_theta);
    out.extend_from_slice(&(s.tau_fp as u64).to_le_bytes());
    out.extend_from_slice(&s.t_win.to_le_bytes());
    put_felt(out, s.nonce);
    out.push(s.action.code() as u8);
}

pub fn encode_proof(p: &Proof) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(p.statements.len() as u32).to_le_bytes());
    for s in &p.statements {
        encode_statement(&mut out, s);
    }
    put_felt(&mut out, p.root);
    out.push(p.depth as u8);
    put_felt(&mut out, p.seed);
    out.extend_from_slice(&(p.openings.len() as u32).to_le_bytes());
    for o in &p.openings {
        out.extend_from_slice(&o.constraint.to_le_bytes());
        for s in &o.slots {
            out.extend_from_slice(&s.slot.to_le_bytes());
            put_felt(&mut out, s.value);
            put_felt(&mut out, s.salt);
            s.path.iter().for_each(|f| put_felt(&mut out, *f));
        }
    }
    for b in &p.bindings {
        put_felt(&mut out, b.salt);
        b.path.iter().for_each(|f| put_felt(&mut out, *f));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated proof".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn felt(&mut self) -> Result<Felt> {
        Felt::from_le_bytes(self.take(8)?.try_into().unwrap())
            .ok_or_else(|| Error::Format("non-canonical field element".into()))
    }

    fn path(&mut self, depth: usize) -> Result<Vec<Felt>> {
        (0..depth).map(|_| self.felt()).collect()
    }
}

fn decode_statement(r: &mut Reader<'_>) -> Result<Statement> {
    let c = r.felt()?;
    let h_theta = r.felt()?;
    let tau = r.u64()?;
    let t_win = r.u64()?;
    let nonce = r.felt()?;
    let action = Decision::from_code(r.u8()? as u64).ok_or_else(|| Error::Format("unknown action code".into()))?;
    let tau_fp = u32::try_from(tau).map_err(|_| Error::Format("threshold out of range".into()))?;
    Ok(Statement { c, h_theta, tau_fp, t_win, nonce, action })
}

pub fn decode_proof(bytes: &[u8]) -> Result<Proof> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing ZKPF magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported proof version {version}")));
    }
    let batch = r.u32()? as usize;
    if batch == 0 || batch.saturating_mul(STATEMENT_BYTES) > bytes.len() {
        return Err(Error::Format("implausible batch size".into()));
    }
    let statements = (0..batch).map(|_| decode_statement(&mut r)).collect::<Result<Vec<_>>>()?;
    let root = r.felt()?;
    let depth = r.u8()? as usize;
    if depth > 40 {
        return Err(Error::Format("implausible tree depth".into()));
    }
    let seed = r.felt()?;
    let k = r.u32()? as usize;
    let per_opening = 4 + MAX_WIRES * (20 + 8 * depth);
    if k.saturating_mul(per_opening) > bytes.len() {
        return Err(Error::Format("implausible opening count".into()));
    }
    let mut openings = Vec::with_capacity(k);
    for _ in 0..k {
        let constraint = r.u32()?;
        let mut slots = Vec::with_capacity(MAX_WIRES);
        for _ in 0..MAX_WIRES {
            let slot = r.u32()?;
            let value = r.felt()?;
            let salt = r.felt()?;
            slots.push(SlotOpening { slot, value, salt, path: r.path(depth)? });
        }
        openings.push(Opening { constraint, slots });
    }
    let bindings = (0..2 + 4 * batch)
        .map(|_| Ok(Binding { salt: r.felt()?, path: r.path(depth)? }))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after proof".into()));
    }
    Ok(Proof { statements, root, depth, seed, openings, bindings })
}

pub fn statements_to_json(statements: &[Statement]) -> Result<String> {
    Ok(serde_json::to_string_pretty(statements)?)
}

pub fn statements_from_json(text: &str) -> Result<Vec<Statement>> {
    Ok(serde_json::from_str(text)?)
}
