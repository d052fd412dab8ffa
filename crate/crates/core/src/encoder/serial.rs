//! Canonical `ZKQM` serialization of a quantized model.
//!
//! ```text
//! magic "ZKQM"  version:u16
//! backbone: len:u32 { config, input scale, layer records, tables }
//! head:     len:u32 { integer head, logit scale, abstain head }
//! meta:     len:u32 { JSON quantization report }
//! ```
//!
//! Integers and IEEE-754 doubles are little-endian, vectors carry a `u32`
//! length, fields appear in declaration order. `h_theta` hashes the whole
//! byte string; the backbone and head segments are hashed separately so a
//! head swap keeps the backbone hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use super::quant::{
    LutKind, QAffine, QAttention, QBackbone, QBlock, QHead, QLinear, QuantMeta, QuantizedModel, Requant, Lut,
};
use crate::error::{Error, Result};
use crate::zkp::circuit::Head;
use crate::zkp::field::Felt;
use crate::zkp::registry::ModelIdentity;
use crate::zkp::sponge::hash_bytes;

pub const MAGIC: &[u8; 4] = b"ZKQM";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHashes {
    pub h_theta: Felt,
    pub backbone_hash: Felt,
    pub head_hash: Felt,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated model".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn len(&mut self) -> Result<usize> {
        let n = u32::get(self)? as usize;
        if n > self.bytes.len() - self.pos {
            return Err(Error::Format("implausible length".into()));
        }
        Ok(n)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format("trailing bytes in model segment".into()));
        }
        Ok(())
    }
}

trait Canon: Sized {
    fn put(&self, out: &mut Vec<u8>);
    fn get(r: &mut Reader<'_>) -> Result<Self>;
}

macro_rules! canon_int {
    ($($t:ty),*) => {$(
        impl Canon for $t {
            fn put(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn get(r: &mut Reader<'_>) -> Result<Self> {
                Ok(<$t>::from_le_bytes(r.array()?))
            }
        }
    )*};
}

canon_int!(u8, i8, u16, u32, i32, i64, f64);

impl Canon for usize {
    fn put(&self, out: &mut Vec<u8>) {
        (*self as u32).put(out)
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        Ok(u32::get(r)? as usize)
    }
}

impl<T: Canon> Canon for Vec<T> {
    fn put(&self, out: &mut Vec<u8>) {
        self.len().put(out);
        self.iter().for_each(|v| v.put(out));
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len()?;
        (0..n).map(|_| T::get(r)).collect()
    }
}

impl Canon for ModelConfig {
    fn put(&self, out: &mut Vec<u8>) {
        for v in [self.n_blocks, self.d0, self.d_lat, self.w_t, self.group, self.kernel_t, self.kernel_f] {
            v.put(out);
        }
    }
    /// The class count belongs to the head segment and is filled in later.
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let mut v = [0usize; 7];
        for x in v.iter_mut() {
            *x = usize::get(r)?;
        }
        let cfg = ModelConfig { n_blocks: v[0], d0: v[1], d_lat: v[2], n_classes: 2, w_t: v[3], group: v[4], kernel_t: v[5], kernel_f: v[6] };
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }
}

impl Canon for Requant {
    fn put(&self, out: &mut Vec<u8>) {
        self.mult.put(out)
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Requant { mult: i64::get(r)? })
    }
}

impl Canon for QLinear {
    fn put(&self, out: &mut Vec<u8>) {
        self.n_in.put(out);
        self.n_out.put(out);
        self.w.put(out);
        self.bias.put(out);
        self.rq.put(out);
        self.w_scale.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let l = QLinear {
            n_in: usize::get(r)?,
            n_out: usize::get(r)?,
            w: Vec::get(r)?,
            bias: Vec::get(r)?,
            rq: Requant::get(r)?,
            w_scale: f64::get(r)?,
        };
        if l.w.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
            return Err(Error::Format("layer shape mismatch".into()));
        }
        Ok(l)
    }
}

impl Canon for QAffine {
    fn put(&self, out: &mut Vec<u8>) {
        self.mult.put(out);
        self.offset.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let a = QAffine { mult: Vec::get(r)?, offset: Vec::get(r)? };
        if a.mult.len() != a.offset.len() {
            return Err(Error::Format("affine shape mismatch".into()));
        }
        Ok(a)
    }
}

impl Canon for Lut {
    fn put(&self, out: &mut Vec<u8>) {
        let kind = match self.kind {
            LutKind::Identity => 0u8,
            LutKind::Gelu => 1,
            LutKind::Silu => 2,
            LutKind::Exp => 3,
            LutKind::Sigmoid => 4,
        };
        kind.put(out);
        self.in_step.put(out);
        self.out_scale.put(out);
        self.table.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let kind = match u8::get(r)? {
            0 => LutKind::Identity,
            1 => LutKind::Gelu,
            2 => LutKind::Silu,
            3 => LutKind::Exp,
            4 => LutKind::Sigmoid,
            k => return Err(Error::Format(format!("unknown table kind {k}"))),
        };
        let lut = Lut { kind, in_step: f64::get(r)?, out_scale: f64::get(r)?, table: Vec::get(r)? };
        if lut.table.len() != 256 {
            return Err(Error::Format("table must have 256 entries".into()));
        }
        Ok(lut)
    }
}

impl Canon for QAttention {
    fn put(&self, out: &mut Vec<u8>) {
        self.q.put(out);
        self.k.put(out);
        self.v.put(out);
        self.score.put(out);
        self.o.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        Ok(QAttention { q: QLinear::get(r)?, k: QLinear::get(r)?, v: QLinear::get(r)?, score: Requant::get(r)?, o: QLinear::get(r)? })
    }
}

impl Canon for QBlock {
    fn put(&self, out: &mut Vec<u8>) {
        self.norms.put(out);
        self.time.put(out);
        self.freq.put(out);
        self.gate.put(out);
        self.up.put(out);
        self.product.put(out);
        self.down.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let b = QBlock {
            norms: Vec::get(r)?,
            time: QAttention::get(r)?,
            freq: QAttention::get(r)?,
            gate: QLinear::get(r)?,
            up: QLinear::get(r)?,
            product: Requant::get(r)?,
            down: QLinear::get(r)?,
        };
        if b.norms.len() != 3 {
            return Err(Error::Format("a block has three normalizations".into()));
        }
        Ok(b)
    }
}

impl Canon for QBackbone {
    fn put(&self, out: &mut Vec<u8>) {
        self.cfg.put(out);
        self.input_scale.put(out);
        self.stem_proj.put(out);
        self.stem_dw.put(out);
        self.blocks.put(out);
        self.pool_norm.put(out);
        self.latent.put(out);
        self.latent_scale.put(out);
        self.luts.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let b = QBackbone {
            cfg: ModelConfig::get(r)?,
            input_scale: f64::get(r)?,
            stem_proj: QLinear::get(r)?,
            stem_dw: QLinear::get(r)?,
            blocks: Vec::get(r)?,
            pool_norm: QAffine::get(r)?,
            latent: QLinear::get(r)?,
            latent_scale: f64::get(r)?,
            luts: Vec::get(r)?,
        };
        let c = &b.cfg;
        let d = c.d0;
        let linear_ok = |l: &QLinear, n_in: usize, n_out: usize| l.n_in == n_in && l.n_out == n_out;
        let attn_ok = |a: &QAttention| [&a.q, &a.k, &a.v, &a.o].iter().all(|l| linear_ok(l, d, d));
        let blocks_ok = b.blocks.len() == c.n_blocks
            && b.blocks.iter().all(|k| {
                k.norms.iter().all(|n| n.mult.len() == d)
                    && attn_ok(&k.time)
                    && attn_ok(&k.freq)
                    && linear_ok(&k.gate, d, c.hidden())
                    && linear_ok(&k.up, d, c.hidden())
                    && linear_ok(&k.down, c.hidden(), d)
            });
        if !blocks_ok
            || !linear_ok(&b.stem_proj, 2, d)
            || !linear_ok(&b.stem_dw, c.kernel_taps(), d)
            || !linear_ok(&b.latent, d, c.d_lat)
            || b.pool_norm.mult.len() != d
            || b.luts.len() != 4 + c.n_blocks
        {
            return Err(Error::Format("backbone tensors disagree with the configuration".into()));
        }
        Ok(b)
    }
}

impl Canon for QHead {
    fn put(&self, out: &mut Vec<u8>) {
        self.head.n_classes.put(out);
        self.head.d_lat.put(out);
        self.head.weights.put(out);
        self.head.bias.put(out);
        self.logit_scale.put(out);
        self.abstain.put(out);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self> {
        let head = Head { n_classes: usize::get(r)?, d_lat: usize::get(r)?, weights: Vec::get(r)?, bias: Vec::get(r)? };
        head.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(QHead { head, logit_scale: f64::get(r)?, abstain: QLinear::get(r)? })
    }
}

fn segment<T: Canon>(v: &T) -> Vec<u8> {
    let mut out = Vec::new();
    v.put(&mut out);
    out
}

fn parts(qm: &QuantizedModel) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let meta = serde_json::to_vec(&qm.meta).expect("metadata serializes");
    (segment(&qm.backbone), segment(&qm.head), meta)
}

pub fn to_bytes(qm: &QuantizedModel) -> Vec<u8> {
    let (backbone, head, meta) = parts(qm);
    let mut out = Vec::with_capacity(backbone.len() + head.len() + meta.len() + 18);
    out.extend_from_slice(MAGIC);
    VERSION.put(&mut out);
    for seg in [&backbone, &head, &meta] {
        seg.len().put(&mut out);
        out.extend_from_slice(seg);
    }
    out
}

pub fn hashes(qm: &QuantizedModel) -> ModelHashes {
    let (backbone, head, _) = parts(qm);
    ModelHashes { h_theta: hash_bytes(&to_bytes(qm)), backbone_hash: hash_bytes(&backbone), head_hash: hash_bytes(&head) }
}

pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing ZKQM magic".into()));
    }
    let version = u16::get(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let mut segs = Vec::new();
    for _ in 0..3 {
        let n = r.len()?;
        segs.push(r.take(n)?);
    }
    r.finish()?;
    let mut br = Reader { bytes: segs[0], pos: 0 };
    let mut backbone = QBackbone::get(&mut br)?;
    br.finish()?;
    let mut hr = Reader { bytes: segs[1], pos: 0 };
    let head = QHead::get(&mut hr)?;
    hr.finish()?;
    if head.head.d_lat != backbone.cfg.d_lat || head.abstain.n_in != backbone.cfg.d_lat || head.abstain.n_out != 1 {
        return Err(Error::Format("head does not fit the backbone".into()));
    }
    backbone.cfg.n_classes = head.head.n_classes;
    let meta: QuantMeta = serde_json::from_slice(segs[2]).map_err(|e| Error::Format(e.to_string()))?;
    let mut qm = QuantizedModel { backbone, head, meta, hashes: ModelHashes::default() };
    qm.hashes = ModelHashes {
        h_theta: hash_bytes(bytes),
        backbone_hash: hash_bytes(segs[0]),
        head_hash: hash_bytes(segs[1]),
    };
    Ok(qm)
}

pub fn save(qm: &QuantizedModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(qm))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<QuantizedModel> {
    from_bytes(&fs::read(path)?)
}

impl QuantizedModel {
    pub fn hashes(&self) -> ModelHashes {
        self.hashes
    }

    /// Swaps in a new head over the same backbone.
    pub fn with_head(&self, head: QHead) -> Result<QuantizedModel> {
        if head.head.d_lat != self.backbone.cfg.d_lat || head.abstain.n_in != self.backbone.cfg.d_lat {
            return Err(Error::Parameter("head latent width differs from the backbone".into()));
        }
        head.head.validate()?;
        let mut qm = QuantizedModel { backbone: self.backbone.clone(), head, meta: self.meta.clone(), hashes: ModelHashes::default() };
        qm.backbone.cfg.n_classes = qm.head.head.n_classes;
        qm.hashes = hashes(&qm);
        Ok(qm)
    }

    /// Hashes and head parameters, as registered.
    pub fn identity(&self) -> ModelIdentity {
        ModelIdentity {
            h_theta: self.hashes.h_theta,
            backbone_hash: self.hashes.backbone_hash,
            head_hash: self.hashes.head_hash,
            head: self.head.head.clone(),
            logit_scale: self.head.logit_scale,
        }
    }
}
