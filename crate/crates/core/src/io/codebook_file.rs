//! Binary codebook container, little-endian:
//!
//! ```text
//! magic "MRGIDXCB" | u32 version | u8 kind | u64 dim | u64 len + config JSON
//! body
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Kind 0 holds a fine codebook and an optional coarse layer; kind 1 holds
//! the layers of a VQ/RQ quantizer.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::baseline::{Metric, VqCodebook};
use crate::config::IndexConfig;
use crate::error::{Error, Result};
use crate::types::{ClusterSlot, CoarseCodebook, CoarsePrototype, FineCodebook, SlotState};

pub const MAGIC: &[u8; 8] = b"MRGIDXCB";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const NONE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum CodebookBody {
    Merge {
        fine: FineCodebook,
        coarse: Option<CoarseCodebook>,
    },
    Quantizer {
        layers: Vec<VqCodebook>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFile {
    pub config: IndexConfig,
    pub dim: usize,
    pub body: CodebookBody,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn opt(&mut self, v: Option<u64>) {
        self.u64(v.unwrap_or(NONE));
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn vec(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A length or index; bounded by the remaining bytes so corrupt input
    /// cannot request huge allocations.
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.buf.len() as u64 * 8 {
            return Err(Error::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn opt(&mut self) -> Result<Option<u64>> {
        let v = self.u64()?;
        Ok((v != NONE).then_some(v))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(Error::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }
}

pub fn encode(file: &CodebookFile) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let kind = match file.body {
        CodebookBody::Merge { .. } => 0,
        CodebookBody::Quantizer { .. } => 1,
    };
    w.u8(kind);
    w.usize(file.dim);
    let cfg = serde_json::to_vec(&file.config).map_err(|e| Error::Format(e.to_string()))?;
    w.bytes(&cfg);
    match &file.body {
        CodebookBody::Merge { fine, coarse } => {
            check_dim(file.dim, fine.dim)?;
            w.u64(fine.step);
            w.usize(fine.slots.len());
            for s in &fine.slots {
                check_dim(file.dim, s.codeword.len())?;
                check_dim(file.dim, s.ema_sum.len())?;
                w.u8(matches!(s.state, SlotState::Active) as u8);
                w.u64(s.created_step);
                w.opt(s.growing_since);
                w.f64(s.ema_count);
                w.vec(&s.ema_sum);
                w.vec(&s.codeword);
            }
            match coarse {
                None => w.u8(0),
                Some(c) => {
                    w.u8(1);
                    w.usize(c.prototypes.len());
                    for p in &c.prototypes {
                        check_dim(file.dim, p.embedding.len())?;
                        w.f64(p.ema_count);
                        w.vec(&p.embedding);
                        w.usize(p.members.len());
                        p.members.iter().for_each(|&m| w.usize(m));
                    }
                    w.usize(c.parent.len());
                    c.parent.iter().for_each(|p| w.opt(p.map(|x| x as u64)));
                }
            }
        }
        CodebookBody::Quantizer { layers } => {
            w.usize(layers.len());
            for l in layers {
                check_dim(file.dim, l.dim)?;
                w.u8(match l.metric {
                    Metric::Cosine => 0,
                    Metric::Euclidean => 1,
                });
                w.usize(l.capacity);
                w.u64(l.step);
                w.usize(l.codewords.len());
                for k in 0..l.codewords.len() {
                    w.f64(l.ema_count[k]);
                    w.vec(&l.ema_sum[k]);
                    w.vec(&l.codewords[k]);
                }
            }
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    Ok(w.0)
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension { expected, actual });
    }
    Ok(())
}

/// Parses before checking the digest so that short files report truncation
/// and foreign versions are named. Any other damage surfaces as an integrity
/// error.
pub fn decode(buf: &[u8]) -> Result<CodebookFile> {
    let digest_ok = |end: usize| Sha256::digest(&buf[..end]).as_slice() == &buf[end..end + DIGEST_LEN];
    match parse(buf) {
        Ok((file, end)) => {
            if end + DIGEST_LEN < buf.len() {
                return Err(Error::Format("trailing bytes after checksum".into()));
            }
            if !digest_ok(end) {
                return Err(Error::Integrity);
            }
            Ok(file)
        }
        Err(Error::Truncated) => Err(Error::Truncated),
        Err(Error::Format(_)) if buf.len() >= DIGEST_LEN && !digest_ok(buf.len() - DIGEST_LEN) => Err(Error::Integrity),
        Err(e) => Err(e),
    }
}

fn parse(buf: &[u8]) -> Result<(CodebookFile, usize)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a codebook file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let kind = r.u8()?;
    let dim = r.usize()?;
    let config: IndexConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Format(format!("config: {e}")))?;
    let body = match kind {
        0 => {
            let step = r.u64()?;
            let n = r.usize()?;
            let mut slots = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let state = match r.u8()? {
                    0 => SlotState::Empty,
                    1 => SlotState::Active,
                    s => return Err(Error::Format(format!("slot state {s}"))),
                };
                let created_step = r.u64()?;
                let growing_since = r.opt()?;
                let ema_count = r.f64()?;
                let ema_sum = r.vec(dim)?;
                let codeword = r.vec(dim)?;
                slots.push(ClusterSlot {
                    codeword,
                    ema_sum,
                    ema_count,
                    state,
                    created_step,
                    growing_since,
                });
            }
            let coarse = match r.u8()? {
                0 => None,
                1 => {
                    let np = r.usize()?;
                    let mut prototypes = Vec::with_capacity(np.min(1 << 20));
                    for _ in 0..np {
                        let ema_count = r.f64()?;
                        let embedding = r.vec(dim)?;
                        let nm = r.usize()?;
                        let members = (0..nm).map(|_| r.usize()).collect::<Result<_>>()?;
                        prototypes.push(CoarsePrototype {
                            embedding,
                            ema_count,
                            members,
                        });
                    }
                    let nparent = r.usize()?;
                    let parent = (0..nparent)
                        .map(|_| Ok(r.opt()?.map(|x| x as usize)))
                        .collect::<Result<_>>()?;
                    Some(CoarseCodebook { prototypes, parent })
                }
                f => return Err(Error::Format(format!("coarse flag {f}"))),
            };
            CodebookBody::Merge {
                fine: FineCodebook { dim, slots, step },
                coarse,
            }
        }
        1 => {
            let nl = r.usize()?;
            let mut layers = Vec::with_capacity(nl.min(1 << 10));
            for _ in 0..nl {
                let metric = match r.u8()? {
                    0 => Metric::Cosine,
                    1 => Metric::Euclidean,
                    m => return Err(Error::Format(format!("metric {m}"))),
                };
                let capacity = r.usize()?;
                let step = r.u64()?;
                let k = r.usize()?;
                if k > capacity {
                    return Err(Error::Format(format!("{k} codewords exceed capacity {capacity}")));
                }
                let mut cb = VqCodebook::new(capacity, dim, metric)?;
                cb.step = step;
                for _ in 0..k {
                    cb.ema_count.push(r.f64()?);
                    cb.ema_sum.push(r.vec(dim)?);
                    cb.codewords.push(r.vec(dim)?);
                }
                layers.push(cb);
            }
            CodebookBody::Quantizer { layers }
        }
        k => return Err(Error::Format(format!("unknown codebook kind {k}"))),
    };
    let body_end = r.pos;
    r.take(DIGEST_LEN)?;
    Ok((CodebookFile { config, dim, body }, body_end))
}

pub fn write_container(path: &Path, file: &CodebookFile) -> Result<()> {
    std::fs::write(path, encode(file)?)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<CodebookFile> {
    decode(&std::fs::read(path)?)
}

pub fn save_codebook(
    path: &Path,
    fine: &FineCodebook,
    coarse: Option<&CoarseCodebook>,
    config: &IndexConfig,
) -> Result<()> {
    write_container(
        path,
        &CodebookFile {
            config: config.clone(),
            dim: fine.dim,
            body: CodebookBody::Merge {
                fine: fine.clone(),
                coarse: coarse.cloned(),
            },
        },
    )
}

pub fn load_codebook(path: &Path) -> Result<(FineCodebook, Option<CoarseCodebook>)> {
    match read_container(path)?.body {
        CodebookBody::Merge { fine, coarse } => Ok((fine, coarse)),
        CodebookBody::Quantizer { .. } => Err(Error::Format("file holds a VQ/RQ codebook".into())),
    }
}
