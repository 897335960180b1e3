//! Append-only log of delivered messages.
//!
//! ```text
//! header : "PSFGLOG\0" | version u16 | config sha256 [32] | master seed u64
//!          | z_dim, num_classes, data_dim, batch, d_steps u32
//!          | generator layout | discriminator layout
//!          | init kind u8 | bias range f32
//!          | optimizer kind u8 | lr, beta1, beta2, eps f32
//!          | users u32 | per user: id u32, seed u64, disc digest u64,
//!            class count u32, classes u32...
//! record : 0x01 | length u32 | encoded message
//! trailer: 0xFF | record count u64 | users u32
//!          | per user: id u32, steps u64, generator sha256 [32]
//!          | sha256 [32] of every preceding byte
//! ```
//!
//! Records are ordered by round, then user, then step.

use std::io::Write;

use sha2::{Digest, Sha256};

use super::{param_digest, Registration, ServerSlot, TrainerConfig};
use crate::channel::decode;
use crate::error::{Error, Result};
use crate::gan::CGanConfig;
use crate::nnkernel::{
    decode_layout, encode_layout, InitScheme, LayerSpec, OptimizerKind, ParamVector,
};

const LOG_MAGIC: &[u8; 8] = b"PSFGLOG\0";
const LOG_VERSION: u16 = 1;
const RECORD_TAG: u8 = 0x01;
const TRAILER_TAG: u8 = 0xFF;

/// Everything the server needs to rebuild its twins from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayHeader {
    pub config_digest: [u8; 32],
    pub master_seed: u64,
    pub gan: CGanConfig,
    pub trainer: TrainerConfig,
    pub users: Vec<Registration>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserDigest {
    pub user_id: u32,
    pub steps: u64,
    pub digest: [u8; 32],
}

impl UserDigest {
    pub fn of(slot: &ServerSlot) -> Self {
        Self {
            user_id: slot.registration().user_id,
            steps: slot.next_step(),
            digest: param_digest(slot.generator().params()),
        }
    }
}

/// Streams a log while hashing it.
pub struct LogWriter<W: Write> {
    out: W,
    hasher: Sha256,
    records: u64,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W, header: &ReplayHeader) -> Result<Self> {
        let mut w = Self {
            out,
            hasher: Sha256::new(),
            records: 0,
        };
        let bytes = encode_header(header)?;
        w.put(&bytes)?;
        Ok(w)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.out.write_all(bytes)?;
        Ok(())
    }

    pub fn record(&mut self, encoded_msg: &[u8]) -> Result<()> {
        let len = u32::try_from(encoded_msg.len())
            .map_err(|_| Error::Protocol("message too large for the log".into()))?;
        self.put(&[RECORD_TAG])?;
        self.put(&len.to_le_bytes())?;
        self.put(encoded_msg)?;
        self.records += 1;
        Ok(())
    }

    pub fn finish(mut self, digests: &[UserDigest]) -> Result<W> {
        let mut t = vec![TRAILER_TAG];
        t.extend_from_slice(&self.records.to_le_bytes());
        t.extend_from_slice(&(digests.len() as u32).to_le_bytes());
        for d in digests {
            t.extend_from_slice(&d.user_id.to_le_bytes());
            t.extend_from_slice(&d.steps.to_le_bytes());
            t.extend_from_slice(&d.digest);
        }
        self.put(&t)?;
        let total: [u8; 32] = self.hasher.clone().finalize().into();
        self.out.write_all(&total)?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn encode_header(h: &ReplayHeader) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(LOG_MAGIC);
    b.extend_from_slice(&LOG_VERSION.to_le_bytes());
    b.extend_from_slice(&h.config_digest);
    b.extend_from_slice(&h.master_seed.to_le_bytes());
    let g = &h.gan;
    for v in [g.z_dim, g.num_classes, g.data_dim, g.batch_size, g.d_steps_per_g_step] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend_from_slice(&encode_layout(ParamVector::zeros(&g.gen_layers)?.layout()));
    b.extend_from_slice(&encode_layout(ParamVector::zeros(&g.disc_layers)?.layout()));
    let (init_kind, range) = match h.trainer.init {
        InitScheme::GlorotZeroBias => (0u8, 0.0f32),
        InitScheme::GlorotUniformBias(r) => (1, r),
    };
    b.push(init_kind);
    b.extend_from_slice(&range.to_le_bytes());
    let (kind, b1, b2, eps) = match h.trainer.gen_optimizer {
        OptimizerKind::Sgd => (0u8, 0.0, 0.0, 0.0),
        OptimizerKind::Adam { beta1, beta2, eps } => (1, beta1, beta2, eps),
    };
    b.push(kind);
    for v in [h.trainer.gen_lr, b1, b2, eps] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&(h.users.len() as u32).to_le_bytes());
    for u in &h.users {
        b.extend_from_slice(&u.user_id.to_le_bytes());
        b.extend_from_slice(&u.seed.to_le_bytes());
        b.extend_from_slice(&u.disc_digest.to_le_bytes());
        b.extend_from_slice(&(u.classes.len() as u32).to_le_bytes());
        for &c in &u.classes {
            b.extend_from_slice(&(c as u32).to_le_bytes());
        }
    }
    Ok(b)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Decode {
                offset: self.bytes.len(),
                reason: "truncated replay log".into(),
            })?;
        let s = &self.bytes[self.pos..end];
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

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn specs(&mut self) -> Result<Vec<LayerSpec>> {
        let (layout, used) = decode_layout(&self.bytes[self.pos..]).map_err(|e| match e {
            Error::Decode { offset, reason } => Error::Decode {
                offset: offset + self.pos,
                reason,
            },
            other => other,
        })?;
        self.pos += used;
        Ok(layout.iter().map(|e| e.spec).collect())
    }

    fn err(&self, reason: &str) -> Error {
        Error::Decode {
            offset: self.pos,
            reason: reason.to_string(),
        }
    }
}

fn decode_header(c: &mut Cursor) -> Result<ReplayHeader> {
    if c.take(8)? != LOG_MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: "not a replay log".into(),
        });
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != LOG_VERSION {
        return Err(c.err(&format!("unsupported log version {version}")));
    }
    let config_digest = c.digest()?;
    let master_seed = c.u64()?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let gen_layers = c.specs()?;
    let disc_layers = c.specs()?;
    let gan = CGanConfig {
        z_dim: dims[0],
        num_classes: dims[1],
        data_dim: dims[2],
        batch_size: dims[3],
        d_steps_per_g_step: dims[4],
        gen_layers,
        disc_layers,
    };
    let init = match (c.u8()?, c.f32()?) {
        (0, _) => InitScheme::GlorotZeroBias,
        (1, r) => InitScheme::GlorotUniformBias(r),
        _ => return Err(c.err("unknown init scheme")),
    };
    let kind = c.u8()?;
    let (lr, beta1, beta2, eps) = (c.f32()?, c.f32()?, c.f32()?, c.f32()?);
    let gen_optimizer = match kind {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::Adam { beta1, beta2, eps },
        _ => return Err(c.err("unknown optimizer")),
    };
    let trainer = TrainerConfig {
        init,
        gen_optimizer,
        gen_lr: lr,
        ..TrainerConfig::default()
    };
    let n = c.u32()? as usize;
    let mut users = Vec::new();
    for _ in 0..n {
        let user_id = c.u32()?;
        let seed = c.u64()?;
        let disc_digest = c.u64()?;
        let k = c.u32()? as usize;
        if k > c.bytes.len() {
            return Err(c.err("class count exceeds input"));
        }
        let classes = (0..k).map(|_| c.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        users.push(Registration {
            user_id,
            seed,
            classes,
            disc_digest,
        });
    }
    Ok(ReplayHeader {
        config_digest,
        master_seed,
        gan,
        trainer,
        users,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub header: ReplayHeader,
    pub records: u64,
    pub digests: Vec<UserDigest>,
}

/// Rebuild every twin generator from a log and check it against the trailer.
///
/// Fails on a stream checksum mismatch, a malformed record, a step gap, or
/// any generator digest that differs from the one recorded.
pub fn replay(log: &[u8]) -> Result<ReplayOutcome> {
    if log.len() < 32 {
        return Err(Error::Decode {
            offset: log.len(),
            reason: "truncated replay log".into(),
        });
    }
    let (body, stored) = log.split_at(log.len() - 32);
    let actual: [u8; 32] = Sha256::digest(body).into();
    if actual != stored {
        return Err(Error::DigestMismatch("replay log checksum".into()));
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    let header = decode_header(&mut c)?;
    header.gan.validate()?;
    let mut slots = header
        .users
        .iter()
        .map(|r| ServerSlot::new(r.clone(), &header.gan, &header.trainer))
        .collect::<Result<Vec<_>>>()?;
    let mut records = 0u64;
    loop {
        match c.u8()? {
            RECORD_TAG => {
                let len = c.u32()? as usize;
                let msg = decode(c.take(len)?)?;
                let slot = slots
                    .iter_mut()
                    .find(|s| s.registration().user_id == msg.user_id)
                    .ok_or_else(|| Error::Protocol(format!("record for unknown user {}", msg.user_id)))?;
                slot.ingest(&msg, &header.gan)?;
                records += 1;
            }
            TRAILER_TAG => break,
            _ => return Err(c.err("unknown record tag")),
        }
    }
    let count = c.u64()?;
    if count != records {
        return Err(Error::DigestMismatch(format!(
            "trailer lists {count} records, log holds {records}"
        )));
    }
    let n = c.u32()? as usize;
    if n != slots.len() {
        return Err(Error::DigestMismatch("trailer user count".into()));
    }
    let digests: Vec<UserDigest> = slots.iter().map(UserDigest::of).collect();
    for d in &digests {
        let expected = UserDigest {
            user_id: c.u32()?,
            steps: c.u64()?,
            digest: c.digest()?,
        };
        if &expected != d {
            return Err(Error::DigestMismatch(format!(
                "user {} generator differs from the recorded digest",
                d.user_id
            )));
        }
    }
    if c.pos != body.len() {
        return Err(c.err("trailing bytes after trailer"));
    }
    Ok(ReplayOutcome {
        header,
        records,
        digests,
    })
}
