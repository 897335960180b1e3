//! Client to server link: wire format, optional quantization, an eavesdrop
//! tap and communication-cost accounting.
//!
//! Wire format, little-endian throughout:
//!
//! ```text
//! "PSFG" | version u16 | user_id u32 | step u64 | arch_digest u64
//! | layout block | params f32 x n | z rows u32 | z cols u32 | z f32 x rows*cols
//! | labels u16 x rows
//! ```

use std::io::Write;

use crate::error::{Error, Result};
use crate::gan::NoiseBatch;
use crate::nnkernel::{encoded_layout_len, param_count, LayerSpec, Matrix, ParamVector};
use crate::protocol::MpMessage;

pub const MAGIC: &[u8; 4] = b"PSFG";
pub const VERSION: u16 = 1;
/// Magic, version, user id, step and digest.
pub const FIXED_HEADER_LEN: usize = 4 + 2 + 4 + 8 + 8;

/// Encoded size of a message without building it.
pub fn encoded_len(layout_entries: usize, disc_params: usize, batch: usize, z_dim: usize) -> usize {
    FIXED_HEADER_LEN + encoded_layout_len(layout_entries) + 4 * disc_params + 8 + 4 * batch * z_dim + 2 * batch
}

pub fn encode(msg: &MpMessage) -> Vec<u8> {
    let z = &msg.noise.z;
    let mut out = Vec::with_capacity(encoded_len(
        msg.disc_params.layout().len(),
        msg.disc_params.len(),
        z.rows(),
        z.cols(),
    ));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&msg.user_id.to_le_bytes());
    out.extend_from_slice(&msg.step.to_le_bytes());
    out.extend_from_slice(&msg.arch_digest.to_le_bytes());
    out.extend_from_slice(&msg.disc_params.encode());
    out.extend_from_slice(&(z.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(z.cols() as u32).to_le_bytes());
    for v in z.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &msg.noise.labels {
        // Labels are bounded by CGanConfig::validate.
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    out
}

/// Decode exactly one message; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<MpMessage> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(decode_err(used, "trailing bytes after message"));
    }
    Ok(msg)
}

/// Decode one message from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(MpMessage, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(decode_err(0, "bad magic"));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(decode_err(4, &format!("unsupported version {version}")));
    }
    let user_id = u32::from_le_bytes(r.array()?);
    let step = u64::from_le_bytes(r.array()?);
    let arch_digest = u64::from_le_bytes(r.array()?);
    let (disc_params, used) = ParamVector::decode(&bytes[r.pos..]).map_err(|e| shift(e, r.pos))?;
    r.pos += used;
    let rows = u32::from_le_bytes(r.array()?) as usize;
    let cols = u32::from_le_bytes(r.array()?) as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
        .ok_or_else(|| decode_err(r.pos - 8, "noise block larger than input"))?;
    let z: Vec<f32> = r
        .take(count * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let labels = r
        .take(rows * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let z = Matrix::from_vec(rows, cols, z)?;
    let msg = MpMessage {
        user_id,
        step,
        disc_params,
        noise: NoiseBatch { z, labels },
        arch_digest,
    };
    Ok((msg, r.pos))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| decode_err(self.bytes.len(), "truncated message"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

fn decode_err(offset: usize, reason: &str) -> Error {
    Error::Decode {
        offset,
        reason: reason.to_string(),
    }
}

fn shift(e: Error, by: usize) -> Error {
    match e {
        Error::Decode { offset, reason } => Error::Decode {
            offset: offset + by,
            reason,
        },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    Ideal,
    /// Uniform mid-rise quantizer with `2^bits` levels over `[-clip, clip]`,
    /// applied to the discriminator parameters.
    Quantized { bits: u32, clip: f32 },
}

impl ChannelKind {
    pub fn quantized_default() -> Self {
        ChannelKind::Quantized { bits: 16, clip: 4.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelKind::Ideal => Ok(()),
            ChannelKind::Quantized { bits, clip } => {
                if !(1..=24).contains(&bits) {
                    return Err(Error::config(format!("quantizer bits {bits} outside 1..=24")));
                }
                if !(clip.is_finite() && clip > 0.0) {
                    return Err(Error::config("quantizer clip must be positive and finite"));
                }
                Ok(())
            }
        }
    }
}

/// Quantize one value. The result lies within half a step of `x` clamped to
/// `[-clip, clip]`.
pub fn quantize(x: f32, bits: u32, clip: f32) -> f32 {
    let levels = 1u64 << bits;
    let clip = clip as f64;
    let step = 2.0 * clip / levels as f64;
    let x = (x as f64).clamp(-clip, clip);
    let idx = (((x + clip) / step).floor() as u64).min(levels - 1);
    (-clip + (idx as f64 + 0.5) * step) as f32
}

/// Receives a copy of every delivered message.
pub trait Tap {
    fn observe(&mut self, msg: &MpMessage);
}

/// A tap that keeps everything it sees.
impl Tap for Vec<MpMessage> {
    fn observe(&mut self, msg: &MpMessage) {
        self.push(msg.clone());
    }
}

/// One client's link to the server.
#[derive(Debug, Clone)]
pub struct ChannelModel<T = Vec<MpMessage>> {
    kind: ChannelKind,
    tap: Option<T>,
    bytes_sent: u64,
    messages_sent: u64,
}

impl<T: Tap> ChannelModel<T> {
    pub fn new(kind: ChannelKind) -> Self {
        Self {
            kind,
            tap: None,
            bytes_sent: 0,
            messages_sent: 0,
        }
    }

    pub fn with_tap(kind: ChannelKind, tap: T) -> Self {
        Self {
            tap: Some(tap),
            ..Self::new(kind)
        }
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn tap(&self) -> Option<&T> {
        self.tap.as_ref()
    }

    pub fn tap_mut(&mut self) -> Option<&mut T> {
        self.tap.as_mut()
    }

    pub fn into_tap(self) -> Option<T> {
        self.tap
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    /// Deliver `msg`: apply the channel transform, show the result to the tap
    /// and count its encoded size.
    pub fn transmit(&mut self, msg: MpMessage) -> MpMessage {
        let mut out = msg;
        if let ChannelKind::Quantized { bits, clip } = self.kind {
            for v in out.disc_params.values_mut() {
                *v = quantize(*v, bits, clip);
            }
        }
        if let Some(tap) = self.tap.as_mut() {
            tap.observe(&out);
        }
        self.messages_sent += 1;
        self.bytes_sent += encoded_len(
            out.disc_params.layout().len(),
            out.disc_params.len(),
            out.noise.len(),
            out.noise.z.cols(),
        ) as u64;
        out
    }
}

/// Per-step parameter counts for full GAN sharing versus sharing only the
/// discriminator and the noise batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub arch_name: String,
    pub gen_params: usize,
    pub disc_params: usize,
    pub batch: usize,
    pub z_dim: usize,
    /// `|theta_G| + |theta_D|`.
    pub params_full: usize,
    /// `|theta_D| + batch * (z_dim + 1)`.
    pub params_psfedgan: usize,
    /// Messages counted so far; the cumulative totals scale with it.
    pub messages: u64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str =
        "arch_name,params_full,params_psfedgan,bytes_full,bytes_psfedgan,ratio";

    pub fn bytes_full(&self) -> u64 {
        4 * self.params_full as u64
    }

    pub fn bytes_psfedgan(&self) -> u64 {
        4 * self.params_psfedgan as u64
    }

    pub fn ratio(&self) -> f64 {
        self.params_psfedgan as f64 / self.params_full as f64
    }

    /// Bytes saved per step by not sending the generator.
    pub fn saving_bytes(&self) -> i64 {
        self.bytes_full() as i64 - self.bytes_psfedgan() as i64
    }

    pub fn cumulative_full_bytes(&self) -> u64 {
        self.bytes_full() * self.messages
    }

    pub fn cumulative_psfedgan_bytes(&self) -> u64 {
        self.bytes_psfedgan() * self.messages
    }

    pub fn with_messages(mut self, messages: u64) -> Self {
        self.messages = messages;
        self
    }

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{:.6}",
            self.arch_name,
            self.params_full,
            self.params_psfedgan,
            self.bytes_full(),
            self.bytes_psfedgan(),
            self.ratio()
        )?;
        Ok(())
    }
}

pub fn write_cost_csv<W: Write>(reports: &[CostReport], mut w: W) -> Result<()> {
    writeln!(w, "{}", CostReport::CSV_HEADER)?;
    for r in reports {
        r.write_csv_row(&mut w)?;
    }
    Ok(())
}

pub fn cost_compare(
    arch_name: &str,
    gen: &[LayerSpec],
    disc: &[LayerSpec],
    batch: usize,
    z_dim: usize,
) -> CostReport {
    let gen_params = param_count(gen);
    let disc_params = param_count(disc);
    CostReport {
        arch_name: arch_name.to_string(),
        gen_params,
        disc_params,
        batch,
        z_dim,
        params_full: gen_params + disc_params,
        params_psfedgan: disc_params + batch * (z_dim + 1),
        messages: 0,
    }
}

/// A named generator/discriminator pair with its training batch and noise size.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub name: &'static str,
    pub gen: Vec<LayerSpec>,
    pub disc: Vec<LayerSpec>,
    pub batch: usize,
    pub z_dim: usize,
}

impl Architecture {
    pub fn cost(&self) -> CostReport {
        cost_compare(self.name, &self.gen, &self.disc, self.batch, self.z_dim)
    }
}

/// Architectures shipped with the simulator.
///
/// `dcgan_scale` is a dense stand-in sized like an MNIST DCGAN pair, with
/// the discriminator width chosen so that `|theta_G|` and `|theta_D|` agree
/// to within 0.1%.
pub fn bundled_architectures() -> Vec<Architecture> {
    use crate::gan::mlp_layers;
    use crate::nnkernel::Activation::{LeakyRelu, Relu, Sigmoid, Tanh};
    vec![
        Architecture {
            name: "toy",
            gen: mlp_layers(64 + 10, &[256, 256], 64, Relu, Tanh),
            disc: mlp_layers(64 + 10, &[256, 256], 1, LeakyRelu(0.2), Sigmoid),
            batch: 64,
            z_dim: 64,
        },
        Architecture {
            name: "gaussian2d",
            gen: mlp_layers(8 + 3, &[64, 64], 2, LeakyRelu(0.2), Tanh),
            disc: mlp_layers(2 + 3, &[64, 64], 1, LeakyRelu(0.2), Sigmoid),
            batch: 64,
            z_dim: 8,
        },
        Architecture {
            name: "glyphs",
            gen: mlp_layers(16 + 10, &[128, 128], 64, LeakyRelu(0.2), Tanh),
            disc: mlp_layers(64 + 10, &[128, 128], 1, LeakyRelu(0.2), Sigmoid),
            batch: 64,
            z_dim: 16,
        },
        Architecture {
            name: "dcgan_scale",
            gen: mlp_layers(100 + 10, &[1024], 784, Relu, Tanh),
            disc: mlp_layers(784 + 10, &[1152], 1, LeakyRelu(0.2), Sigmoid),
            batch: 64,
            z_dim: 100,
        },
    ]
}
