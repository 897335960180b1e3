use sha2::{Digest, Sha256};

use crate::gan::NoiseBatch;
use crate::nnkernel::{encode_layout, LayerSpec, LayoutEntry, ParamVector};
use crate::Result;

/// What a client publishes after each discriminator update.
#[derive(Debug, Clone, PartialEq)]
pub struct MpMessage {
    pub user_id: u32,
    pub step: u64,
    pub disc_params: ParamVector,
    pub noise: NoiseBatch,
    pub arch_digest: u64,
}

impl MpMessage {
    pub fn bit_eq(&self, other: &MpMessage) -> bool {
        self.user_id == other.user_id
            && self.step == other.step
            && self.arch_digest == other.arch_digest
            && self.disc_params.bit_eq(&other.disc_params)
            && self.noise.bit_eq(&other.noise)
    }

    /// Whether `disc_params` carries the layout named by `arch_digest`.
    pub fn layout_matches_digest(&self) -> bool {
        layout_digest(self.disc_params.layout()) == self.arch_digest
    }
}

/// First eight bytes (little-endian) of the SHA-256 of the encoded layout.
pub fn arch_digest(layers: &[LayerSpec]) -> Result<u64> {
    Ok(layout_digest(ParamVector::zeros(layers)?.layout()))
}

pub(crate) fn layout_digest(layout: &[LayoutEntry]) -> u64 {
    let hash = Sha256::digest(encode_layout(layout));
    u64::from_le_bytes(hash[..8].try_into().unwrap())
}

/// SHA-256 of a parameter vector's encoding.
pub fn param_digest(p: &ParamVector) -> [u8; 32] {
    Sha256::digest(p.encode()).into()
}
