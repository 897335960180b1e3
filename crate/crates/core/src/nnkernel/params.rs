//! Layer descriptions and the flat parameter vector they index into.
//!
//! A dense layer `in -> out` owns `in * out` weights stored row-major as an
//! `[in x out]` matrix (row = input index), followed by `out` biases. Activation
//! layers own no parameters but still occupy a zero-length layout entry so the
//! layout mirrors the layer list one to one.

use std::fmt;

use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    /// Negative-side slope. Must be a whole number of ten-thousandths so it
    /// survives the layout encoding.
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Identity => 1,
            Activation::Relu => 2,
            Activation::Tanh => 3,
            Activation::Sigmoid => 4,
            Activation::LeakyRelu(alpha) => 5 | (leaky_units(alpha) << 8),
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code & 0xFF {
            1 if code == 1 => Some(Activation::Identity),
            2 if code == 2 => Some(Activation::Relu),
            3 if code == 3 => Some(Activation::Tanh),
            4 if code == 4 => Some(Activation::Sigmoid),
            5 => Some(Activation::LeakyRelu((code >> 8) as f32 / 10_000.0)),
            _ => None,
        }
    }

    fn validate(self) -> Result<()> {
        if let Activation::LeakyRelu(alpha) = self {
            let ok = alpha.is_finite()
                && alpha >= 0.0
                && alpha < 1677.0
                && leaky_units(alpha) as f32 / 10_000.0 == alpha;
            if !ok {
                return Err(Error::config(format!(
                    "leaky relu slope {alpha} is not a multiple of 1e-4 in [0, 1677)"
                )));
            }
        }
        Ok(())
    }
}

fn leaky_units(alpha: f32) -> u32 {
    (alpha as f64 * 10_000.0).round() as u32
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Activation { dim: usize, activation: Activation },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn act(dim: usize, activation: Activation) -> Self {
        LayerSpec::Activation { dim, activation }
    }

    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            LayerSpec::Activation { dim, .. } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_dim, .. } => out_dim,
            LayerSpec::Activation { dim, .. } => dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Activation { .. } => 0,
        }
    }
}

/// Check that `layers` is nonempty, every width is positive and consecutive
/// layers agree on their shared dimension.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("network has no layers"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim() == 0 || l.out_dim() == 0 {
            return Err(Error::config(format!("layer {i} has a zero dimension")));
        }
        if let LayerSpec::Activation { activation, .. } = l {
            activation.validate()?;
        }
        if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
            return Err(Error::config(format!(
                "layer {} outputs {} but layer {i} expects {}",
                i - 1,
                layers[i - 1].out_dim(),
                l.in_dim()
            )));
        }
    }
    Ok(())
}

pub fn param_count(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutEntry {
    pub spec: LayerSpec,
    pub offset: usize,
    pub len: usize,
}

/// How dense-layer parameters are drawn at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitScheme {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases.
    #[default]
    GlorotZeroBias,
    /// Glorot-uniform weights, biases uniform in `[-range, range)`. Each dense
    /// layer draws all its weights, then all its biases.
    GlorotUniformBias(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn zeros(layers: &[LayerSpec]) -> Result<Self> {
        validate_layers(layers)?;
        let mut layout = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &spec in layers {
            let len = spec.param_count();
            layout.push(LayoutEntry { spec, offset, len });
            offset += len;
        }
        Ok(Self {
            values: vec![0.0; offset],
            layout,
        })
    }

    /// Zero vector with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn from_parts(layout: Vec<LayoutEntry>, values: Vec<f32>) -> Result<Self> {
        let mut expected = 0;
        for (i, e) in layout.iter().enumerate() {
            if e.offset != expected || e.len != e.spec.param_count() {
                return Err(Error::shape(format!("layout entry {i} is inconsistent")));
            }
            expected += e.len;
        }
        if expected != values.len() {
            return Err(Error::shape(format!(
                "layout covers {expected} values but {} were given",
                values.len()
            )));
        }
        let specs: Vec<_> = layout.iter().map(|e| e.spec).collect();
        validate_layers(&specs)?;
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layout.iter().map(|e| e.spec).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    /// `(weights, biases)` of the layer at `layer_index`, which must be dense.
    pub fn dense_parts(&self, layer_index: usize) -> (&[f32], &[f32]) {
        let e = &self.layout[layer_index];
        let LayerSpec::Dense { in_dim, .. } = e.spec else {
            panic!("layer {layer_index} is not dense");
        };
        let block = &self.values[e.offset..e.offset + e.len];
        let out_dim = e.spec.out_dim();
        block.split_at(in_dim * out_dim)
    }

    pub fn dense_parts_mut(&mut self, layer_index: usize) -> (&mut [f32], &mut [f32]) {
        let e = self.layout[layer_index];
        let LayerSpec::Dense { in_dim, out_dim } = e.spec else {
            panic!("layer {layer_index} is not dense");
        };
        let block = &mut self.values[e.offset..e.offset + e.len];
        block.split_at_mut(in_dim * out_dim)
    }

    /// Index of the first dense layer, if any.
    pub fn first_dense(&self) -> Option<usize> {
        self.layout
            .iter()
            .position(|e| matches!(e.spec, LayerSpec::Dense { .. }))
    }

    /// Every value bit-identical and the layouts equal.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Number of positions whose bit patterns differ.
    pub fn bit_diff_count(&self, other: &ParamVector) -> usize {
        self.values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count()
            + self.values.len().abs_diff(other.values.len())
    }

    /// Euclidean distance, accumulated in binary64 in index order.
    pub fn l2_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian encoding: layout descriptor followed by the values.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = encode_layout(&self.layout);
        out.reserve(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`ParamVector::encode`]; returns the vector and bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let (layout, mut pos) = decode_layout(bytes)?;
        let total: usize = layout.iter().map(|e| e.len).sum();
        let need = total
            .checked_mul(4)
            .ok_or_else(|| decode_err(pos, "parameter count overflows"))?;
        if bytes.len() - pos < need {
            return Err(decode_err(bytes.len(), "truncated parameter block"));
        }
        let values = bytes[pos..pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let start = pos;
        pos += need;
        let pv = ParamVector::from_parts(layout, values).map_err(|e| decode_err(start, &e.to_string()))?;
        Ok((pv, pos))
    }
}

fn decode_err(offset: usize, reason: &str) -> Error {
    Error::Decode {
        offset,
        reason: reason.to_string(),
    }
}

/// Layout descriptor: entry count, then `kind, in, out, offset, length` per entry,
/// all little-endian `u32`. Kind 0 is dense; activation kinds are 1 identity,
/// 2 relu, 3 tanh, 4 sigmoid and 5 leaky relu with the slope in ten-thousandths
/// in the upper 24 bits.
pub fn encode_layout(layout: &[LayoutEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 20 * layout.len());
    out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for e in layout {
        let kind = match e.spec {
            LayerSpec::Dense { .. } => 0,
            LayerSpec::Activation { activation, .. } => activation.code(),
        };
        for word in [
            kind,
            e.spec.in_dim() as u32,
            e.spec.out_dim() as u32,
            e.offset as u32,
            e.len as u32,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
    }
    out
}

pub fn encoded_layout_len(entries: usize) -> usize {
    4 + 20 * entries
}

pub fn decode_layout(bytes: &[u8]) -> Result<(Vec<LayoutEntry>, usize)> {
    let read = |pos: usize| -> Result<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| decode_err(bytes.len(), "truncated layout descriptor"))
    };
    let count = read(0)? as usize;
    if count.saturating_mul(20) > bytes.len() {
        return Err(decode_err(0, "layout entry count exceeds input"));
    }
    let mut pos = 4;
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let at = pos;
        let kind = read(pos)?;
        let in_dim = read(pos + 4)? as usize;
        let out_dim = read(pos + 8)? as usize;
        let offset = read(pos + 12)? as usize;
        let len = read(pos + 16)? as usize;
        pos += 20;
        let spec = if kind == 0 {
            LayerSpec::Dense { in_dim, out_dim }
        } else {
            let activation =
                Activation::from_code(kind).ok_or_else(|| decode_err(at, "unknown layer kind"))?;
            if in_dim != out_dim {
                return Err(decode_err(at, "activation layer with in != out"));
            }
            LayerSpec::Activation {
                dim: in_dim,
                activation,
            }
        };
        layout.push(LayoutEntry { spec, offset, len });
    }
    Ok((layout, pos))
}

/// Draw fresh parameters for `layers` with the default scheme.
pub fn init_params(layers: &[LayerSpec], rng: &mut Rng) -> Result<ParamVector> {
    init_params_with(layers, InitScheme::default(), rng)
}

/// Draw fresh parameters, consuming `rng` layer by layer and, within a dense
/// layer, over the `[in x out]` weight block in row-major order.
pub fn init_params_with(
    layers: &[LayerSpec],
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<ParamVector> {
    let mut pv = ParamVector::zeros(layers)?;
    for i in 0..layers.len() {
        let LayerSpec::Dense { in_dim, out_dim } = layers[i] else {
            continue;
        };
        let limit = (6.0f32 / (in_dim + out_dim) as f32).sqrt();
        let (w, b) = pv.dense_parts_mut(i);
        for x in w.iter_mut() {
            *x = rng.uniform_range(-limit, limit);
        }
        if let InitScheme::GlorotUniformBias(range) = scheme {
            for x in b.iter_mut() {
                *x = rng.uniform_range(-range, range);
            }
        }
    }
    Ok(pv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(3, 4),
            LayerSpec::act(4, Activation::LeakyRelu(0.2)),
            LayerSpec::dense(4, 2),
            LayerSpec::act(2, Activation::Sigmoid),
        ]
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&mlp(), &mut Rng::new(9)).unwrap();
        let b = init_params(&mlp(), &mut Rng::new(9)).unwrap();
        assert!(a.bit_eq(&b));
        let c = init_params(&mlp(), &mut Rng::new(10)).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn default_init_zeroes_biases() {
        let p = init_params(&mlp(), &mut Rng::new(1)).unwrap();
        for i in [0, 2] {
            assert!(p.dense_parts(i).1.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn dense_two_to_three_is_bounded() {
        let p = init_params(&[LayerSpec::dense(2, 3)], &mut Rng::new(4)).unwrap();
        let (w, b) = p.dense_parts(0);
        assert_eq!(w.len(), 6);
        assert_eq!(b.len(), 3);
        let bound = (6.0f32 / 5.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn uniform_bias_scheme_fills_biases() {
        let mut rng = Rng::new(2);
        let p = init_params_with(&mlp(), InitScheme::GlorotUniformBias(0.05), &mut rng).unwrap();
        let b = p.dense_parts(0).1;
        assert!(b.iter().all(|x| x.abs() <= 0.05));
        assert!(b.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let bad = vec![LayerSpec::dense(3, 4), LayerSpec::dense(5, 1)];
        assert!(matches!(
            init_params(&bad, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
        assert!(init_params(&[], &mut Rng::new(0)).is_err());
    }

    #[test]
    fn layout_lengths_sum_to_len() {
        let p = ParamVector::zeros(&mlp()).unwrap();
        assert_eq!(p.layout().iter().map(|e| e.len).sum::<usize>(), p.len());
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let p = init_params(&mlp(), &mut Rng::new(3)).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), encoded_layout_len(4) + 4 * p.len());
        let (q, used) = ParamVector::decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert!(p.bit_eq(&q));
        assert!(ParamVector::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn leaky_slope_must_be_encodable() {
        let bad = [LayerSpec::dense(1, 1), LayerSpec::act(1, Activation::LeakyRelu(0.123_45))];
        assert!(validate_layers(&bad).is_err());
    }
}
