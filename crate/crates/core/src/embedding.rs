//! Signed 8-bit query embeddings.
//!
//! Each vector is stored as one `f32` scale plus `dim` signed bytes, using
//! symmetric max-abs scaling: `scale = max|v| / 127`, `q = round(v / scale)`.
//! Cosine similarity is computed on the integer components directly; the
//! scales cancel, so only the integer dot product and the two integer norms
//! are needed at query time.
//!
//! On disk the vector travels as standard base64 (with padding) of
//!
//! ```text
//! dim: u32 LE | scale: f32 LE | values: dim x i8
//! ```

use std::hash::{DefaultHasher, Hash, Hasher};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use thiserror::Error;

pub const DEFAULT_DIM: usize = 768;

const HEADER_LEN: usize = 8;
const QMAX: f64 = 127.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot quantize an empty vector")]
    Empty,
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error("invalid base64: {0}")]
    Base64(String),
    #[error("payload is {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("scale must be positive and finite, got {0}")]
    Scale(f32),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("component {index} is -128, outside [-127, 127]")]
    ValueOutOfRange { index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedEmbedding {
    scale: f32,
    values: Vec<i8>,
    /// sqrt(sum q_i^2), i.e. the norm before scaling.
    int_norm: f64,
}

impl QuantizedEmbedding {
    /// Builds an embedding from raw parts. `values` must lie in [-127, 127].
    pub fn from_parts(scale: f32, values: Vec<i8>) -> Result<Self, PayloadError> {
        if values.is_empty() {
            return Err(PayloadError::ZeroDim);
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PayloadError::Scale(scale));
        }
        if let Some(index) = values.iter().position(|&v| v == i8::MIN) {
            return Err(PayloadError::ValueOutOfRange { index });
        }
        Ok(Self::from_parts_unchecked(scale, values))
    }

    fn from_parts_unchecked(scale: f32, values: Vec<i8>) -> Self {
        debug_assert!(!values.contains(&i8::MIN));
        let sq: i64 = values.iter().map(|&v| i64::from(v) * i64::from(v)).sum();
        Self { scale, values, int_norm: (sq as f64).sqrt() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// L2 norm of the dequantized vector.
    pub fn norm(&self) -> f64 {
        f64::from(self.scale) * self.int_norm
    }

    pub fn is_zero(&self) -> bool {
        self.int_norm == 0.0
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let s = f64::from(self.scale);
        self.values.iter().map(|&q| f64::from(q) * s).collect()
    }

    pub fn encode_payload(&self) -> String {
        STANDARD.encode(self.payload_bytes())
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.values.len());
        buf.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        buf.extend_from_slice(&self.scale.to_le_bytes());
        buf.extend(self.values.iter().map(|&v| v as u8));
        buf
    }

    pub fn decode_payload(text: &str) -> Result<Self, PayloadError> {
        let bytes = STANDARD.decode(text.trim()).map_err(|e| PayloadError::Base64(e.to_string()))?;
        Self::from_payload_bytes(&bytes)
    }

    pub fn from_payload_bytes(bytes: &[u8]) -> Result<Self, PayloadError> {
        if bytes.len() < HEADER_LEN {
            return Err(PayloadError::Length { expected: HEADER_LEN, actual: bytes.len() });
        }
        let dim = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let scale = f32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if dim == 0 {
            return Err(PayloadError::ZeroDim);
        }
        let expected = HEADER_LEN + dim;
        if bytes.len() != expected {
            return Err(PayloadError::Length { expected, actual: bytes.len() });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PayloadError::Scale(scale));
        }
        let values: Vec<i8> = bytes[HEADER_LEN..].iter().map(|&b| b as i8).collect();
        if let Some(index) = values.iter().position(|&v| v == i8::MIN) {
            return Err(PayloadError::ValueOutOfRange { index });
        }
        Ok(Self::from_parts_unchecked(scale, values))
    }
}

/// Quantizes a real vector to signed 8-bit with symmetric per-vector scaling.
///
/// The scale is rounded to `f32` before the components are divided by it, so
/// the dequantization error of every component is at most `scale / 2` with
/// respect to the stored scale. Ties round away from zero.
pub fn quantize<T: Copy + Into<f64>>(v: &[T]) -> Result<QuantizedEmbedding, EmbeddingError> {
    if v.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    let mut max_abs = 0.0f64;
    for (index, &x) in v.iter().enumerate() {
        let x: f64 = x.into();
        if !x.is_finite() {
            return Err(EmbeddingError::NonFinite { index });
        }
        max_abs = max_abs.max(x.abs());
    }
    if max_abs == 0.0 {
        return Ok(QuantizedEmbedding::from_parts_unchecked(1.0, vec![0; v.len()]));
    }
    let mut scale = (max_abs / QMAX) as f32;
    if scale == 0.0 {
        // max_abs below the f32 subnormal range
        scale = f32::from_bits(1);
    }
    let s = f64::from(scale);
    let values = v.iter().map(|&x| (x.into() / s).round().clamp(-QMAX, QMAX) as i8).collect();
    Ok(QuantizedEmbedding::from_parts_unchecked(scale, values))
}

/// Cosine similarity on the integer components. Zero vectors give 0.
pub fn cosine(a: &QuantizedEmbedding, b: &QuantizedEmbedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(cosine_same_dim(a, b))
}

pub(crate) fn cosine_same_dim(a: &QuantizedEmbedding, b: &QuantizedEmbedding) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    let dot = int_dot(&a.values, &b.values);
    (dot as f64 / (a.int_norm * b.int_norm)).clamp(-1.0, 1.0)
}

fn int_dot(a: &[i8], b: &[i8]) -> i64 {
    // i32 partial sums cannot overflow within a 4096-wide chunk.
    a.chunks(4096)
        .zip(b.chunks(4096))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum::<i32>() as i64)
        .sum()
}

/// Cosine similarity computed on the dequantized float vectors.
pub fn cosine_dequantized(a: &QuantizedEmbedding, b: &QuantizedEmbedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.dequantize().iter().zip(b.dequantize()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Immutable map from normalized query text to its embedding.
///
/// Open addressing with linear probing at load factor <= 1/2, so a lookup
/// touches an expected constant number of slots. All embeddings share one
/// dimension.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    keys: Vec<Box<str>>,
    embeddings: Vec<QuantizedEmbedding>,
    slots: Vec<u32>,
    mask: usize,
    dim: usize,
}

const EMPTY: u32 = u32::MAX;

impl EmbeddingTable {
    /// Builds the table. Later entries for the same query replace earlier ones.
    pub fn from_entries<I>(entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, QuantizedEmbedding)>,
    {
        let mut keys: Vec<Box<str>> = Vec::new();
        let mut embeddings: Vec<QuantizedEmbedding> = Vec::new();
        let mut positions = std::collections::HashMap::new();
        let mut dim = 0;
        for (key, emb) in entries {
            if dim == 0 {
                dim = emb.dim();
            } else if emb.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch { left: dim, right: emb.dim() });
            }
            match positions.get(&key) {
                Some(&i) => embeddings[i] = emb,
                None => {
                    positions.insert(key.clone(), keys.len());
                    keys.push(key.into_boxed_str());
                    embeddings.push(emb);
                }
            }
        }

        let capacity = (keys.len() * 2).next_power_of_two().max(8);
        let mask = capacity - 1;
        let mut slots = vec![EMPTY; capacity];
        for (i, key) in keys.iter().enumerate() {
            let mut slot = hash_key(key) as usize & mask;
            while slots[slot] != EMPTY {
                slot = (slot + 1) & mask;
            }
            slots[slot] = i as u32;
        }
        Ok(Self { keys, embeddings, slots, mask, dim })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Shared dimension of the stored embeddings, 0 when empty.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, query: &str) -> Option<&QuantizedEmbedding> {
        self.get_with_probes(query).0
    }

    /// Lookup that also reports how many slots were inspected.
    pub fn get_with_probes(&self, query: &str) -> (Option<&QuantizedEmbedding>, usize) {
        if self.slots.is_empty() {
            return (None, 0);
        }
        let mut slot = hash_key(query) as usize & self.mask;
        let mut probes = 0;
        loop {
            probes += 1;
            let idx = self.slots[slot];
            if idx == EMPTY {
                return (None, probes);
            }
            if &*self.keys[idx as usize] == query {
                return (Some(&self.embeddings[idx as usize]), probes);
            }
            slot = (slot + 1) & self.mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &QuantizedEmbedding)> {
        self.keys.iter().map(|k| &**k).zip(&self.embeddings)
    }
}

fn hash_key(key: &str) -> u64 {
    // DefaultHasher::new() uses fixed keys, so slot layout is reproducible.
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_fixture() {
        let q = quantize(&[1.0f64, -0.5, 0.0]).unwrap();
        assert_eq!(q.scale(), (1.0f64 / 127.0) as f32);
        assert_eq!(q.values(), &[127, -64, 0]);
        // independent scalar check of the tie: -0.5 / (1/127) sits on -63.5
        let s = f64::from((1.0f64 / 127.0) as f32);
        assert!((-0.5 / s + 63.5).abs() < 1e-5);
        assert_eq!((-63.5f64).round(), -64.0);
        let expected_norm = f64::from(q.scale()) * ((127i64 * 127 + 64 * 64) as f64).sqrt();
        assert!((q.norm() - expected_norm).abs() < 1e-12);
    }

    #[test]
    fn zero_vector() {
        let q = quantize(&[0.0f32; 3]).unwrap();
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.values(), &[0, 0, 0]);
        assert_eq!(q.norm(), 0.0);
        assert_eq!(cosine(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn quantize_rejects_bad_input() {
        assert_eq!(quantize::<f32>(&[]), Err(EmbeddingError::Empty));
        assert_eq!(quantize(&[1.0, f64::NAN]), Err(EmbeddingError::NonFinite { index: 1 }));
    }

    #[test]
    fn payload_layout_fixture() {
        let q = QuantizedEmbedding::from_parts(1.0, vec![1, 2, 3]).unwrap();
        let bytes = q.payload_bytes();
        assert_eq!(bytes.len(), 11);
        assert_eq!(&bytes[..4], &[3, 0, 0, 0]);
        assert_eq!(&bytes[4..8], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[8..], &[1, 2, 3]);
        let back = QuantizedEmbedding::decode_payload(&q.encode_payload()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn payload_errors_are_distinct() {
        let q = QuantizedEmbedding::from_parts(0.5, vec![1, -2, 3]).unwrap();
        let mut bytes = q.payload_bytes();
        bytes.pop();
        let truncated = STANDARD.encode(&bytes);
        assert_eq!(
            QuantizedEmbedding::decode_payload(&truncated),
            Err(PayloadError::Length { expected: 11, actual: 10 })
        );
        assert!(matches!(QuantizedEmbedding::decode_payload("not base64!"), Err(PayloadError::Base64(_))));
        let mut neg = q.payload_bytes();
        neg[4..8].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(QuantizedEmbedding::from_payload_bytes(&neg), Err(PayloadError::Scale(-1.0)));
        let mut zero = vec![0u8; 8];
        zero[4..8].copy_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(QuantizedEmbedding::from_payload_bytes(&zero), Err(PayloadError::ZeroDim));
        assert!(matches!(QuantizedEmbedding::from_payload_bytes(&[1, 2]), Err(PayloadError::Length { .. })));
    }

    #[test]
    fn orthogonal_basis_vectors() {
        let mut e1 = [0.0f32; 8];
        let mut e2 = [0.0f32; 8];
        e1[0] = 1.0;
        e2[1] = 1.0;
        let (a, b) = (quantize(&e1).unwrap(), quantize(&e2).unwrap());
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let a = quantize(&[1.0f32, 0.0]).unwrap();
        let b = quantize(&[1.0f32, 0.0, 0.0]).unwrap();
        assert_eq!(cosine(&a, &b), Err(EmbeddingError::DimensionMismatch { left: 2, right: 3 }));
        assert!(EmbeddingTable::from_entries(vec![("a".into(), a), ("b".into(), b)]).is_err());
    }

    #[test]
    fn table_lookup_and_last_wins() {
        let a = quantize(&[1.0f32, 0.0]).unwrap();
        let b = quantize(&[0.0f32, 1.0]).unwrap();
        let t = EmbeddingTable::from_entries(vec![
            ("milk".to_string(), a.clone()),
            ("eggs".to_string(), a.clone()),
            ("milk".to_string(), b.clone()),
        ])
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("milk"), Some(&b));
        assert_eq!(t.get("eggs"), Some(&a));
        assert_eq!(t.get("bread"), None);
        assert_eq!(EmbeddingTable::default().get("x"), None);
    }

    #[test]
    fn lookup_probe_count_is_bounded() {
        let n = 20_000;
        let e = quantize(&[1.0f32, 2.0]).unwrap();
        let t = EmbeddingTable::from_entries((0..n).map(|i| (format!("query {i}"), e.clone()))).unwrap();
        let mut total = 0usize;
        let mut worst = 0usize;
        for i in 0..n {
            let (hit, probes) = t.get_with_probes(&format!("query {i}"));
            assert!(hit.is_some());
            total += probes;
            worst = worst.max(probes);
        }
        let mean = total as f64 / n as f64;
        // linear probing at load <= 0.5: expected successful probes ~1.5
        assert!(mean < 2.0, "mean probes {mean}");
        let mut miss_total = 0usize;
        for i in 0..n {
            miss_total += t.get_with_probes(&format!("absent {i}")).1;
        }
        // expected unsuccessful probes ~2.5 at load 0.5
        assert!((miss_total as f64 / n as f64) < 4.0);
        assert!(worst < 64);
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn dequantization_error_within_half_step(v in arb_vec(32)) {
            let q = quantize(&v).unwrap();
            let s = f64::from(q.scale());
            for (x, y) in v.iter().zip(q.dequantize()) {
                prop_assert!((x - y).abs() <= s / 2.0);
            }
        }

        #[test]
        fn quantize_is_a_fixed_point(v in arb_vec(24)) {
            let q = quantize(&v).unwrap();
            let again = quantize(&q.dequantize()).unwrap();
            prop_assert_eq!(again, q);
        }

        #[test]
        fn codec_round_trip(v in arb_vec(17)) {
            let q = quantize(&v).unwrap();
            let text = q.encode_payload();
            let back = QuantizedEmbedding::decode_payload(&text).unwrap();
            prop_assert_eq!(back.scale().to_bits(), q.scale().to_bits());
            prop_assert_eq!(back.values(), q.values());
            prop_assert_eq!(back.encode_payload(), text);
        }

        #[test]
        fn cosine_symmetric_and_paths_agree(a in arb_vec(16), b in arb_vec(16)) {
            let (qa, qb) = (quantize(&a).unwrap(), quantize(&b).unwrap());
            let ab = cosine(&qa, &qb).unwrap();
            prop_assert_eq!(ab, cosine(&qb, &qa).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            let float_path = cosine_dequantized(&qa, &qb).unwrap();
            prop_assert!((ab - float_path).abs() <= 1e-6);
        }

        #[test]
        fn power_of_two_rescaling_is_exact(v in arb_vec(16), w in arb_vec(16), e in -20i32..20) {
            let k = 2f64.powi(e);
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let (qv, qk, qw) = (quantize(&v).unwrap(), quantize(&scaled).unwrap(), quantize(&w).unwrap());
            prop_assert_eq!(qv.values(), qk.values());
            prop_assert_eq!(cosine(&qv, &qw).unwrap(), cosine(&qk, &qw).unwrap());
        }

        #[test]
        fn arbitrary_rescaling_is_near_exact(v in arb_vec(16), w in arb_vec(16), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let (qv, qk, qw) = (quantize(&v).unwrap(), quantize(&scaled).unwrap(), quantize(&w).unwrap());
            // the f32 scale can round differently, shifting a half-step tie by one
            for (a, b) in qv.values().iter().zip(qk.values()) {
                prop_assert!((i16::from(*a) - i16::from(*b)).abs() <= 1);
            }
            prop_assert!((cosine(&qv, &qw).unwrap() - cosine(&qk, &qw).unwrap()).abs() < 1e-2);
        }
    }
}
