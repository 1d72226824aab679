//! Top-k sparsification of uploaded block deltas.
//!
//! Compression keeps the `k = ⌈ratio · d_b⌉` largest-magnitude entries of a
//! delta and zeroes the rest. It applies to the uploaded delta only; the
//! engine makes every client apply its *own compressed* delta locally and
//! subtract it in the correction, so the cross-client consistency identity
//! survives compression unchanged. There is no error-feedback accumulator.

use crate::{Error, Result};

/// Top-k settings. `ratio` is the kept fraction of block coordinates;
/// `index_bits`/`value_bits` only affect the billed payload size, never
/// the arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopKConfig {
    pub ratio: f64,
    pub index_bits: u32,
    pub value_bits: u32,
}

impl TopKConfig {
    /// 32-bit indices and values, which matches the 4-bytes-per-parameter
    /// wire format used for uncompressed payloads.
    pub fn new(ratio: f64) -> Result<Self> {
        let cfg = Self {
            ratio,
            index_bits: 32,
            value_bits: 32,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Input(format!(
                "top-k ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if self.index_bits == 0 || self.value_bits == 0 {
            return Err(Error::Input("index and value bit widths must be positive".into()));
        }
        Ok(())
    }

    /// Kept coordinate count for a block of dimension `d_b`.
    pub fn kept(&self, d_b: usize) -> usize {
        ((self.ratio * d_b as f64).ceil() as usize).clamp(1, d_b)
    }

    /// Billed payload size in bytes: `k · (index_bits + value_bits) / 8`.
    pub fn payload_bytes(&self, d_b: usize) -> f64 {
        self.kept(d_b) as f64 * f64::from(self.index_bits + self.value_bits) / 8.0
    }
}

/// Sparse representation of a compressed delta: parallel index/value lists
/// in ascending index order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDelta {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseDelta {
    /// Dense vector with zeros at dropped coordinates.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

/// Keep the `k = ⌈ratio·d_b⌉` entries of largest absolute value, ties
/// broken toward the lower index, and zero the rest.
pub fn topk_compress(delta: &[f64], cfg: &TopKConfig) -> Result<SparseDelta> {
    if delta.is_empty() {
        return Err(Error::Input("cannot compress an empty delta".into()));
    }
    cfg.validate()?;
    let k = cfg.kept(delta.len());
    let mut order: Vec<usize> = (0..delta.len()).collect();
    // Descending by magnitude; the index itself is the tie-breaker, so the
    // sort is total and the selection is deterministic.
    order.sort_unstable_by(|&a, &b| {
        delta[b]
            .abs()
            .partial_cmp(&delta[a].abs())
            .expect("finite comparison")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_unstable();
    let values = kept.iter().map(|&i| delta[i]).collect();
    Ok(SparseDelta {
        indices: kept,
        values,
        dim: delta.len(),
    })
}

/// Dense top-k result: `topk_compress` followed by `to_dense`.
pub fn topk_dense(delta: &[f64], cfg: &TopKConfig) -> Result<Vec<f64>> {
    Ok(topk_compress(delta, cfg)?.to_dense())
}
