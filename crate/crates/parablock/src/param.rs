//! Flat parameter vectors and disjoint block partitions.
//!
//! Every algorithm in this crate manipulates a single flat `f64` vector
//! through block views: contiguous index ranges that are pairwise disjoint
//! and cover `[0, d)`. Views alias the vector's storage, so block
//! operations are zero-copy and cross-check exactly against full-vector
//! arithmetic. Parameters are 64-bit throughout; the identity checks in
//! the test suite rely on the resulting tight tolerances.

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// ParamVector
// ---------------------------------------------------------------------------

/// Flat model parameter vector of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wrap an owned value vector.
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// All-zero vector of dimension `d`.
    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    /// Total dimension `d`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// True when every entry is finite (no NaN, no infinities).
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Squared Euclidean norm over the whole vector.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    /// Read-only view of block `b`.
    ///
    /// Writes through the mutable variant touch exactly the indices of
    /// `b`'s range and nothing else; everything outside stays bit-identical.
    pub fn block_view(&self, p: &BlockPartition, b: BlockId) -> Result<&[f64]> {
        let (start, end) = p.checked_range(b, self.dim())?;
        Ok(&self.values[start..end])
    }

    /// Mutable view of block `b`.
    pub fn block_view_mut(&mut self, p: &BlockPartition, b: BlockId) -> Result<&mut [f64]> {
        let (start, end) = p.checked_range(b, self.dim())?;
        Ok(&mut self.values[start..end])
    }

    /// In-place `[self]_b += alpha * delta` over block `b`.
    pub fn block_axpy(
        &mut self,
        p: &BlockPartition,
        b: BlockId,
        alpha: f64,
        delta: &[f64],
    ) -> Result<()> {
        let view = self.block_view_mut(p, b)?;
        if view.len() != delta.len() {
            return Err(Error::Shape(format!(
                "block {} has dimension {}, delta has dimension {}",
                b,
                view.len(),
                delta.len()
            )));
        }
        for (x, d) in view.iter_mut().zip(delta) {
            *x += alpha * d;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// BlockId
// ---------------------------------------------------------------------------

/// One-based block index into a [`BlockPartition`].
///
/// Block ids are 1..=B everywhere in this crate, including trace output;
/// `index0` gives the zero-based position for slice lookups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(usize);

impl BlockId {
    /// Wrap a one-based block number. `b` must be ≥ 1; range against a
    /// concrete partition is checked at use sites.
    pub fn new(b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::Partition("block ids are one-based; got 0".into()));
        }
        Ok(Self(b))
    }

    /// One-based block number.
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based position in the partition's block list.
    #[inline]
    pub fn index0(self) -> usize {
        self.0 - 1
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// BlockPartition
// ---------------------------------------------------------------------------

/// Ordered list of `[start, end)` index ranges, pairwise disjoint, whose
/// union is exactly `[0, d)`. The list order defines the block ids, so an
/// explicit partition may list its ranges out of positional order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    ranges: Vec<(usize, usize)>,
    d: usize,
}

impl BlockPartition {
    /// `B` near-equal blocks over `[0, d)`: each gets `⌊d/B⌋` indices and
    /// the remainder is folded into the last block.
    pub fn equal(d: usize, b: usize) -> Result<Self> {
        if d == 0 || b == 0 {
            return Err(Error::Partition(format!(
                "dimension and block count must be positive (d={d}, B={b})"
            )));
        }
        if b > d {
            return Err(Error::Partition(format!(
                "cannot split {d} coordinates into {b} nonempty blocks"
            )));
        }
        let base = d / b;
        let mut ranges = Vec::with_capacity(b);
        for i in 0..b {
            let start = i * base;
            let end = if i + 1 == b { d } else { (i + 1) * base };
            ranges.push((start, end));
        }
        Ok(Self { ranges, d })
    }

    /// One block per layer: `layer_dims` are consecutive block sizes and
    /// their prefix sums become the range boundaries.
    pub fn by_layer(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.is_empty() {
            return Err(Error::Partition("no layers given".into()));
        }
        let mut ranges = Vec::with_capacity(layer_dims.len());
        let mut start = 0usize;
        for (i, &dim) in layer_dims.iter().enumerate() {
            if dim == 0 {
                return Err(Error::Partition(format!("layer {i} has zero dimension")));
            }
            ranges.push((start, start + dim));
            start += dim;
        }
        Ok(Self { ranges, d: start })
    }

    /// Explicit ranges over `[0, d)`. Rejects empty ranges, overlaps, and
    /// gaps. The given order defines the block ids.
    pub fn explicit(d: usize, ranges: &[(usize, usize)]) -> Result<Self> {
        if d == 0 {
            return Err(Error::Partition("dimension must be positive".into()));
        }
        if ranges.is_empty() {
            return Err(Error::Partition("no ranges given".into()));
        }
        for &(s, e) in ranges {
            if s >= e {
                return Err(Error::Partition(format!("empty or inverted range [{s},{e})")));
            }
            if e > d {
                return Err(Error::Partition(format!(
                    "range [{s},{e}) exceeds dimension {d}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize)> = ranges.to_vec();
        sorted.sort_unstable();
        let mut cursor = 0usize;
        for &(s, e) in &sorted {
            if s < cursor {
                return Err(Error::Partition(format!(
                    "range [{s},{e}) overlaps an earlier range"
                )));
            }
            if s > cursor {
                return Err(Error::Partition(format!(
                    "gap: indices [{cursor},{s}) belong to no block"
                )));
            }
            cursor = e;
        }
        if cursor != d {
            return Err(Error::Partition(format!(
                "gap: indices [{cursor},{d}) belong to no block"
            )));
        }
        Ok(Self { ranges: ranges.to_vec(), d })
    }

    /// Number of blocks `B`.
    #[inline]
    pub fn num_blocks(&self) -> usize {
        self.ranges.len()
    }

    /// Covered dimension `d`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Dimension `d_b` of block `b`.
    pub fn block_dim(&self, b: BlockId) -> Result<usize> {
        let (s, e) = self.range(b)?;
        Ok(e - s)
    }

    /// `[start, end)` range of block `b`.
    pub fn range(&self, b: BlockId) -> Result<(usize, usize)> {
        self.ranges
            .get(b.index0())
            .copied()
            .ok_or_else(|| {
                Error::Partition(format!(
                    "block {} out of range for a partition of {} blocks",
                    b,
                    self.num_blocks()
                ))
            })
    }

    /// All block ids in order, 1..=B.
    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        (1..=self.num_blocks()).map(BlockId)
    }

    fn checked_range(&self, b: BlockId, vec_dim: usize) -> Result<(usize, usize)> {
        if vec_dim != self.d {
            return Err(Error::Shape(format!(
                "partition covers dimension {}, vector has dimension {}",
                self.d, vec_dim
            )));
        }
        self.range(b)
    }
}

// ---------------------------------------------------------------------------
// Block-decomposed reductions
// ---------------------------------------------------------------------------

/// `Σ_b ||[v]_b||²`. Equals `||v||²` up to summation-order rounding
/// (relative 1e-12 in the test contract).
pub fn block_norm_sq_sum(v: &ParamVector, p: &BlockPartition) -> Result<f64> {
    let mut total = 0.0;
    for b in p.block_ids() {
        let view = v.block_view(p, b)?;
        total += view.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(total)
}

/// `Σ_b ⟨[u]_b, [v]_b⟩`. Equals `⟨u, v⟩` up to summation-order rounding.
pub fn block_dot_sum(u: &ParamVector, v: &ParamVector, p: &BlockPartition) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Shape(format!(
            "dot of dimension {} against dimension {}",
            u.dim(),
            v.dim()
        )));
    }
    let mut total = 0.0;
    for b in p.block_ids() {
        let ub = u.block_view(p, b)?;
        let vb = v.block_view(p, b)?;
        total += ub.iter().zip(vb).map(|(a, c)| a * c).sum::<f64>();
    }
    Ok(total)
}

/// Relative agreement helper used across the test suites: `|a - b|`
/// measured against `max(1, |a|, |b|)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}
