// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense square attention matrix and the response-row interval.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `N x N` row-major matrix of attention weights.
///
/// Entry `(t, s)` is the attention query position `t` pays to key position
/// `s`. Construction does not enforce causality or row sums; those are
/// checked by [`crate::tensor_io::validate_stack`] so violations can be
/// reported instead of silently repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    n: usize,
    data: Vec<f64>,
}

impl AttentionMap {
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimensionMismatch("map size must be positive".into()));
        }
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} weights for N={n}, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {t} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(n, data)
    }

    /// Sequence length `N`.
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.n + s]
    }

    #[inline]
    pub fn set(&mut self, t: usize, s: usize, value: f64) {
        self.data[t * self.n + s] = value;
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Half-open interval of response positions `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRange {
    pub start: usize,
    pub end: usize,
}

impl ResponseRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end
    }

    pub fn iter(&self) -> Range<usize> {
        self.start..self.end
    }

    /// Fails with `empty-response-range` when the interval is empty or
    /// reaches past a sequence of length `n`.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyResponseRange);
        }
        if self.end > n {
            return Err(Error::DimensionMismatch(format!(
                "response range {}..{} exceeds sequence length {n}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}
