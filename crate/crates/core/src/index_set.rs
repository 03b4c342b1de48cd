// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, duplicate-free set of positions drawn from `0..universe_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    universe_size: usize,
}

impl IndexSet {
    /// Builds a set from arbitrary positions; sorts and dedups them.
    pub fn new(mut indices: Vec<usize>, universe_size: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= universe_size {
                return Err(Error::DimensionMismatch(format!(
                    "index {last} outside universe of size {universe_size}"
                )));
            }
        }
        Ok(Self {
            indices,
            universe_size,
        })
    }

    pub fn empty(universe_size: usize) -> Self {
        Self {
            indices: Vec::new(),
            universe_size,
        }
    }

    pub fn full(universe_size: usize) -> Self {
        Self {
            indices: (0..universe_size).collect(),
            universe_size,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn intersection_len(&self, other: &IndexSet) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.intersection_len(other) == self.len()
    }
}
