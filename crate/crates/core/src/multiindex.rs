//! Downward-closed sets of extended multi-indices `[alpha, beta]` and the
//! combination-technique coefficients attached to them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// `[alpha, beta]`: a fidelity level and one grid level per parameter.
///
/// Ordering is lexicographic on `alpha` then `beta`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExtMultiIndex {
    pub alpha: u32,
    pub beta: Vec<u32>,
}

impl ExtMultiIndex {
    pub fn new(alpha: u32, beta: Vec<u32>) -> Result<Self> {
        if alpha == 0 || beta.contains(&0) {
            return Err(Error::ZeroLevel);
        }
        Ok(ExtMultiIndex { alpha, beta })
    }

    /// `[1, (1, ..., 1)]`.
    pub fn root(dim: usize) -> Self {
        ExtMultiIndex {
            alpha: 1,
            beta: vec![1; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Component `k` of the extended index, `0` being `alpha`.
    fn component(&self, k: usize) -> u32 {
        if k == 0 {
            self.alpha
        } else {
            self.beta[k - 1]
        }
    }

    fn component_mut(&mut self, k: usize) -> &mut u32 {
        if k == 0 {
            &mut self.alpha
        } else {
            &mut self.beta[k - 1]
        }
    }

    /// Neighbours obtained by decrementing one component that exceeds 1.
    pub fn backward_neighbors(&self) -> impl Iterator<Item = ExtMultiIndex> + '_ {
        (0..=self.dim()).filter_map(move |k| {
            if self.component(k) <= 1 {
                return None;
            }
            let mut n = self.clone();
            *n.component_mut(k) -= 1;
            Some(n)
        })
    }

    pub fn forward_neighbors(&self) -> impl Iterator<Item = ExtMultiIndex> + '_ {
        (0..=self.dim()).map(move |k| {
            let mut n = self.clone();
            *n.component_mut(k) += 1;
            n
        })
    }

    fn offset(&self, i: u32, j: &[u32]) -> ExtMultiIndex {
        ExtMultiIndex {
            alpha: self.alpha + i,
            beta: self.beta.iter().zip(j).map(|(b, d)| b + d).collect(),
        }
    }
}

impl fmt::Display for ExtMultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},(", self.alpha)?;
        for (i, b) in self.beta.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str(")]")
    }
}

/// True iff every backward neighbour of every entry is itself an entry.
///
/// Checking immediate neighbours suffices: any smaller index is reachable
/// by a chain of single decrements.
pub fn is_downward_closed<'a, I>(entries: I) -> bool
where
    I: IntoIterator<Item = &'a ExtMultiIndex>,
{
    let set: BTreeSet<&ExtMultiIndex> = entries.into_iter().collect();
    set.iter()
        .all(|e| e.backward_neighbors().all(|n| set.contains(&n)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    entries: BTreeSet<ExtMultiIndex>,
}

impl MultiIndexSet {
    pub fn empty(dim: usize) -> Self {
        MultiIndexSet {
            dim,
            entries: BTreeSet::new(),
        }
    }

    /// `{[1, (1, ..., 1)]}`.
    pub fn root(dim: usize) -> Self {
        let mut s = Self::empty(dim);
        s.entries.insert(ExtMultiIndex::root(dim));
        s
    }

    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = ExtMultiIndex>,
    {
        let entries: BTreeSet<ExtMultiIndex> = entries.into_iter().collect();
        for e in &entries {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.dim(),
                });
            }
            if e.alpha == 0 || e.beta.contains(&0) {
                return Err(Error::ZeroLevel);
            }
        }
        if !is_downward_closed(&entries) {
            return Err(Error::NotDownwardClosed);
        }
        Ok(MultiIndexSet { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, idx: &ExtMultiIndex) -> bool {
        self.entries.contains(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExtMultiIndex> {
        self.entries.iter()
    }

    pub fn max_alpha(&self) -> u32 {
        self.entries.iter().map(|e| e.alpha).max().unwrap_or(0)
    }

    /// Inserts an index whose backward neighbours are all present.
    pub fn insert(&mut self, idx: ExtMultiIndex) -> Result<bool> {
        if idx.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: idx.dim(),
            });
        }
        if idx.alpha == 0 || idx.beta.contains(&0) {
            return Err(Error::ZeroLevel);
        }
        if !idx.backward_neighbors().all(|n| self.entries.contains(&n)) {
            return Err(Error::NotDownwardClosed);
        }
        Ok(self.entries.insert(idx))
    }

    /// `c_{alpha,beta} = sum over i in {0,1}, j in {0,1}^N with
    /// [alpha+i, beta+j] in I of (-1)^(i + |j|)`.
    ///
    /// Zero coefficients are omitted.
    pub fn combination_coefficients(&self) -> BTreeMap<ExtMultiIndex, i64> {
        let n = self.dim;
        let mut out = BTreeMap::new();
        let mut j = vec![0u32; n];
        for e in &self.entries {
            let mut c = 0i64;
            for mask in 0u64..(1u64 << (n + 1)) {
                let i = (mask & 1) as u32;
                for (d, jd) in j.iter_mut().enumerate() {
                    *jd = ((mask >> (d + 1)) & 1) as u32;
                }
                if self.entries.contains(&e.offset(i, &j)) {
                    let parity = mask.count_ones();
                    c += if parity % 2 == 0 { 1 } else { -1 };
                }
            }
            if c != 0 {
                out.insert(e.clone(), c);
            }
        }
        out
    }

    /// Indices outside the set whose backward neighbours all lie inside.
    pub fn reduced_margin(&self) -> BTreeSet<ExtMultiIndex> {
        if self.entries.is_empty() {
            let mut s = BTreeSet::new();
            s.insert(ExtMultiIndex::root(self.dim));
            return s;
        }
        let mut out = BTreeSet::new();
        for e in &self.entries {
            for cand in e.forward_neighbors() {
                if !self.entries.contains(&cand)
                    && cand.backward_neighbors().all(|n| self.entries.contains(&n))
                {
                    out.insert(cand);
                }
            }
        }
        out
    }
}
