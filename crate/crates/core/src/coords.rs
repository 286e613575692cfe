//! Finite coordinate sets `u ⊂ ℕ = {1, 2, ...}`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A finite set of (1-based) coordinate indices, kept sorted and deduplicated.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoordSet(Vec<u32>);

impl CoordSet {
    pub fn empty() -> Self {
        CoordSet(Vec::new())
    }

    /// Builds a set from arbitrary indices. Index 0 is not a coordinate and panics.
    pub fn new<I: IntoIterator<Item = u32>>(items: I) -> Self {
        let mut v: Vec<u32> = items.into_iter().collect();
        assert!(v.iter().all(|&j| j >= 1), "coordinates are 1-based");
        v.sort_unstable();
        v.dedup();
        CoordSet(v)
    }

    /// `{1, ..., d}`
    pub fn range(d: u32) -> Self {
        CoordSet((1..=d).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, j: u32) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn max(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn is_subset(&self, other: &CoordSet) -> bool {
        let mut it = other.0.iter();
        'outer: for &j in &self.0 {
            for &k in it.by_ref() {
                if k == j {
                    continue 'outer;
                }
                if k > j {
                    return false;
                }
            }
            return false;
        }
        true
    }

    pub fn intersects(&self, other: &CoordSet) -> bool {
        let (mut i, mut k) = (0, 0);
        while i < self.0.len() && k < other.0.len() {
            match self.0[i].cmp(&other.0[k]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => k += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn union(&self, other: &CoordSet) -> CoordSet {
        CoordSet::new(self.iter().chain(other.iter()))
    }

    pub fn intersection(&self, other: &CoordSet) -> CoordSet {
        CoordSet(self.iter().filter(|&j| other.contains(j)).collect())
    }

    pub fn difference(&self, other: &CoordSet) -> CoordSet {
        CoordSet(self.iter().filter(|&j| !other.contains(j)).collect())
    }

    /// `self ∪ {j}`; `j` must exceed every element (keeps the vector sorted cheaply).
    pub fn extended(&self, j: u32) -> CoordSet {
        debug_assert!(self.max().is_none_or(|m| m < j));
        let mut v = self.0.clone();
        v.push(j);
        CoordSet(v)
    }

    /// Subset selected by the bits of `mask` (bit `i` picks the `i`-th smallest element).
    pub fn subset_by_mask(&self, mask: u64) -> CoordSet {
        CoordSet(
            self.0
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &j)| j)
                .collect(),
        )
    }

    /// All `2^|u|` subsets, ordered by bitmask.
    pub fn subsets(&self) -> impl Iterator<Item = CoordSet> + '_ {
        assert!(self.len() < 64);
        (0..1u64 << self.len()).map(move |mask| self.subset_by_mask(mask))
    }
}

impl fmt::Debug for CoordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for CoordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str("}")
    }
}

impl FromIterator<u32> for CoordSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        CoordSet::new(iter)
    }
}

impl<const N: usize> From<[u32; N]> for CoordSet {
    fn from(a: [u32; N]) -> Self {
        CoordSet::new(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_relations() {
        let a = CoordSet::from([1, 3]);
        let b = CoordSet::from([1, 2, 3]);
        assert!(a.is_subset(&b));
        assert!(!b.is_subset(&a));
        assert!(CoordSet::empty().is_subset(&a));
        assert!(!CoordSet::from([4]).is_subset(&b));
        assert!(a.intersects(&b));
        assert!(!CoordSet::from([2]).intersects(&a));
        assert_eq!(b.difference(&a), CoordSet::from([2]));
        assert_eq!(b.subsets().count(), 8);
    }

    #[test]
    fn display() {
        assert_eq!(CoordSet::from([2, 1]).to_string(), "{1,2}");
        assert_eq!(CoordSet::empty().to_string(), "{}");
    }
}
