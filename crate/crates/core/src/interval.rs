//! Sorted set of disjoint half-open `u64` intervals with first-fit carving.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Range;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntervalSet {
    // start -> end, non-adjacent and non-overlapping
    spans: BTreeMap<u64, u64>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_range(r: Range<u64>) -> Self {
        let mut s = Self::new();
        s.insert(r);
        s
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.spans.iter().map(|(s, e)| e - s).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = Range<u64>> + '_ {
        self.spans.iter().map(|(&s, &e)| s..e)
    }

    pub fn to_vec(&self) -> Vec<Range<u64>> {
        self.iter().collect()
    }

    /// True if `r` lies entirely inside one stored interval.
    pub fn contains_range(&self, r: &Range<u64>) -> bool {
        if r.start >= r.end {
            return false;
        }
        match self.spans.range(..=r.start).next_back() {
            Some((_, &end)) => r.end <= end,
            None => false,
        }
    }

    pub fn overlaps(&self, r: &Range<u64>) -> bool {
        if r.start >= r.end {
            return false;
        }
        if let Some((_, &end)) = self.spans.range(..=r.start).next_back() {
            if end > r.start {
                return true;
            }
        }
        self.spans.range(r.start..r.end).next().is_some()
    }

    /// Add `r`, merging with neighbours. Returns false (and changes nothing) if
    /// `r` overlaps an existing interval.
    pub fn insert(&mut self, r: Range<u64>) -> bool {
        if r.start >= r.end || self.overlaps(&r) {
            return false;
        }
        let mut start = r.start;
        let mut end = r.end;
        if let Some((&ps, &pe)) = self.spans.range(..start).next_back() {
            if pe == start {
                self.spans.remove(&ps);
                start = ps;
            }
        }
        if let Some(ne) = self.spans.remove(&end) {
            end = ne;
        }
        self.spans.insert(start, end);
        true
    }

    /// Remove `r`, which must lie within a single stored interval.
    pub fn remove(&mut self, r: Range<u64>) -> bool {
        if !self.contains_range(&r) {
            return false;
        }
        let (&s, &e) = self.spans.range(..=r.start).next_back().unwrap();
        self.spans.remove(&s);
        if s < r.start {
            self.spans.insert(s, r.start);
        }
        if r.end < e {
            self.spans.insert(r.end, e);
        }
        true
    }

    /// Lowest `align`-aligned start where `size` bytes fit.
    pub fn find_first_fit(&self, size: u64, align: u64) -> Option<u64> {
        debug_assert!(align.is_power_of_two());
        if size == 0 {
            return None;
        }
        self.iter().find_map(|r| {
            let start = r.start.checked_add(align - 1)? & !(align - 1);
            (start.checked_add(size)? <= r.end).then_some(start)
        })
    }

    /// Carve the lowest-addressed fitting range out of the set.
    pub fn alloc_first_fit(&mut self, size: u64, align: u64) -> Option<Range<u64>> {
        let start = self.find_first_fit(size, align)?;
        let r = start..start + size;
        self.remove(r.clone());
        Some(r)
    }
}
