//! Capacity-bounded replay store with reward-threshold admission and
//! stratified sampling.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gfn::Trajectory;

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayItem {
    pub terminal: Vec<f64>,
    pub reward: f64,
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    threshold: f64,
    /// Oldest first; the `u64` is the insertion sequence number.
    entries: VecDeque<(u64, ReplayItem)>,
    next_seq: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, threshold: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be at least 1".into()));
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter("replay threshold must be finite".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            threshold,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            next_seq: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Stores `item` unless its reward is at or below the threshold (or not a
    /// number). Returns whether it was stored.
    pub fn push(&mut self, item: ReplayItem) -> bool {
        if !(item.reward > self.threshold) {
            return false;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((self.next_seq, item));
        self.next_seq += 1;
        true
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &ReplayItem> {
        self.entries.iter().map(|(_, it)| it)
    }

    /// Positions (oldest = 0) ordered from highest to lowest reward; equal
    /// rewards keep insertion order, so the older entry ranks higher.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, ia) = &self.entries[a];
            let (sb, ib) = &self.entries[b];
            ib.reward.total_cmp(&ia.reward).then(sa.cmp(sb))
        });
        order
    }

    /// Size of the top stratum, `⌈0.3·size⌉`, in integer arithmetic.
    pub fn upper_stratum_len(size: usize) -> usize {
        (3 * size).div_ceil(10)
    }

    /// Indices of `b` draws: `⌈b/2⌉` uniform from the top 30% by reward,
    /// then `⌊b/2⌋` uniform from the rest, with replacement. Falls back to
    /// uniform over everything when either stratum is empty.
    pub fn sample_indices<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<usize>> {
        let size = self.entries.len();
        if size == 0 {
            return Err(Error::EmptyBuffer);
        }
        let upper = Self::upper_stratum_len(size);
        if upper == 0 || upper == size {
            return Ok((0..b).map(|_| rng.random_range(0..size)).collect());
        }
        let rank = self.ranking();
        let (top, bottom) = rank.split_at(upper);
        let n_top = b.div_ceil(2);
        let mut out = Vec::with_capacity(b);
        out.extend((0..n_top).map(|_| top[rng.random_range(0..top.len())]));
        out.extend((n_top..b).map(|_| bottom[rng.random_range(0..bottom.len())]));
        Ok(out)
    }

    pub fn sample_biased<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<&ReplayItem>> {
        Ok(self
            .sample_indices(b, rng)?
            .into_iter()
            .map(|i| &self.entries[i].1)
            .collect())
    }
}
