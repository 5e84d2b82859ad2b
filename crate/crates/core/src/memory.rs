//! Perception snapshots and action recordings.
//!
//! State equivalence is coarse: a [`StateKey`] is the intent class plus each
//! slice's occupancy floored to a decile. Cached admissions carry the free-RB
//! count they were made under and are only served while the live slice is at
//! least that free.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::domain::{Mbps, SliceKind};
use crate::perception::Observation;
use crate::planning::Subtask;

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub intent_class: String,
    pub occupancy_buckets: Vec<(SliceKind, u8)>,
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.intent_class)?;
        for (kind, bucket) in &self.occupancy_buckets {
            write!(f, "|{kind}:{bucket}")?;
        }
        Ok(())
    }
}

/// `floor(occupancy * 10) * 10`, clamped to `[0, 100]`.
pub fn occupancy_bucket(occupancy: f64) -> u8 {
    let decile = libm::floor(occupancy * 10.0).clamp(0.0, 10.0);
    decile as u8 * 10
}

pub fn make_key(obs: &Observation, intent_class: &str) -> StateKey {
    StateKey {
        intent_class: intent_class.into(),
        occupancy_buckets: obs
            .slices
            .iter()
            .map(|s| (s.kind, occupancy_bucket(s.occupancy)))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordOutcome {
    Success,
    Failure(String),
}

impl RecordOutcome {
    pub fn is_failure(&self) -> bool {
        matches!(self, RecordOutcome::Failure(_))
    }
}

impl fmt::Display for RecordOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordOutcome::Success => f.write_str("success"),
            RecordOutcome::Failure(reason) => write!(f, "failure:{reason}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRecord {
    pub key: StateKey,
    pub subtask: Subtask,
    pub decision_digest: String,
    pub outcome: RecordOutcome,
    pub arrival_index: u64,
}

/// A remembered direct admission, valid only while the slice has at least `free_at_store` free RBs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CachedOutcome {
    pub slice: SliceKind,
    pub rate: Mbps,
    pub rbs: u32,
    pub free_at_store: u32,
}

impl CachedOutcome {
    pub fn valid_for(&self, obs: &Observation) -> bool {
        obs.free_rbs(self.slice) >= self.free_at_store.max(self.rbs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryStore {
    perception: BTreeMap<StateKey, CachedOutcome>,
    log: VecDeque<ActionRecord>,
    capacity: usize,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "memory capacity must be positive");
        Self {
            perception: BTreeMap::new(),
            log: VecDeque::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends to the action log, evicting the oldest record at capacity.
    pub fn record(&mut self, rec: ActionRecord) {
        if self.log.len() == self.capacity {
            self.log.pop_front();
        }
        self.log.push_back(rec);
    }

    pub fn log(&self) -> impl ExactSizeIterator<Item = &ActionRecord> + DoubleEndedIterator {
        self.log.iter()
    }

    pub fn last(&self) -> Option<&ActionRecord> {
        self.log.back()
    }

    pub fn failed_before(&self, key: &StateKey, decision_digest: &str) -> bool {
        self.log
            .iter()
            .any(|r| r.outcome.is_failure() && r.decision_digest == decision_digest && &r.key == key)
    }

    pub fn store_outcome(&mut self, key: StateKey, cached: CachedOutcome) {
        self.perception.insert(key, cached);
    }

    pub fn cached_outcome(&self, key: &StateKey) -> Option<&CachedOutcome> {
        self.perception.get(key)
    }

    pub fn perception_entries(&self) -> usize {
        self.perception.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::SliceStatus;
    use alloc::format;

    fn obs(embb: f64, urllc: f64) -> Observation {
        let status = |kind, occ: f64, total: u32| {
            let used = libm::round(occ * f64::from(total)) as u32;
            SliceStatus {
                kind,
                occupancy: occ,
                used_rbs: used,
                free_rbs: total - used,
                total_rbs: total,
            }
        };
        Observation {
            total_users: 0,
            slices: alloc::vec![status(SliceKind::Urllc, urllc, 30), status(SliceKind::Embb, embb, 90)],
        }
    }

    fn rec(i: u64, digest: &str, outcome: RecordOutcome) -> ActionRecord {
        ActionRecord {
            key: make_key(&obs(0.5, 0.5), "4K video"),
            subtask: Subtask::SliceOptimization,
            decision_digest: digest.into(),
            outcome,
            arrival_index: i,
        }
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(occupancy_bucket(0.733), 70);
        assert_eq!(occupancy_bucket(1.0), 100);
        assert_eq!(occupancy_bucket(0.0), 0);
        assert_eq!(make_key(&obs(0.1, 0.71), "x"), make_key(&obs(0.1, 0.79), "x"));
        assert_ne!(make_key(&obs(0.1, 0.71), "x"), make_key(&obs(0.1, 0.71), "y"));
    }

    #[test]
    fn bucket_oracle_over_grid() {
        // Independent route: count how many whole tenths fit below the value.
        for n in 0..=1000u32 {
            let occ = f64::from(n) / 1000.0;
            let mut tenths = 0u8;
            while tenths < 10 && f64::from(tenths + 1) / 10.0 <= occ + 1e-12 {
                tenths += 1;
            }
            assert_eq!(occupancy_bucket(occ), tenths * 10, "occ={occ}");
        }
    }

    #[test]
    fn record_and_read_back() {
        let mut store = MemoryStore::new();
        let r = rec(1, "d", RecordOutcome::Success);
        store.record(r.clone());
        assert_eq!(store.last(), Some(&r));
    }

    #[test]
    fn fifo_eviction() {
        let mut store = MemoryStore::with_capacity(2);
        for i in 0..3 {
            store.record(rec(i, "d", RecordOutcome::Success));
        }
        let idx: Vec<u64> = store.log().map(|r| r.arrival_index).collect();
        assert_eq!(idx, [1, 2]);
    }

    #[test]
    fn thousand_records_keep_insertion_order() {
        let mut store = MemoryStore::new();
        let mut expected = Vec::new();
        // xorshift sequence as an independent index source
        let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
        for _ in 0..1000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            expected.push(x);
            store.record(rec(x, &format!("d{}", x % 7), RecordOutcome::Success));
        }
        let got: Vec<u64> = store.log().map(|r| r.arrival_index).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn failed_before_exact_match() {
        let mut store = MemoryStore::new();
        let key = make_key(&obs(0.5, 0.5), "4K video");
        assert!(!store.failed_before(&key, "D"));
        store.record(rec(1, "D", RecordOutcome::Failure("no plan".into())));
        store.record(rec(2, "E", RecordOutcome::Success));
        assert!(store.failed_before(&key, "D"));
        assert!(!store.failed_before(&key, "E"));
        assert!(!store.failed_before(&key, "D2"));
        let other = make_key(&obs(0.9, 0.5), "4K video");
        assert!(!store.failed_before(&other, "D"));

        let oracle = |k: &StateKey, d: &str| {
            store
                .log()
                .filter(|r| &r.key == k && r.decision_digest == d)
                .any(|r| matches!(r.outcome, RecordOutcome::Failure(_)))
        };
        for d in ["D", "E", "F"] {
            assert_eq!(store.failed_before(&key, d), oracle(&key, d));
        }
    }

    #[test]
    fn eviction_forgets_failures() {
        let mut store = MemoryStore::with_capacity(1);
        let key = make_key(&obs(0.5, 0.5), "4K video");
        store.record(rec(1, "D", RecordOutcome::Failure("x".into())));
        store.record(rec(2, "E", RecordOutcome::Success));
        assert!(!store.failed_before(&key, "D"));
    }

    #[test]
    fn cache_lookup_and_validity() {
        let mut store = MemoryStore::new();
        let live = obs(0.5, 0.5);
        let key = make_key(&live, "4K video");
        assert!(store.cached_outcome(&key).is_none());
        let cached = CachedOutcome {
            slice: SliceKind::Embb,
            rate: Mbps(12),
            rbs: 12,
            free_at_store: 45,
        };
        store.store_outcome(key.clone(), cached);
        assert_eq!(store.cached_outcome(&key), Some(&cached));
        assert!(cached.valid_for(&live));
        // same decile, fewer free RBs than at store time
        let tighter = obs(0.55, 0.5);
        assert_eq!(make_key(&tighter, "4K video"), key);
        assert!(tighter.free_rbs(SliceKind::Embb) < cached.free_at_store);
        assert!(!cached.valid_for(&tighter));
    }
}
