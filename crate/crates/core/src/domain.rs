//! Value types and resource-block arithmetic shared by every other module.
//!
//! A [`SliceLedger`] is the capacity-safety anchor: every mutation goes
//! through [`SliceLedger::admit`] / [`SliceLedger::release`], and neither can
//! leave the ledger holding more RBs than its budget.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Data rate on the integer Mb/s grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mbps(pub u32);

impl Mbps {
    pub const fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Mbps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed interval of rates, `1 <= min <= max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RateRange {
    min: Mbps,
    max: Mbps,
}

impl RateRange {
    pub fn new(min: u32, max: u32) -> Result<Self, DomainError> {
        if min < 1 || min > max {
            return Err(DomainError::InvalidRange { min, max });
        }
        Ok(Self {
            min: Mbps(min),
            max: Mbps(max),
        })
    }

    pub fn min(&self) -> Mbps {
        self.min
    }

    pub fn max(&self) -> Mbps {
        self.max
    }

    pub fn contains(&self, rate: Mbps) -> bool {
        self.min <= rate && rate <= self.max
    }

    /// Intersection of two ranges, if non-empty.
    pub fn overlap(&self, other: &RateRange) -> Option<RateRange> {
        let lo = self.min.max(other.min);
        let hi = self.max.min(other.max);
        (lo <= hi).then_some(RateRange { min: lo, max: hi })
    }
}

impl fmt::Display for RateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.min, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SliceKind {
    Urllc,
    Embb,
}

impl SliceKind {
    pub const ALL: [SliceKind; 2] = [SliceKind::Urllc, SliceKind::Embb];

    pub fn as_str(self) -> &'static str {
        match self {
            SliceKind::Urllc => "URLLC",
            SliceKind::Embb => "eMBB",
        }
    }

    pub fn parse(s: &str) -> Option<SliceKind> {
        match s {
            _ if s.eq_ignore_ascii_case("urllc") => Some(SliceKind::Urllc),
            _ if s.eq_ignore_ascii_case("embb") => Some(SliceKind::Embb),
            _ => None,
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SliceConfig {
    pub kind: SliceKind,
    pub total_rbs: u32,
    pub decision_range: RateRange,
    pub latency_bound_ms: u32,
    pub rb_rate: Mbps,
}

impl SliceConfig {
    pub fn urllc() -> Self {
        Self {
            kind: SliceKind::Urllc,
            total_rbs: 30,
            decision_range: RateRange {
                min: Mbps(1),
                max: Mbps(5),
            },
            latency_bound_ms: 5,
            rb_rate: Mbps(1),
        }
    }

    pub fn embb() -> Self {
        Self {
            kind: SliceKind::Embb,
            total_rbs: 90,
            decision_range: RateRange {
                min: Mbps(5),
                max: Mbps(20),
            },
            latency_bound_ms: 50,
            rb_rate: Mbps(1),
        }
    }

    /// The default two-slice deployment: URLLC 30 RBs on [1,5], eMBB 90 RBs on [5,20].
    pub fn defaults() -> Vec<SliceConfig> {
        alloc::vec![Self::urllc(), Self::embb()]
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.total_rbs == 0 {
            return Err(DomainError::InvalidConfig("total_rbs must be positive"));
        }
        if self.rb_rate.0 == 0 {
            return Err(DomainError::InvalidConfig("rb_rate must be positive"));
        }
        if self.latency_bound_ms == 0 {
            return Err(DomainError::InvalidConfig("latency bound must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn within_square(&self, side: f64) -> bool {
        (0.0..=side).contains(&self.x) && (0.0..=side).contains(&self.y)
    }
}

/// Why an arrival ended without an allocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RejectReason {
    UnknownIntent,
    NoEligibleSlice,
    CapBelowMin,
    NoFeasiblePlan,
    ReflectionBudget,
    RepeatedFailure,
    QosViolation,
    /// Baseline controller: the drawn rate did not fit.
    InsufficientRbs,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::UnknownIntent => "unknown_intent",
            RejectReason::NoEligibleSlice => "no_eligible_slice",
            RejectReason::CapBelowMin => "cap_below_min",
            RejectReason::NoFeasiblePlan => "no_feasible_plan",
            RejectReason::ReflectionBudget => "reflection_budget",
            RejectReason::RepeatedFailure => "repeated_failure",
            RejectReason::QosViolation => "qos_violation",
            RejectReason::InsufficientRbs => "insufficient_rbs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "unknown_intent" => RejectReason::UnknownIntent,
            "no_eligible_slice" => RejectReason::NoEligibleSlice,
            "cap_below_min" => RejectReason::CapBelowMin,
            "no_feasible_plan" => RejectReason::NoFeasiblePlan,
            "reflection_budget" => RejectReason::ReflectionBudget,
            "repeated_failure" => RejectReason::RepeatedFailure,
            "qos_violation" => RejectReason::QosViolation,
            "insufficient_rbs" => RejectReason::InsufficientRbs,
            _ => return None,
        })
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("rate must be at least 1 Mb/s")]
    ZeroRate,
    #[error("invalid rate range [{min},{max}]")]
    InvalidRange { min: u32, max: u32 },
    #[error("slice {slice} needs {needed} RBs but only {free} are free")]
    CapacityExceeded { slice: SliceKind, needed: u32, free: u32 },
    #[error("user {0} already holds an allocation")]
    DuplicateUser(UserId),
    #[error("rate {rate} Mb/s outside decision range {range}")]
    RateOutOfRange { rate: Mbps, range: RateRange },
    #[error("user {0} holds no allocation")]
    UnknownUser(UserId),
    #[error("no ledger configured for slice {0}")]
    UnknownSlice(SliceKind),
    #[error("slice {0} configured twice")]
    DuplicateSlice(SliceKind),
    #[error("invalid slice config: {0}")]
    InvalidConfig(&'static str),
}

/// Number of RBs needed to carry `rate`: `ceil(rate / rb_rate)`.
pub fn rbs_for_rate(rate: Mbps, rb_rate: Mbps) -> Result<u32, DomainError> {
    if rate.0 < 1 || rb_rate.0 < 1 {
        return Err(DomainError::ZeroRate);
    }
    Ok(rate.0.div_ceil(rb_rate.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub rate: Mbps,
    pub rbs: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceLedger {
    config: SliceConfig,
    allocations: BTreeMap<UserId, Allocation>,
    used: u32,
}

impl SliceLedger {
    pub fn new(config: SliceConfig) -> Self {
        Self {
            config,
            allocations: BTreeMap::new(),
            used: 0,
        }
    }

    pub fn config(&self) -> &SliceConfig {
        &self.config
    }

    pub fn kind(&self) -> SliceKind {
        self.config.kind
    }

    pub fn used_rbs(&self) -> u32 {
        self.used
    }

    pub fn free_rbs(&self) -> u32 {
        self.config.total_rbs - self.used
    }

    pub fn allocations(&self) -> &BTreeMap<UserId, Allocation> {
        &self.allocations
    }

    pub fn get(&self, user: UserId) -> Option<Allocation> {
        self.allocations.get(&user).copied()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.allocations.contains_key(&user)
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    /// RBs needed for `rate` under this slice's per-RB rate.
    pub fn rbs_for(&self, rate: Mbps) -> Result<u32, DomainError> {
        rbs_for_rate(rate, self.config.rb_rate)
    }

    pub fn admit(&mut self, user: UserId, rate: Mbps) -> Result<Allocation, DomainError> {
        if self.allocations.contains_key(&user) {
            return Err(DomainError::DuplicateUser(user));
        }
        if !self.config.decision_range.contains(rate) {
            return Err(DomainError::RateOutOfRange {
                rate,
                range: self.config.decision_range,
            });
        }
        let rbs = self.rbs_for(rate)?;
        let free = self.free_rbs();
        if rbs > free {
            return Err(DomainError::CapacityExceeded {
                slice: self.kind(),
                needed: rbs,
                free,
            });
        }
        let alloc = Allocation { rate, rbs };
        self.allocations.insert(user, alloc);
        self.used += rbs;
        Ok(alloc)
    }

    pub fn release(&mut self, user: UserId) -> Result<Allocation, DomainError> {
        let alloc = self.allocations.remove(&user).ok_or(DomainError::UnknownUser(user))?;
        self.used -= alloc.rbs;
        Ok(alloc)
    }

    /// Re-derives every ledger invariant from scratch.
    pub fn check(&self) -> Result<(), &'static str> {
        let mut sum = 0u32;
        for alloc in self.allocations.values() {
            if self.rbs_for(alloc.rate) != Ok(alloc.rbs) {
                return Err("allocation rbs disagree with rbs_for_rate");
            }
            if !self.config.decision_range.contains(alloc.rate) {
                return Err("allocation rate outside decision range");
            }
            sum += alloc.rbs;
        }
        if sum != self.used {
            return Err("cached used-RB count is stale");
        }
        if sum > self.config.total_rbs {
            return Err("ledger exceeds its RB budget");
        }
        Ok(())
    }
}

/// Fraction of the ledger's RBs currently allocated.
pub fn occupancy_rate(ledger: &SliceLedger) -> f64 {
    f64::from(ledger.used_rbs()) / f64::from(ledger.config.total_rbs)
}

/// Every slice ledger plus the admitted/blocked registry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkState {
    slices: Vec<SliceLedger>,
    admitted: BTreeMap<UserId, SliceKind>,
    blocked: Vec<(UserId, RejectReason)>,
    pub arrival_index: u64,
}

impl NetworkState {
    pub fn new(configs: &[SliceConfig]) -> Result<Self, DomainError> {
        let mut slices: Vec<SliceLedger> = Vec::with_capacity(configs.len());
        for cfg in configs {
            cfg.validate()?;
            if slices.iter().any(|l| l.kind() == cfg.kind) {
                return Err(DomainError::DuplicateSlice(cfg.kind));
            }
            slices.push(SliceLedger::new(*cfg));
        }
        slices.sort_by_key(|l| l.kind());
        Ok(Self {
            slices,
            admitted: BTreeMap::new(),
            blocked: Vec::new(),
            arrival_index: 0,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(&SliceConfig::defaults()).expect("default slice configs are valid")
    }

    pub fn ledgers(&self) -> &[SliceLedger] {
        &self.slices
    }

    pub fn ledger(&self, kind: SliceKind) -> Result<&SliceLedger, DomainError> {
        self.slices
            .iter()
            .find(|l| l.kind() == kind)
            .ok_or(DomainError::UnknownSlice(kind))
    }

    fn ledger_mut(&mut self, kind: SliceKind) -> Result<&mut SliceLedger, DomainError> {
        self.slices
            .iter_mut()
            .find(|l| l.kind() == kind)
            .ok_or(DomainError::UnknownSlice(kind))
    }

    pub fn configs(&self) -> impl Iterator<Item = &SliceConfig> {
        self.slices.iter().map(|l| l.config())
    }

    pub fn admitted(&self) -> &BTreeMap<UserId, SliceKind> {
        &self.admitted
    }

    pub fn blocked(&self) -> &[(UserId, RejectReason)] {
        &self.blocked
    }

    pub fn slice_of(&self, user: UserId) -> Option<SliceKind> {
        self.admitted.get(&user).copied()
    }

    pub fn total_users(&self) -> usize {
        self.admitted.len()
    }

    pub fn admit(&mut self, user: UserId, kind: SliceKind, rate: Mbps) -> Result<Allocation, DomainError> {
        if self.admitted.contains_key(&user) {
            return Err(DomainError::DuplicateUser(user));
        }
        let alloc = self.ledger_mut(kind)?.admit(user, rate)?;
        self.admitted.insert(user, kind);
        Ok(alloc)
    }

    pub fn release(&mut self, user: UserId) -> Result<(SliceKind, Allocation), DomainError> {
        let kind = self.slice_of(user).ok_or(DomainError::UnknownUser(user))?;
        let alloc = self.ledger_mut(kind)?.release(user)?;
        self.admitted.remove(&user);
        Ok((kind, alloc))
    }

    pub fn block(&mut self, user: UserId, reason: RejectReason) {
        self.blocked.push((user, reason));
    }

    pub fn used_rbs(&self) -> u32 {
        self.slices.iter().map(SliceLedger::used_rbs).sum()
    }

    pub fn total_rbs(&self) -> u32 {
        self.slices.iter().map(|l| l.config().total_rbs).sum()
    }

    /// Used RBs over total RBs across every slice.
    pub fn aggregate_occupancy(&self) -> f64 {
        f64::from(self.used_rbs()) / f64::from(self.total_rbs())
    }

    /// Ledger invariants plus registry/ledger coherence.
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        let mut keys = 0usize;
        for ledger in &self.slices {
            ledger.check()?;
            for user in ledger.allocations().keys() {
                if self.admitted.get(user) != Some(&ledger.kind()) {
                    return Err("registry does not mirror ledger keys");
                }
            }
            keys += ledger.len();
        }
        if keys != self.admitted.len() {
            return Err("registry holds users absent from every ledger");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embb_with_used(used: u32) -> SliceLedger {
        let mut ledger = SliceLedger::new(SliceConfig::embb());
        let mut uid = 1000;
        let mut left = used;
        while left > 0 {
            let r = match left {
                25.. => 20,
                21..=24 => left - 5,
                _ => left,
            };
            ledger.admit(UserId(uid), Mbps(r)).unwrap();
            left -= r;
            uid += 1;
        }
        assert_eq!(ledger.used_rbs(), used);
        ledger
    }

    #[test]
    fn rbs_for_rate_examples() {
        assert_eq!(rbs_for_rate(Mbps(12), Mbps(1)), Ok(12));
        assert_eq!(rbs_for_rate(Mbps(5), Mbps(1)), Ok(5));
        assert_eq!(rbs_for_rate(Mbps(5), Mbps(2)), Ok(3));
        assert_eq!(rbs_for_rate(Mbps(0), Mbps(1)), Err(DomainError::ZeroRate));
    }

    #[test]
    fn occupancy_examples() {
        let mut urllc = SliceLedger::new(SliceConfig::urllc());
        assert_eq!(occupancy_rate(&urllc), 0.0);
        for uid in 1..=4 {
            urllc.admit(UserId(uid), Mbps(5)).unwrap();
        }
        urllc.admit(UserId(5), Mbps(2)).unwrap();
        assert_eq!(urllc.used_rbs(), 22);
        assert!((occupancy_rate(&urllc) - 0.7333).abs() < 1e-4);

        let embb = embb_with_used(90);
        assert_eq!(occupancy_rate(&embb), 1.0);
    }

    #[test]
    fn admit_user_53_takes_twelve_rbs() {
        let mut embb = embb_with_used(22);
        assert_eq!(embb.free_rbs(), 68);
        let alloc = embb.admit(UserId(53), Mbps(12)).unwrap();
        assert_eq!(
            alloc,
            Allocation {
                rate: Mbps(12),
                rbs: 12
            }
        );
        assert_eq!(embb.get(UserId(53)).unwrap().rbs, 12);
    }

    #[test]
    fn admit_errors() {
        let mut full = embb_with_used(90);
        assert!(matches!(
            full.admit(UserId(1), Mbps(5)),
            Err(DomainError::CapacityExceeded { needed: 5, free: 0, .. })
        ));
        let mut urllc = SliceLedger::new(SliceConfig::urllc());
        assert!(matches!(
            urllc.admit(UserId(1), Mbps(7)),
            Err(DomainError::RateOutOfRange { .. })
        ));
        urllc.admit(UserId(1), Mbps(3)).unwrap();
        assert_eq!(
            urllc.admit(UserId(1), Mbps(3)),
            Err(DomainError::DuplicateUser(UserId(1)))
        );
    }

    #[test]
    fn release_round_trip_and_unknown() {
        let mut embb = embb_with_used(40);
        let before = embb.clone();
        embb.admit(UserId(7), Mbps(9)).unwrap();
        let with = embb.clone();
        embb.release(UserId(7)).unwrap();
        assert_eq!(embb, before);
        embb.admit(UserId(7), Mbps(9)).unwrap();
        assert_eq!(embb, with);
        assert_eq!(embb.release(UserId(99)), Err(DomainError::UnknownUser(UserId(99))));
    }

    #[test]
    fn range_overlap() {
        let u = SliceConfig::urllc().decision_range;
        let e = SliceConfig::embb().decision_range;
        assert_eq!(u.overlap(&e), Some(RateRange::new(5, 5).unwrap()));
        assert!(RateRange::new(0, 3).is_err());
        assert!(RateRange::new(4, 3).is_err());
    }

    #[test]
    fn network_state_rejects_duplicate_slices() {
        let cfgs = [SliceConfig::urllc(), SliceConfig::urllc()];
        assert_eq!(
            NetworkState::new(&cfgs),
            Err(DomainError::DuplicateSlice(SliceKind::Urllc))
        );
    }

    #[test]
    fn user_lives_in_one_ledger() {
        let mut net = NetworkState::with_defaults();
        net.admit(UserId(1), SliceKind::Urllc, Mbps(5)).unwrap();
        assert_eq!(
            net.admit(UserId(1), SliceKind::Embb, Mbps(5)),
            Err(DomainError::DuplicateUser(UserId(1)))
        );
        net.check_invariants().unwrap();
        net.release(UserId(1)).unwrap();
        net.admit(UserId(1), SliceKind::Embb, Mbps(5)).unwrap();
        net.check_invariants().unwrap();
    }
}
