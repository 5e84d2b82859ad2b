//! The five-step slice management workflow.
//!
//! Every arrival runs intent understanding, user registration, slice
//! optimization and QoS evaluation. When the chosen slice is short of RBs the
//! agent reflects: it plans a slice handover, re-optimizes and re-evaluates,
//! at most `max_reflect` times. All effects are staged on a scratch copy of
//! the network and committed only when the arrival is admitted.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::domain::{
    rbs_for_rate, Mbps, NetworkState, RateRange, RejectReason, SliceConfig, SliceKind, SliceLedger, UserId,
};
use crate::memory::{make_key, ActionRecord, CachedOutcome, MemoryStore, RecordOutcome, StateKey};
use crate::perception::{observe, Observation, RawRequest};
use crate::tools::{apply_handover, CapProvider, IdealChannel, RateCap};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QosIntent {
    pub intent_class: String,
    pub rate_range: RateRange,
    pub latency_ms: u32,
}

impl QosIntent {
    pub fn digest(&self) -> String {
        format!(
            "class={} rate={} latency={}",
            self.intent_class, self.rate_range, self.latency_ms
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentTemplate {
    pub label: String,
    /// Matched case-insensitively as substrings of the service text.
    pub keywords: Vec<String>,
    pub rate_range: RateRange,
    pub latency_ms: u32,
    /// The slice a traditional controller would file this class under.
    pub slice: SliceKind,
    /// Relative sampling weight for scenario generation.
    pub weight: f64,
}

impl IntentTemplate {
    pub fn intent(&self) -> QosIntent {
        QosIntent {
            intent_class: self.label.clone(),
            rate_range: self.rate_range,
            latency_ms: self.latency_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IntentMode {
    /// Unknown services are rejected.
    Strict,
    /// Unknown services get the best-effort template.
    #[default]
    Lenient,
}

pub const BEST_EFFORT_CLASS: &str = "best effort";

#[derive(Clone, Debug, PartialEq)]
pub struct IntentCatalog {
    pub templates: Vec<IntentTemplate>,
    pub mode: IntentMode,
}

impl IntentCatalog {
    /// Built-in catalog. Only the 4K entry comes from observed behaviour; the
    /// remaining entries and every weight are tunable configuration.
    pub fn default_catalog() -> Self {
        let t = |label: &str, keywords: &[&str], min, max, latency_ms, slice, weight| IntentTemplate {
            label: label.into(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
            rate_range: RateRange::new(min, max).expect("static range"),
            latency_ms,
            slice,
            weight,
        };
        Self {
            templates: alloc::vec![
                t(
                    "4K video",
                    &["4k video", "4k", "uhd video"],
                    12,
                    15,
                    90,
                    SliceKind::Embb,
                    DEFAULT_WEIGHTS[0]
                ),
                t(
                    "HD video",
                    &["hd video", "video call", "video"],
                    8,
                    10,
                    100,
                    SliceKind::Embb,
                    DEFAULT_WEIGHTS[1]
                ),
                t(
                    "web browsing",
                    &["web browsing", "browse", "web"],
                    5,
                    8,
                    200,
                    SliceKind::Embb,
                    DEFAULT_WEIGHTS[2]
                ),
                t(
                    "voice call",
                    &["voice call", "voice", "phone call"],
                    1,
                    2,
                    10,
                    SliceKind::Urllc,
                    DEFAULT_WEIGHTS[3]
                ),
                t(
                    "vehicle control",
                    &["vehicle control", "autonomous driving", "vehicle"],
                    3,
                    5,
                    5,
                    SliceKind::Urllc,
                    DEFAULT_WEIGHTS[4]
                ),
                t(
                    "IoT telemetry",
                    &["iot telemetry", "telemetry", "sensor"],
                    1,
                    1,
                    50,
                    SliceKind::Urllc,
                    DEFAULT_WEIGHTS[5]
                ),
            ],
            mode: IntentMode::Lenient,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&IntentTemplate> {
        self.templates.iter().find(|t| t.label == label)
    }

    pub fn best_effort() -> QosIntent {
        QosIntent {
            intent_class: BEST_EFFORT_CLASS.into(),
            rate_range: RateRange::new(5, 5).expect("static range"),
            latency_ms: 200,
        }
    }

    /// Checks the catalog against the slice set it will be used with.
    pub fn validate(&self, configs: &[SliceConfig]) -> Result<(), PlanError> {
        if self.templates.is_empty() {
            return Err(PlanError::EmptyCatalog);
        }
        for t in &self.templates {
            let home = configs
                .iter()
                .find(|c| c.kind == t.slice)
                .ok_or_else(|| PlanError::BadCatalog(format!("{}: slice {} not configured", t.label, t.slice)))?;
            if !home.decision_range.contains(t.rate_range.min()) {
                return Err(PlanError::BadCatalog(format!(
                    "{}: minimum {} outside {} range {}",
                    t.label,
                    t.rate_range.min(),
                    t.slice,
                    home.decision_range
                )));
            }
            if t.keywords.is_empty() || t.keywords.iter().any(|k| k.trim().is_empty()) {
                return Err(PlanError::BadCatalog(format!("{}: empty keyword", t.label)));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(PlanError::BadCatalog(format!(
                    "{}: weight must be non-negative",
                    t.label
                )));
            }
            if t.latency_ms == 0 {
                return Err(PlanError::BadCatalog(format!("{}: latency must be positive", t.label)));
            }
        }
        if self.templates.iter().all(|t| t.weight == 0.0) {
            return Err(PlanError::BadCatalog("all weights are zero".into()));
        }
        Ok(())
    }
}

/// Sampling weights of the built-in catalog, in template order. IoT telemetry
/// belongs to mMTC and is recognised but not sampled.
pub const DEFAULT_WEIGHTS: [f64; 6] = [1.0, 4.0, 3.0, 1.0, 4.0, 0.0];

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("intent catalog is empty")]
    EmptyCatalog,
    #[error("invalid intent catalog: {0}")]
    BadCatalog(String),
    #[error("no catalog entry matches the requested service")]
    UnknownIntent,
    #[error("no slice admits a {0} Mb/s minimum")]
    NoEligibleSlice(Mbps),
    #[error("slice needs {needed_rbs} free RBs")]
    Infeasible { needed_rbs: u32 },
    #[error("channel cap {cap} Mb/s below the intent minimum {min} Mb/s")]
    CapBelowMin { cap: Mbps, min: Mbps },
    #[error("no handover plan frees enough RBs")]
    NoFeasiblePlan,
    #[error("{0}")]
    Domain(#[from] crate::domain::DomainError),
}

/// The five sub-tasks the planner decomposes an arrival into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subtask {
    IntentUnderstanding,
    UserRegistration,
    SliceOptimization,
    QosEvaluation,
    SliceHandover,
}

impl Subtask {
    pub const ALL: [Subtask; 5] = [
        Subtask::IntentUnderstanding,
        Subtask::UserRegistration,
        Subtask::SliceOptimization,
        Subtask::QosEvaluation,
        Subtask::SliceHandover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::IntentUnderstanding => "intent_understanding",
            Subtask::UserRegistration => "user_registration",
            Subtask::SliceOptimization => "slice_optimization",
            Subtask::QosEvaluation => "qos_evaluation",
            Subtask::SliceHandover => "slice_handover",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanState {
    IntentUnderstanding,
    UserRegistration,
    SliceOptimization,
    QosEvaluation,
    SliceHandover,
    Done,
    Rejected,
}

impl PlanState {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanState::Done => "done",
            PlanState::Rejected => "rejected",
            other => other.subtask().expect("non-terminal").as_str(),
        }
    }

    pub fn subtask(self) -> Option<Subtask> {
        Some(match self {
            PlanState::IntentUnderstanding => Subtask::IntentUnderstanding,
            PlanState::UserRegistration => Subtask::UserRegistration,
            PlanState::SliceOptimization => Subtask::SliceOptimization,
            PlanState::QosEvaluation => Subtask::QosEvaluation,
            PlanState::SliceHandover => Subtask::SliceHandover,
            PlanState::Done | PlanState::Rejected => return None,
        })
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, PlanState::Done | PlanState::Rejected)
    }

    /// The workflow transition relation. Every sub-task may end in rejection.
    pub fn can_transition(self, to: PlanState) -> bool {
        use PlanState::*;
        match (self, to) {
            (IntentUnderstanding, UserRegistration)
            | (UserRegistration, SliceOptimization)
            | (SliceOptimization, QosEvaluation)
            | (QosEvaluation, Done)
            | (QosEvaluation, SliceHandover)
            | (SliceHandover, SliceOptimization) => true,
            (from, Rejected) => !from.is_terminal(),
            _ => false,
        }
    }
}

impl fmt::Display for PlanState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub state: PlanState,
    pub input: String,
    pub output: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlanTrace {
    pub steps: Vec<TraceStep>,
    pub reflection_count: u32,
}

impl PlanTrace {
    fn push(&mut self, state: PlanState, input: impl Into<String>, output: impl Into<String>) {
        self.steps.push(TraceStep {
            state,
            input: input.into(),
            output: output.into(),
        });
    }

    /// Sub-task executions, excluding the terminal marker.
    pub fn executions(&self) -> usize {
        self.steps.iter().filter(|s| !s.state.is_terminal()).count()
    }

    pub fn is_legal(&self) -> bool {
        let Some(first) = self.steps.first() else {
            return false;
        };
        first.state == PlanState::IntentUnderstanding
            && self.steps.windows(2).all(|w| w[0].state.can_transition(w[1].state))
            && self.steps.last().is_some_and(|s| s.state.is_terminal())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Move {
    pub user: UserId,
    pub from: SliceKind,
    pub to: SliceKind,
    pub rate: Mbps,
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}->{}@{}", self.user, self.from, self.to, self.rate)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HandoverPlan {
    pub moves: Vec<Move>,
    /// RBs released in the source slice once every move is applied.
    pub freed_rbs: u32,
}

impl HandoverPlan {
    pub fn digest(&self) -> String {
        let moves: Vec<String> = self.moves.iter().map(|m| m.to_string()).collect();
        format!("moves={} freed={}", moves.join(","), self.freed_rbs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Decision {
    pub slice: SliceKind,
    pub rate: Mbps,
    pub rbs: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Admitted { decision: Decision, handovers: Vec<Move> },
    Rejected { reason: RejectReason },
}

impl Outcome {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Outcome::Admitted { .. })
    }
}

/// Returns the template of the longest keyword contained in the service text.
pub fn understand_intent(req: &RawRequest, catalog: &IntentCatalog) -> Result<QosIntent, PlanError> {
    if catalog.is_empty() {
        return Err(PlanError::EmptyCatalog);
    }
    let text = req.service_text.to_lowercase();
    let mut best: Option<(&IntentTemplate, usize)> = None;
    for t in &catalog.templates {
        for kw in &t.keywords {
            let kw = kw.to_lowercase();
            if text.contains(kw.as_str()) && best.is_none_or(|(_, len)| kw.len() > len) {
                best = Some((t, kw.len()));
            }
        }
    }
    match (best, catalog.mode) {
        (Some((t, _)), _) => Ok(t.intent()),
        (None, IntentMode::Strict) => Err(PlanError::UnknownIntent),
        (None, IntentMode::Lenient) => Ok(IntentCatalog::best_effort()),
    }
}

/// Picks the slice whose decision range holds the intent minimum. Inside an
/// overlap the less occupied slice wins; an exact tie goes to URLLC.
pub fn register(intent: &QosIntent, configs: &[SliceConfig], obs: &Observation) -> Result<SliceKind, PlanError> {
    let min = intent.rate_range.min();
    configs
        .iter()
        .filter(|c| c.decision_range.contains(min))
        .map(|c| (obs.occupancy(c.kind), c.kind))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, kind)| kind)
        .ok_or(PlanError::NoEligibleSlice(min))
}

/// Greedy-min allocation: the intent minimum, if the channel and the ledger allow it.
pub fn optimize(intent: &QosIntent, ledger: &SliceLedger, cap: RateCap) -> Result<Decision, PlanError> {
    let rate = intent.rate_range.min();
    if let RateCap::Limit(c) = cap {
        if c < rate {
            return Err(PlanError::CapBelowMin { cap: c, min: rate });
        }
    }
    let rbs = ledger.rbs_for(rate)?;
    if ledger.free_rbs() < rbs {
        return Err(PlanError::Infeasible { needed_rbs: rbs });
    }
    Ok(Decision {
        slice: ledger.kind(),
        rate,
        rbs,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QosEntry {
    pub user: UserId,
    pub slice: SliceKind,
    pub rate: Mbps,
    pub intent_ok: bool,
    pub slice_range_ok: bool,
    /// Reported only; latency never blocks an admission.
    pub latency_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QosReport {
    pub entries: Vec<QosEntry>,
}

impl QosReport {
    pub fn ok(&self) -> bool {
        self.entries.iter().all(|e| e.intent_ok && e.slice_range_ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &QosEntry> {
        self.entries.iter().filter(|e| !(e.intent_ok && e.slice_range_ok))
    }

    pub fn latency_warnings(&self) -> usize {
        self.entries.iter().filter(|e| !e.latency_ok).count()
    }
}

/// Users admitted without a recorded intent are held to their slice range only.
pub fn evaluate_qos(state: &NetworkState, intents: &BTreeMap<UserId, QosIntent>) -> QosReport {
    let mut entries = Vec::with_capacity(state.total_users());
    for ledger in state.ledgers() {
        let cfg = ledger.config();
        for (&user, alloc) in ledger.allocations() {
            let intent = intents.get(&user);
            entries.push(QosEntry {
                user,
                slice: cfg.kind,
                rate: alloc.rate,
                intent_ok: intent.is_none_or(|i| i.rate_range.contains(alloc.rate)),
                slice_range_ok: cfg.decision_range.contains(alloc.rate),
                latency_ok: intent.is_none_or(|i| cfg.latency_bound_ms <= i.latency_ms),
            });
        }
    }
    entries.sort_by_key(|e| e.user);
    QosReport { entries }
}

/// A user of the congested slice that could move, with its RB cost on both sides.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    user: UserId,
    rate: Mbps,
    to: SliceKind,
    source_rbs: u32,
    dest_rbs: u32,
}

fn handover_candidates(state: &NetworkState, target: &SliceLedger) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (&user, alloc) in target.allocations() {
        // first other slice (in kind order) whose range holds the rate
        let dest = state
            .ledgers()
            .iter()
            .filter(|l| l.kind() != target.kind())
            .find(|l| l.config().decision_range.contains(alloc.rate));
        if let Some(dest) = dest {
            let dest_rbs = rbs_for_rate(alloc.rate, dest.config().rb_rate).expect("allocated rates are positive");
            out.push(Candidate {
                user,
                rate: alloc.rate,
                to: dest.kind(),
                source_rbs: alloc.rbs,
                dest_rbs,
            });
        }
    }
    out.sort_by_key(|c| (c.rate, c.user));
    out
}

/// Plans overlap-user moves out of `target` until `needed_rbs` fit.
///
/// Candidates are walked in ascending `(rate, user)` order, skipping any whose
/// destination is already too full, and the walk stops as soon as enough RBs
/// are freed. When that walk falls short an exact search over candidate
/// subsets takes over, returning a fewest-moves plan if any exists.
pub fn plan_handover(state: &NetworkState, target: SliceKind, needed_rbs: u32) -> Result<HandoverPlan, PlanError> {
    let ledger = state.ledger(target)?;
    let shortfall = needed_rbs.saturating_sub(ledger.free_rbs());
    if shortfall == 0 {
        return Ok(HandoverPlan::default());
    }
    let candidates = handover_candidates(state, ledger);
    let mut dest_free: BTreeMap<SliceKind, u32> = state.ledgers().iter().map(|l| (l.kind(), l.free_rbs())).collect();

    let mut chosen = Vec::new();
    let mut freed = 0u32;
    for c in &candidates {
        if freed >= shortfall {
            break;
        }
        let room = dest_free.get_mut(&c.to).expect("destination ledger exists");
        if *room >= c.dest_rbs {
            *room -= c.dest_rbs;
            freed += c.source_rbs;
            chosen.push(*c);
        }
    }
    if freed < shortfall {
        let dest_free: BTreeMap<SliceKind, u32> = state.ledgers().iter().map(|l| (l.kind(), l.free_rbs())).collect();
        chosen = exact_min_moves(&candidates, &dest_free, shortfall).ok_or(PlanError::NoFeasiblePlan)?;
        freed = chosen.iter().map(|c| c.source_rbs).sum();
    }
    Ok(HandoverPlan {
        moves: chosen
            .iter()
            .map(|c| Move {
                user: c.user,
                from: target,
                to: c.to,
                rate: c.rate,
            })
            .collect(),
        freed_rbs: freed,
    })
}

/// Knapsack over destination room: fewest moves freeing at least `shortfall`
/// source RBs, with the room of every destination tracked in the state key.
fn exact_min_moves(
    candidates: &[Candidate],
    dest_free: &BTreeMap<SliceKind, u32>,
    shortfall: u32,
) -> Option<Vec<Candidate>> {
    // state: per-destination RBs used (as a small vector) + freed (clamped at shortfall)
    type Key = (Vec<u32>, u32);
    let dests: Vec<SliceKind> = dest_free.keys().copied().collect();
    let idx = |k: SliceKind| dests.iter().position(|&d| d == k).expect("known slice");
    let mut best: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    best.insert((alloc::vec![0; dests.len()], 0), Vec::new());
    for (i, c) in candidates.iter().enumerate() {
        let d = idx(c.to);
        let room = dest_free[&c.to];
        let snapshot: Vec<(Key, Vec<usize>)> = best.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for ((used, freed), picks) in snapshot {
            if used[d] + c.dest_rbs > room || freed >= shortfall {
                continue;
            }
            let mut used2 = used.clone();
            used2[d] += c.dest_rbs;
            let key = (used2, (freed + c.source_rbs).min(shortfall));
            let mut picks2 = picks.clone();
            picks2.push(i);
            match best.get(&key) {
                Some(existing) if existing.len() <= picks2.len() => {}
                _ => {
                    best.insert(key, picks2);
                }
            }
        }
    }
    best.into_iter()
        .filter(|((_, freed), _)| *freed >= shortfall)
        .map(|(_, picks)| picks)
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
        .map(|picks| picks.into_iter().map(|i| candidates[i]).collect())
}

/// Payload a pluggable planner may propose for one sub-task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubtaskDecision {
    Intent {
        rate_min: u32,
        rate_max: u32,
        latency_ms: u32,
    },
    Registration {
        slice: SliceKind,
    },
    Optimization {
        rate: u32,
    },
    Handover {
        moves: Vec<Move>,
    },
}

impl SubtaskDecision {
    pub fn subtask(&self) -> Subtask {
        match self {
            SubtaskDecision::Intent { .. } => Subtask::IntentUnderstanding,
            SubtaskDecision::Registration { .. } => Subtask::UserRegistration,
            SubtaskDecision::Optimization { .. } => Subtask::SliceOptimization,
            SubtaskDecision::Handover { .. } => Subtask::SliceHandover,
        }
    }

    pub fn digest(&self) -> String {
        match self {
            SubtaskDecision::Intent {
                rate_min,
                rate_max,
                latency_ms,
            } => format!("intent rate=[{rate_min},{rate_max}] latency={latency_ms}"),
            SubtaskDecision::Registration { slice } => format!("register slice={slice}"),
            SubtaskDecision::Optimization { rate } => format!("optimize rate={rate}"),
            SubtaskDecision::Handover { moves } => {
                let m: Vec<String> = moves.iter().map(|m| m.to_string()).collect();
                format!("handover moves={}", m.join(","))
            }
        }
    }
}

/// Everything a planner may look at when proposing a decision.
pub struct DecisionContext<'a> {
    pub arrival_index: u64,
    pub subtask: Subtask,
    pub request: &'a RawRequest,
    pub observation: &'a Observation,
    pub catalog: &'a IntentCatalog,
    pub configs: &'a [SliceConfig],
    /// The staged network (includes handovers applied so far this arrival).
    pub state: &'a NetworkState,
    pub intent: Option<&'a QosIntent>,
    pub slice: Option<SliceKind>,
    pub rate_cap: Option<RateCap>,
    pub needed_rbs: Option<u32>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("planner fault: {0}")]
pub struct PlannerFault(pub String);

/// A source of sub-task decisions. `Ok(None)` defers to the built-in rules;
/// proposals are validated before use and faults fall back to the rules.
pub trait Planner {
    fn name(&self) -> &str;

    fn propose(&mut self, ctx: &DecisionContext<'_>) -> Result<Option<SubtaskDecision>, PlannerFault>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBasedPlanner;

impl Planner for RuleBasedPlanner {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn propose(&mut self, _ctx: &DecisionContext<'_>) -> Result<Option<SubtaskDecision>, PlannerFault> {
        Ok(None)
    }
}

/// The rule-based answer for a sub-task, as a planner payload.
pub fn rule_decision(ctx: &DecisionContext<'_>) -> Result<SubtaskDecision, PlanError> {
    match ctx.subtask {
        Subtask::IntentUnderstanding => {
            let i = understand_intent(ctx.request, ctx.catalog)?;
            Ok(SubtaskDecision::Intent {
                rate_min: i.rate_range.min().0,
                rate_max: i.rate_range.max().0,
                latency_ms: i.latency_ms,
            })
        }
        Subtask::UserRegistration => {
            let intent = ctx.intent.ok_or(PlanError::UnknownIntent)?;
            Ok(SubtaskDecision::Registration {
                slice: register(intent, ctx.configs, ctx.observation)?,
            })
        }
        Subtask::SliceOptimization => {
            let intent = ctx.intent.ok_or(PlanError::UnknownIntent)?;
            let slice = ctx.slice.ok_or(PlanError::NoEligibleSlice(intent.rate_range.min()))?;
            let d = optimize(
                intent,
                ctx.state.ledger(slice)?,
                ctx.rate_cap.unwrap_or(RateCap::Unbounded),
            )?;
            Ok(SubtaskDecision::Optimization { rate: d.rate.0 })
        }
        Subtask::SliceHandover => {
            let slice = ctx.slice.ok_or(PlanError::NoFeasiblePlan)?;
            let plan = plan_handover(ctx.state, slice, ctx.needed_rbs.unwrap_or(0))?;
            Ok(SubtaskDecision::Handover { moves: plan.moves })
        }
        Subtask::QosEvaluation => Err(PlanError::BadCatalog("QoS evaluation takes no decision".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkflowConfig {
    pub max_reflect: u32,
    /// Serve known-state admissions from memory when their preconditions hold.
    pub use_cache: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            max_reflect: 3,
            use_cache: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkflowResult {
    pub outcome: Outcome,
    pub trace: PlanTrace,
    pub intent: Option<QosIntent>,
    /// The memory key of this arrival, once the intent is known.
    pub key: Option<StateKey>,
    /// Set when the admission was served from the perception cache.
    pub cache_hit: bool,
    /// Planner proposals that failed validation and were replaced by the rules.
    pub fallbacks: u32,
}

/// The agent: catalog, memory, per-user intents, a planner and a channel tool.
pub struct Agent {
    pub config: WorkflowConfig,
    pub catalog: IntentCatalog,
    pub memory: MemoryStore,
    pub intents: BTreeMap<UserId, QosIntent>,
    pub planner: Box<dyn Planner>,
    pub caps: Box<dyn CapProvider>,
}

impl Agent {
    pub fn new(catalog: IntentCatalog, config: WorkflowConfig) -> Self {
        Self {
            config,
            catalog,
            memory: MemoryStore::new(),
            intents: BTreeMap::new(),
            planner: Box::new(RuleBasedPlanner),
            caps: Box::new(IdealChannel),
        }
    }

    pub fn with_planner(mut self, planner: Box<dyn Planner>) -> Self {
        self.planner = planner;
        self
    }

    pub fn with_caps(mut self, caps: Box<dyn CapProvider>) -> Self {
        self.caps = caps;
        self
    }

    pub fn with_memory(mut self, memory: MemoryStore) -> Self {
        self.memory = memory;
        self
    }

    /// Runs one arrival through the workflow. `state` changes only on admission.
    pub fn run_workflow(&mut self, req: &RawRequest, state: &mut NetworkState) -> WorkflowResult {
        let mut run = Run {
            agent: self,
            req,
            arrival: state.arrival_index,
            obs: observe(state),
            configs: state.configs().copied().collect(),
            trace: PlanTrace::default(),
            key: None,
            fallbacks: 0,
        };
        let mut staged = state.clone();
        let result = run.execute(&mut staged);
        let Run {
            trace, key, fallbacks, ..
        } = run;
        let (outcome, intent, cache_hit) = match result {
            Ok((decision, handovers, intent, cache_hit)) => {
                *state = staged;
                let outcome = Outcome::Admitted { decision, handovers };
                (outcome, Some(intent), cache_hit)
            }
            Err((reason, intent)) => (Outcome::Rejected { reason }, intent, false),
        };
        WorkflowResult {
            outcome,
            trace,
            intent,
            key,
            cache_hit,
            fallbacks,
        }
    }
}

/// Builds a [`DecisionContext`] from disjoint fields of a `Run`, so the
/// planner and memory can still be borrowed mutably alongside it.
macro_rules! decision_ctx {
    ($run:ident, $subtask:expr, $staged:expr, $intent:expr, $slice:expr) => {
        DecisionContext {
            arrival_index: $run.arrival,
            subtask: $subtask,
            request: $run.req,
            observation: &$run.obs,
            catalog: &$run.agent.catalog,
            configs: &$run.configs,
            state: $staged,
            intent: $intent,
            slice: $slice,
            rate_cap: None,
            needed_rbs: None,
        }
    };
}

struct Run<'a> {
    agent: &'a mut Agent,
    req: &'a RawRequest,
    arrival: u64,
    obs: Observation,
    configs: Vec<SliceConfig>,
    trace: PlanTrace,
    key: Option<StateKey>,
    fallbacks: u32,
}

type Admission = (Decision, Vec<Move>, QosIntent, bool);
type Rejection = (RejectReason, Option<QosIntent>);

/// Asks the planner; returns a validated proposal, or `None` to use the rules.
/// Rejected proposals are logged as failures under `key`.
fn consult<T>(
    planner: &mut dyn Planner,
    memory: &mut MemoryStore,
    key: &StateKey,
    fallbacks: &mut u32,
    ctx: &DecisionContext<'_>,
    validate: impl FnOnce(&SubtaskDecision) -> Result<T, String>,
) -> Option<T> {
    let subtask = ctx.subtask;
    let (digest, why) = match planner.propose(ctx) {
        Ok(None) => return None,
        Ok(Some(d)) if d.subtask() != subtask => (
            format!("planner {}", d.digest()),
            "payload for the wrong sub-task".into(),
        ),
        Ok(Some(d)) => {
            let digest = format!("planner {}", d.digest());
            if memory.failed_before(key, &digest) {
                (digest, "failed before in this state".into())
            } else {
                match validate(&d) {
                    Ok(v) => return Some(v),
                    Err(e) => (digest, e),
                }
            }
        }
        Err(fault) => (format!("planner fault {subtask}"), fault.0),
    };
    *fallbacks += 1;
    memory.record(ActionRecord {
        key: key.clone(),
        subtask,
        decision_digest: digest,
        outcome: RecordOutcome::Failure(why),
        arrival_index: ctx.arrival_index,
    });
    None
}

impl Run<'_> {
    fn key(&self) -> &StateKey {
        self.key.as_ref().expect("key is set before any sub-task runs")
    }

    fn record(&mut self, subtask: Subtask, digest: &str, outcome: RecordOutcome) {
        let key = self.key().clone();
        self.agent.memory.record(ActionRecord {
            key,
            subtask,
            decision_digest: digest.into(),
            outcome,
            arrival_index: self.arrival,
        });
    }

    fn reject(&mut self, from: PlanState, reason: RejectReason, intent: Option<QosIntent>, detail: &str) -> Rejection {
        debug_assert!(from.can_transition(PlanState::Rejected));
        let out = format!("{reason} {detail}");
        self.trace.push(PlanState::Rejected, from.as_str(), out.trim_end());
        (reason, intent)
    }

    fn execute(&mut self, staged: &mut NetworkState) -> Result<Admission, Rejection> {
        // intent understanding; failures before the intent is known use the rule label
        let iu_input = format!("service={}", self.req.service_text);
        let rule_intent = understand_intent(self.req, &self.agent.catalog);
        let label = rule_intent
            .as_ref()
            .map_or("unknown".to_string(), |i| i.intent_class.clone());
        self.key = Some(make_key(&self.obs, &label));
        let proposal = {
            let ctx = decision_ctx!(self, Subtask::IntentUnderstanding, staged, None, None);
            let key = self.key.clone().expect("set above");
            let mut fallbacks = self.fallbacks;
            let got = consult(
                &mut *self.agent.planner,
                &mut self.agent.memory,
                &key,
                &mut fallbacks,
                &ctx,
                |d| validate_intent(d, &self.configs, &label),
            );
            self.fallbacks = fallbacks;
            got
        };
        let intent = match proposal.map(Ok).unwrap_or(rule_intent) {
            Ok(i) => i,
            Err(_) => {
                self.trace.push(PlanState::IntentUnderstanding, iu_input, "unknown");
                return Err(self.reject(PlanState::IntentUnderstanding, RejectReason::UnknownIntent, None, ""));
            }
        };
        self.trace
            .push(PlanState::IntentUnderstanding, iu_input, intent.digest());
        self.record(Subtask::IntentUnderstanding, &intent.digest(), RecordOutcome::Success);
        let key = make_key(&self.obs, &intent.intent_class);
        self.key = Some(key.clone());

        // user registration
        let ur_input = format!("rate_min={} {}", intent.rate_range.min(), occupancy_digest(&self.obs));
        let rule_slice = register(&intent, &self.configs, &self.obs);
        let proposal = {
            let ctx = decision_ctx!(self, Subtask::UserRegistration, staged, Some(&intent), None);
            let mut fallbacks = self.fallbacks;
            let got = consult(
                &mut *self.agent.planner,
                &mut self.agent.memory,
                &key,
                &mut fallbacks,
                &ctx,
                |d| validate_registration(d, &intent, &self.configs),
            );
            self.fallbacks = fallbacks;
            got
        };
        let slice = match proposal.map(Ok).unwrap_or(rule_slice) {
            Ok(s) => s,
            Err(_) => {
                self.trace
                    .push(PlanState::UserRegistration, ur_input, "no eligible slice");
                return Err(self.reject(
                    PlanState::UserRegistration,
                    RejectReason::NoEligibleSlice,
                    Some(intent),
                    "",
                ));
            }
        };
        self.trace
            .push(PlanState::UserRegistration, ur_input, format!("slice={slice}"));
        self.record(
            Subtask::UserRegistration,
            &format!("slice={slice}"),
            RecordOutcome::Success,
        );

        // fast path: a remembered direct admission whose preconditions still hold
        if self.agent.config.use_cache {
            if let Some(cached) = self.agent.memory.cached_outcome(&key).copied() {
                let cap = self.agent.caps.cap(self.req, slice, staged);
                if cached.slice == slice
                    && cached.valid_for(&self.obs)
                    && cached.rate == intent.rate_range.min()
                    && cap.allows(cached.rate)
                {
                    let decision = Decision {
                        slice,
                        rate: cached.rate,
                        rbs: cached.rbs,
                    };
                    let digest = decision_digest(&decision, self.obs.free_rbs(slice));
                    self.trace.push(
                        PlanState::SliceOptimization,
                        format!("slice={slice} cache"),
                        digest.clone(),
                    );
                    self.record(Subtask::SliceOptimization, &digest, RecordOutcome::Success);
                    return self
                        .finish(staged, decision, Vec::new(), intent.clone(), true)
                        .map_err(|()| {
                            self.reject(PlanState::QosEvaluation, RejectReason::QosViolation, Some(intent), "")
                        });
                }
            }
        }

        let mut handovers: Vec<Move> = Vec::new();
        loop {
            // slice optimization
            let cap = self.agent.caps.cap(self.req, slice, staged);
            let ledger = staged.ledger(slice).expect("registered slice exists");
            let free = ledger.free_rbs();
            let so_input = format!("slice={slice} free={free} cap={cap}");
            let rule = optimize(&intent, ledger, cap);
            let proposal = {
                let mut ctx = decision_ctx!(self, Subtask::SliceOptimization, staged, Some(&intent), Some(slice));
                ctx.rate_cap = Some(cap);
                let mut fallbacks = self.fallbacks;
                let got = consult(
                    &mut *self.agent.planner,
                    &mut self.agent.memory,
                    &key,
                    &mut fallbacks,
                    &ctx,
                    |d| validate_optimization(d, &intent, ledger, cap),
                );
                self.fallbacks = fallbacks;
                got
            };
            let attempt = proposal.map(Ok).unwrap_or(rule);
            let digest = match &attempt {
                Ok(d) => decision_digest(d, free),
                Err(PlanError::Infeasible { needed_rbs }) => format!(
                    "admit slice={slice} rate={} rbs={needed_rbs} free={free}",
                    intent.rate_range.min()
                ),
                Err(e) => format!("{e}"),
            };
            self.trace.push(PlanState::SliceOptimization, so_input, digest.clone());
            if let Err(PlanError::CapBelowMin { .. }) = attempt {
                self.record(
                    Subtask::SliceOptimization,
                    &digest,
                    RecordOutcome::Failure("cap below min".into()),
                );
                return Err(self.reject(
                    PlanState::SliceOptimization,
                    RejectReason::CapBelowMin,
                    Some(intent),
                    "",
                ));
            }
            if self.agent.memory.failed_before(&key, &digest) {
                return Err(self.reject(
                    PlanState::SliceOptimization,
                    RejectReason::RepeatedFailure,
                    Some(intent),
                    &digest,
                ));
            }

            let needed = match attempt {
                Ok(decision) => {
                    self.record(Subtask::SliceOptimization, &digest, RecordOutcome::Success);
                    let handovers = core::mem::take(&mut handovers);
                    return self
                        .finish(staged, decision, handovers, intent.clone(), false)
                        .map_err(|()| {
                            self.reject(PlanState::QosEvaluation, RejectReason::QosViolation, Some(intent), "")
                        });
                }
                Err(PlanError::Infeasible { needed_rbs }) => needed_rbs,
                Err(_) => {
                    return Err(self.reject(
                        PlanState::SliceOptimization,
                        RejectReason::NoFeasiblePlan,
                        Some(intent),
                        "",
                    ))
                }
            };

            // QoS evaluation of an allocation that does not fit
            let shortfall = needed.saturating_sub(free);
            self.trace.push(
                PlanState::QosEvaluation,
                digest.clone(),
                format!("shortfall={shortfall}"),
            );
            if self.trace.reflection_count >= self.agent.config.max_reflect {
                self.record(
                    Subtask::QosEvaluation,
                    &digest,
                    RecordOutcome::Failure("reflection budget".into()),
                );
                return Err(self.reject(
                    PlanState::QosEvaluation,
                    RejectReason::ReflectionBudget,
                    Some(intent),
                    "",
                ));
            }

            // slice handover
            let sh_input = format!("target={slice} needed={needed} free={free}");
            let rule = plan_handover(staged, slice, needed);
            let proposal = {
                let mut ctx = decision_ctx!(self, Subtask::SliceHandover, staged, Some(&intent), Some(slice));
                ctx.needed_rbs = Some(needed);
                let mut fallbacks = self.fallbacks;
                let got = consult(
                    &mut *self.agent.planner,
                    &mut self.agent.memory,
                    &key,
                    &mut fallbacks,
                    &ctx,
                    |d| validate_handover(d, staged, slice),
                );
                self.fallbacks = fallbacks;
                got
            };
            let plan = match proposal.map(Ok).unwrap_or(rule) {
                Ok(p) => p,
                Err(_) => {
                    self.trace.push(PlanState::SliceHandover, sh_input, "no feasible plan");
                    self.record(
                        Subtask::SliceOptimization,
                        &digest,
                        RecordOutcome::Failure("no feasible plan".into()),
                    );
                    return Err(self.reject(PlanState::SliceHandover, RejectReason::NoFeasiblePlan, Some(intent), ""));
                }
            };
            self.trace.reflection_count += 1;
            let plan_digest = plan.digest();
            if let Err(e) = apply_handover(staged, &plan) {
                self.trace.push(PlanState::SliceHandover, sh_input, format!("{e}"));
                self.record(
                    Subtask::SliceHandover,
                    &plan_digest,
                    RecordOutcome::Failure(format!("{e}")),
                );
                return Err(self.reject(PlanState::SliceHandover, RejectReason::NoFeasiblePlan, Some(intent), ""));
            }
            self.trace.push(PlanState::SliceHandover, sh_input, plan_digest.clone());
            self.record(Subtask::SliceHandover, &plan_digest, RecordOutcome::Success);
            handovers.extend(plan.moves);
        }
    }

    /// QoS evaluation of the staged admission, then commit bookkeeping.
    fn finish(
        &mut self,
        staged: &mut NetworkState,
        decision: Decision,
        handovers: Vec<Move>,
        intent: QosIntent,
        cache_hit: bool,
    ) -> Result<Admission, ()> {
        let digest = decision_digest(&decision, staged.ledger(decision.slice).map_or(0, |l| l.free_rbs()));
        let user = self.req.user;
        let report = match staged.admit(user, decision.slice, decision.rate) {
            Ok(_) => {
                self.agent.intents.insert(user, intent.clone());
                let report = Some(evaluate_qos(staged, &self.agent.intents));
                self.agent.intents.remove(&user);
                report
            }
            Err(_) => None,
        };
        let qe_out = match &report {
            Some(r) if r.ok() => format!("ok latency_warnings={}", r.latency_warnings()),
            Some(r) => format!("violations={}", r.violations().count()),
            None => "admission failed".to_string(),
        };
        self.trace.push(PlanState::QosEvaluation, digest.clone(), qe_out);
        if !report.as_ref().is_some_and(QosReport::ok) {
            self.record(
                Subtask::QosEvaluation,
                &digest,
                RecordOutcome::Failure("qos violation".into()),
            );
            return Err(());
        }
        self.agent.intents.insert(user, intent.clone());
        self.record(Subtask::QosEvaluation, &digest, RecordOutcome::Success);
        self.trace.push(PlanState::Done, "qos ok", format!("admitted {digest}"));
        if handovers.is_empty() && !cache_hit {
            let key = self.key().clone();
            self.agent.memory.store_outcome(
                key,
                CachedOutcome {
                    slice: decision.slice,
                    rate: decision.rate,
                    rbs: decision.rbs,
                    free_at_store: self.obs.free_rbs(decision.slice),
                },
            );
        }
        Ok((decision, handovers, intent, cache_hit))
    }
}

fn occupancy_digest(obs: &Observation) -> String {
    let parts: Vec<String> = obs
        .slices
        .iter()
        .map(|s| format!("{}:{}/{}", s.kind, s.used_rbs, s.total_rbs))
        .collect();
    format!("occ={}", parts.join(","))
}

/// Canonical text of an admission decision taken with `free` RBs available.
pub fn decision_digest(d: &Decision, free: u32) -> String {
    format!("admit slice={} rate={} rbs={} free={free}", d.slice, d.rate, d.rbs)
}

fn validate_intent(d: &SubtaskDecision, configs: &[SliceConfig], label: &str) -> Result<QosIntent, String> {
    let SubtaskDecision::Intent {
        rate_min,
        rate_max,
        latency_ms,
    } = *d
    else {
        return Err("expected an intent payload".into());
    };
    let rate_range = RateRange::new(rate_min, rate_max).map_err(|e| e.to_string())?;
    if latency_ms == 0 {
        return Err("latency must be positive".into());
    }
    if !configs.iter().any(|c| c.decision_range.contains(rate_range.min())) {
        return Err(format!("no slice admits a {rate_min} Mb/s minimum"));
    }
    Ok(QosIntent {
        intent_class: label.into(),
        rate_range,
        latency_ms,
    })
}

fn validate_registration(
    d: &SubtaskDecision,
    intent: &QosIntent,
    configs: &[SliceConfig],
) -> Result<SliceKind, String> {
    let SubtaskDecision::Registration { slice } = *d else {
        return Err("expected a registration payload".into());
    };
    let cfg = configs
        .iter()
        .find(|c| c.kind == slice)
        .ok_or_else(|| format!("slice {slice} not configured"))?;
    if !cfg.decision_range.contains(intent.rate_range.min()) {
        return Err(format!(
            "{slice} does not admit a {} Mb/s minimum",
            intent.rate_range.min()
        ));
    }
    Ok(slice)
}

fn validate_optimization(
    d: &SubtaskDecision,
    intent: &QosIntent,
    ledger: &SliceLedger,
    cap: RateCap,
) -> Result<Decision, String> {
    let SubtaskDecision::Optimization { rate } = *d else {
        return Err("expected an optimization payload".into());
    };
    let rate = Mbps(rate);
    if !intent.rate_range.contains(rate) || !ledger.config().decision_range.contains(rate) {
        return Err(format!("rate {rate} outside the intent or slice range"));
    }
    if let RateCap::Limit(c) = cap {
        if rate > c {
            return Err(format!("rate {rate} above channel cap {c}"));
        }
    }
    // greedy-min: a smaller feasible rate must not exist
    let rule = optimize(intent, ledger, cap).map_err(|e| e.to_string())?;
    if rule.rate != rate {
        return Err(format!(
            "rate {rate} is not the occupation-minimizing choice {}",
            rule.rate
        ));
    }
    Ok(rule)
}

fn validate_handover(d: &SubtaskDecision, state: &NetworkState, target: SliceKind) -> Result<HandoverPlan, String> {
    let SubtaskDecision::Handover { moves } = d else {
        return Err("expected a handover payload".into());
    };
    if moves.is_empty() {
        return Err("empty handover plan".into());
    }
    let mut freed = 0;
    for m in moves {
        if m.from != target {
            return Err(format!("move {m} does not leave {target}"));
        }
        let alloc = state
            .ledger(m.from)
            .ok()
            .and_then(|l| l.get(m.user))
            .ok_or_else(|| format!("user {} is not in {}", m.user, m.from))?;
        if alloc.rate != m.rate {
            return Err(format!("move {m} changes the user's rate"));
        }
        freed += alloc.rbs;
    }
    let plan = HandoverPlan {
        moves: moves.clone(),
        freed_rbs: freed,
    };
    let mut probe = state.clone();
    apply_handover(&mut probe, &plan).map_err(|e| e.to_string())?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Position;

    fn req(id: u32, service: &str) -> RawRequest {
        RawRequest {
            user: UserId(id),
            position: Position::new(60.0, 75.0),
            service_text: service.into(),
            csi_ref: None,
        }
    }

    fn strict() -> IntentCatalog {
        IntentCatalog {
            mode: IntentMode::Strict,
            ..IntentCatalog::default_catalog()
        }
    }

    #[test]
    fn intent_4k_video() {
        let i = understand_intent(&req(53, "4K video"), &strict()).unwrap();
        assert_eq!(i.rate_range, RateRange::new(12, 15).unwrap());
        assert_eq!(i.latency_ms, 90);
        assert_eq!(i.intent_class, "4K video");
    }

    #[test]
    fn intent_unknown_strict_and_lenient() {
        assert_eq!(
            understand_intent(&req(1, "quantum teleportation"), &strict()),
            Err(PlanError::UnknownIntent)
        );
        let lenient = IntentCatalog::default_catalog();
        let i = understand_intent(&req(1, "quantum teleportation"), &lenient).unwrap();
        assert_eq!(i, IntentCatalog::best_effort());
    }

    #[test]
    fn intent_substring_matches_longest_keyword() {
        let cat = strict();
        let phrase = understand_intent(&req(1, "please stream 4K video tonight"), &cat).unwrap();
        assert_eq!(phrase, understand_intent(&req(1, "4K video"), &cat).unwrap());
        // "video" (HD) is also contained; the longer "4k video" must win
        assert_eq!(phrase.intent_class, "4K video");
        // oracle: among all contained keywords, the longest belongs to the chosen class
        let text = "please stream 4k video tonight";
        let longest = cat
            .templates
            .iter()
            .flat_map(|t| t.keywords.iter().map(move |k| (k.len(), &t.label, k)))
            .filter(|(_, _, k)| text.contains(k.to_lowercase().as_str()))
            .max_by_key(|(len, _, _)| *len)
            .unwrap();
        assert_eq!(longest.1, &phrase.intent_class);
    }

    #[test]
    fn intent_empty_catalog() {
        let empty = IntentCatalog {
            templates: Vec::new(),
            mode: IntentMode::Lenient,
        };
        assert_eq!(understand_intent(&req(1, "x"), &empty), Err(PlanError::EmptyCatalog));
    }

    fn obs_with(embb_used: u32, urllc_used: u32) -> Observation {
        let mut net = NetworkState::with_defaults();
        let mut uid = 1000;
        // bites stay inside the slice range: never leave an eMBB remainder below 5
        let mut fill = |kind, mut left: u32, max: u32| {
            while left > 0 {
                let r = match left {
                    l if l >= max + 5 => max,
                    l if l > max => l - 5,
                    l => l,
                };
                net.admit(UserId(uid), kind, Mbps(r)).unwrap();
                uid += 1;
                left -= r;
            }
        };
        fill(SliceKind::Embb, embb_used, 20);
        fill(SliceKind::Urllc, urllc_used, 5);
        observe(&net)
    }

    fn intent(min: u32, max: u32) -> QosIntent {
        QosIntent {
            intent_class: "t".into(),
            rate_range: RateRange::new(min, max).unwrap(),
            latency_ms: 100,
        }
    }

    #[test]
    fn register_examples() {
        let cfgs = SliceConfig::defaults();
        let o = obs_with(0, 0);
        assert_eq!(register(&intent(12, 15), &cfgs, &o), Ok(SliceKind::Embb));
        assert_eq!(register(&intent(3, 5), &cfgs, &o), Ok(SliceKind::Urllc));
        // overlap: eMBB 81/90 = 0.9, URLLC 15/30 = 0.5 -> URLLC
        let o = obs_with(81, 15);
        assert_eq!(register(&intent(5, 8), &cfgs, &o), Ok(SliceKind::Urllc));
        // overlap, eMBB less occupied
        let o = obs_with(45, 20);
        assert_eq!(register(&intent(5, 8), &cfgs, &o), Ok(SliceKind::Embb));
        // exact tie -> URLLC
        let o = obs_with(45, 15);
        assert_eq!(register(&intent(5, 8), &cfgs, &o), Ok(SliceKind::Urllc));
        assert_eq!(
            register(&intent(25, 30), &cfgs, &o),
            Err(PlanError::NoEligibleSlice(Mbps(25)))
        );
    }

    #[test]
    fn optimize_examples() {
        let mut embb = SliceLedger::new(SliceConfig::embb());
        embb.admit(UserId(1), Mbps(12)).unwrap();
        embb.admit(UserId(2), Mbps(5)).unwrap();
        embb.admit(UserId(3), Mbps(5)).unwrap();
        assert_eq!(embb.free_rbs(), 68);
        let d = optimize(&intent(12, 15), &embb, RateCap::Unbounded).unwrap();
        assert_eq!(
            d,
            Decision {
                slice: SliceKind::Embb,
                rate: Mbps(12),
                rbs: 12
            }
        );

        let mut full = SliceLedger::new(SliceConfig::embb());
        for u in 0..6 {
            full.admit(UserId(10 + u), Mbps(15)).unwrap();
        }
        assert_eq!(
            optimize(&intent(12, 15), &full, RateCap::Unbounded),
            Err(PlanError::Infeasible { needed_rbs: 12 })
        );
        assert_eq!(
            optimize(&intent(5, 20), &embb, RateCap::Limit(Mbps(4))),
            Err(PlanError::CapBelowMin {
                cap: Mbps(4),
                min: Mbps(5)
            })
        );
        assert!(optimize(&intent(5, 20), &embb, RateCap::Limit(Mbps(5))).is_ok());
    }

    #[test]
    fn qos_report_flags_below_minimum() {
        let mut net = NetworkState::with_defaults();
        net.admit(UserId(1), SliceKind::Embb, Mbps(12)).unwrap();
        net.admit(UserId(2), SliceKind::Embb, Mbps(5)).unwrap();
        let mut intents = BTreeMap::new();
        intents.insert(UserId(1), intent(12, 15));
        intents.insert(UserId(2), intent(12, 15));
        let report = evaluate_qos(&net, &intents);
        assert!(!report.ok());
        let bad: Vec<UserId> = report.violations().map(|e| e.user).collect();
        assert_eq!(bad, [UserId(2)]);
        intents.insert(UserId(2), intent(5, 8));
        assert!(evaluate_qos(&net, &intents).ok());
        intents.remove(&UserId(1));
        let report = evaluate_qos(&net, &intents);
        assert!(report.entries.iter().find(|e| e.user == UserId(1)).unwrap().intent_ok);
    }

    #[test]
    fn transition_relation() {
        use PlanState::*;
        assert!(IntentUnderstanding.can_transition(UserRegistration));
        assert!(QosEvaluation.can_transition(SliceHandover));
        assert!(SliceHandover.can_transition(SliceOptimization));
        assert!(SliceOptimization.can_transition(Rejected));
        assert!(!IntentUnderstanding.can_transition(SliceOptimization));
        assert!(!SliceHandover.can_transition(QosEvaluation));
        assert!(!Done.can_transition(Rejected));
        assert!(!QosEvaluation.can_transition(UserRegistration));
    }

    fn congested_embb(overlap_users: &[u32]) -> NetworkState {
        let mut net = NetworkState::with_defaults();
        let mut used = 0;
        for &u in overlap_users {
            net.admit(UserId(u), SliceKind::Embb, Mbps(5)).unwrap();
            used += 5;
        }
        let mut uid = 500;
        while used < 90 {
            let r = (90 - used).min(20);
            let r = if r < 6 { r.max(5) } else { r.max(6) };
            net.admit(UserId(uid), SliceKind::Embb, Mbps(r)).unwrap();
            used += r;
            uid += 1;
        }
        net
    }

    #[test]
    fn handover_two_overlap_users() {
        let net = congested_embb(&[110, 115]);
        assert_eq!(net.ledger(SliceKind::Embb).unwrap().free_rbs(), 0);
        let plan = plan_handover(&net, SliceKind::Embb, 7).unwrap();
        let users: Vec<UserId> = plan.moves.iter().map(|m| m.user).collect();
        assert_eq!(users, [UserId(110), UserId(115)]);
        assert_eq!(plan.freed_rbs, 10);
        assert!(plan.moves.iter().all(|m| m.to == SliceKind::Urllc && m.rate == Mbps(5)));
    }

    #[test]
    fn handover_infeasible_cases() {
        let mut net = NetworkState::with_defaults();
        for u in 0..6 {
            net.admit(UserId(u + 1), SliceKind::Embb, Mbps(15)).unwrap();
        }
        assert_eq!(plan_handover(&net, SliceKind::Embb, 12), Err(PlanError::NoFeasiblePlan));

        let mut net = congested_embb(&[7]);
        for u in 0..26 {
            net.admit(UserId(900 + u), SliceKind::Urllc, Mbps(1)).unwrap();
        }
        assert_eq!(net.ledger(SliceKind::Urllc).unwrap().free_rbs(), 4);
        assert_eq!(plan_handover(&net, SliceKind::Embb, 5), Err(PlanError::NoFeasiblePlan));
    }

    #[test]
    fn handover_zero_shortfall_is_empty() {
        let net = NetworkState::with_defaults();
        assert_eq!(
            plan_handover(&net, SliceKind::Embb, 10).unwrap(),
            HandoverPlan::default()
        );
    }

    #[test]
    fn exact_fallback_finds_plan_greedy_misses() {
        // widened overlap: URLLC [1,5], eMBB [3,20]; candidates at 3 and 4, URLLC room 4
        let mut embb = SliceConfig::embb();
        embb.decision_range = RateRange::new(3, 20).unwrap();
        let mut net = NetworkState::new(&[SliceConfig::urllc(), embb]).unwrap();
        net.admit(UserId(1), SliceKind::Embb, Mbps(3)).unwrap();
        net.admit(UserId(2), SliceKind::Embb, Mbps(4)).unwrap();
        for u in 0..4 {
            net.admit(UserId(10 + u), SliceKind::Embb, Mbps(20)).unwrap();
        }
        net.admit(UserId(20), SliceKind::Embb, Mbps(3)).unwrap();
        assert_eq!(net.ledger(SliceKind::Embb).unwrap().free_rbs(), 0);
        for u in 0..26 {
            net.admit(UserId(100 + u), SliceKind::Urllc, Mbps(1)).unwrap();
        }
        let plan = plan_handover(&net, SliceKind::Embb, 4).unwrap();
        assert_eq!(plan.moves.len(), 1);
        assert_eq!(plan.moves[0].user, UserId(2));
    }
}
