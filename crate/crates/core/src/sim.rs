//! Sequential-arrival experiment: scenario generation, the run loop for both
//! controllers, and checkpoint comparison.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baseline::{GroundTruthSlice, TraditionalController};
use crate::domain::{Mbps, NetworkState, Position, RejectReason, SliceConfig, SliceKind, UserId};
use crate::memory::MemoryStore;
use crate::perception::RawRequest;
use crate::planning::{Agent, IntentCatalog, Move, Outcome, PlanTrace, Planner, WorkflowConfig, WorkflowResult};
use crate::tools::{ChannelModel, ZfChannel};

/// Checkpoints are taken every this many arrivals.
pub const CHECKPOINT_EVERY: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Arrival {
    pub user: UserId,
    pub position: Position,
    pub service_class: String,
    pub truth: GroundTruthSlice,
}

impl Arrival {
    pub fn request(&self) -> RawRequest {
        RawRequest {
            user: self.user,
            position: self.position,
            service_text: self.service_class.clone(),
            csi_ref: Some(u64::from(self.user.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub n_users: usize,
    pub area_m: f64,
    pub bs_position: Position,
    pub arrivals: Vec<Arrival>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("need at least one user")]
    NoUsers,
    #[error("area side must be positive")]
    BadArea,
    #[error("{0}")]
    Catalog(#[from] crate::planning::PlanError),
    #[error("{0}")]
    Slices(#[from] crate::domain::DomainError),
    #[error("{0}")]
    Channel(#[from] crate::tools::ToolError),
    #[error("policy needs a configured {0} slice")]
    MissingSlice(SliceKind),
}

/// Positions uniform on the square, classes drawn by catalog weight, arrival
/// order a seeded permutation of `1..=n_users`.
pub fn gen_scenario(seed: u64, n_users: usize, area_m: f64, catalog: &IntentCatalog) -> Result<Scenario, ConfigError> {
    if n_users == 0 {
        return Err(ConfigError::NoUsers);
    }
    if !(area_m.is_finite() && area_m > 0.0) {
        return Err(ConfigError::BadArea);
    }
    if catalog.is_empty() {
        return Err(ConfigError::Catalog(crate::planning::PlanError::EmptyCatalog));
    }
    let weights = WeightedIndex::new(catalog.templates.iter().map(|t| t.weight))
        .map_err(|_| crate::planning::PlanError::BadCatalog("weights must be non-negative, not all zero".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = (1..=n_users as u32).collect();
    order.shuffle(&mut rng);
    let arrivals = order
        .into_iter()
        .map(|id| {
            let position = Position::new(rng.random_range(0.0..=area_m), rng.random_range(0.0..=area_m));
            let t = &catalog.templates[weights.sample(&mut rng)];
            Arrival {
                user: UserId(id),
                position,
                service_class: t.label.clone(),
                truth: t.slice,
            }
        })
        .collect();
    Ok(Scenario {
        seed,
        n_users,
        area_m,
        bs_position: Position::new(area_m / 2.0, area_m / 2.0),
        arrivals,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Agent,
    Traditional,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Agent => "agent",
            Policy::Traditional => "traditional",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelMode {
    Ideal,
    Zfbf(ChannelModel),
}

impl ChannelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelMode::Ideal => "ideal",
            ChannelMode::Zfbf(_) => "zfbf",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub policy: Policy,
    pub channel: ChannelMode,
    pub workflow: WorkflowConfig,
    pub slices: Vec<SliceConfig>,
    pub catalog: IntentCatalog,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Agent,
            channel: ChannelMode::Ideal,
            workflow: WorkflowConfig::default(),
            slices: SliceConfig::defaults(),
            catalog: IntentCatalog::default_catalog(),
        }
    }
}

impl RunConfig {
    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let _ = NetworkState::new(&self.slices)?;
        self.catalog.validate(&self.slices)?;
        if let ChannelMode::Zfbf(model) = &self.channel {
            model.validate()?;
        }
        for kind in [SliceKind::Embb, SliceKind::Urllc] {
            if !self.slices.iter().any(|s| s.kind == kind) {
                return Err(ConfigError::MissingSlice(kind));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Admitted { slice: SliceKind, rate: Mbps, rbs: u32 },
    Blocked(RejectReason),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub arrival_index: u64,
    pub user: UserId,
    pub intent_class: String,
    pub outcome: StepOutcome,
    pub embb_occ: f64,
    pub urllc_occ: f64,
    pub aggregate_occ: f64,
    pub handovers: u32,
    /// Handover moves taken this step; not carried through CSV.
    pub moves: Vec<Move>,
    pub embb_users: u32,
    pub urllc_users: u32,
    pub blocked_total: u32,
}

impl StepRecord {
    pub fn served(&self) -> u32 {
        self.embb_users + self.urllc_users
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunEcho {
    pub policy: Policy,
    pub seed: u64,
    pub n_users: usize,
    pub area_m: f64,
    pub channel: &'static str,
    pub max_reflect: u32,
    pub planner: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arrivals: usize,
    pub embb_users: u32,
    pub urllc_users: u32,
    pub aggregate_occ: f64,
}

impl Checkpoint {
    pub fn served(&self) -> u32 {
        self.embb_users + self.urllc_users
    }
}

pub fn checkpoints(steps: &[StepRecord]) -> Vec<Checkpoint> {
    steps
        .iter()
        .enumerate()
        .filter(|(i, _)| (i + 1) % CHECKPOINT_EVERY == 0 || i + 1 == steps.len())
        .map(|(i, s)| Checkpoint {
            arrivals: i + 1,
            embb_users: s.embb_users,
            urllc_users: s.urllc_users,
            aggregate_occ: s.aggregate_occ,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultLog {
    pub echo: RunEcho,
    pub steps: Vec<StepRecord>,
    pub summary: Vec<Checkpoint>,
}

/// Everything one run produces beyond the log itself.
pub struct RunOutput {
    pub log: ResultLog,
    pub outcomes: Vec<Outcome>,
    /// Agent runs only.
    pub traces: Vec<PlanTrace>,
    pub workflow: Vec<WorkflowResult>,
    pub memory: Option<MemoryStore>,
    pub final_state: NetworkState,
}

/// A configured experiment, optionally with a custom planner or pre-filled memory.
pub struct Simulation {
    config: RunConfig,
    planner: Option<Box<dyn Planner>>,
    memory: Option<MemoryStore>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            planner: None,
            memory: None,
        })
    }

    pub fn with_planner(mut self, planner: Box<dyn Planner>) -> Self {
        self.planner = Some(planner);
        self
    }

    pub fn with_memory(mut self, memory: MemoryStore) -> Self {
        self.memory = Some(memory);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(self, scenario: &Scenario) -> RunOutput {
        self.run_observed(scenario, |_, _| {})
    }

    /// Runs the scenario, calling `observe` after every arrival.
    pub fn run_observed(self, scenario: &Scenario, mut observe: impl FnMut(&NetworkState, &StepRecord)) -> RunOutput {
        let Simulation {
            config,
            planner,
            memory,
        } = self;
        let mut state = NetworkState::new(&config.slices).expect("validated");
        let mut agent = match config.policy {
            Policy::Agent => {
                let mut agent = Agent::new(config.catalog.clone(), config.workflow);
                if let Some(p) = planner {
                    agent = agent.with_planner(p);
                }
                if let Some(m) = memory {
                    agent = agent.with_memory(m);
                }
                if let ChannelMode::Zfbf(model) = config.channel {
                    let mut zf = ZfChannel::new(model, scenario.seed, scenario.bs_position);
                    for a in &scenario.arrivals {
                        zf.set_position(a.user, a.position);
                    }
                    agent = agent.with_caps(Box::new(zf));
                }
                Some(agent)
            }
            Policy::Traditional => None,
        };
        let mut traditional = TraditionalController::new(baseline_seed(scenario.seed));
        let planner_name = agent.as_ref().map_or("none".into(), |a| String::from(a.planner.name()));

        let mut steps = Vec::with_capacity(scenario.arrivals.len());
        let mut outcomes = Vec::with_capacity(scenario.arrivals.len());
        let mut traces = Vec::new();
        let mut workflow = Vec::new();
        let mut blocked_total = 0u32;
        for (i, arrival) in scenario.arrivals.iter().enumerate() {
            state.arrival_index = i as u64 + 1;
            let (outcome, intent_class) = match agent.as_mut() {
                Some(agent) => {
                    let result = agent.run_workflow(&arrival.request(), &mut state);
                    let class = result
                        .intent
                        .as_ref()
                        .map_or_else(|| arrival.service_class.clone(), |i| i.intent_class.clone());
                    let outcome = result.outcome.clone();
                    traces.push(result.trace.clone());
                    workflow.push(result);
                    (outcome, class)
                }
                None => (
                    traditional.handle(arrival.user, arrival.truth, &mut state),
                    arrival.service_class.clone(),
                ),
            };
            let (step_outcome, moves) = match &outcome {
                Outcome::Admitted { decision, handovers } => (
                    StepOutcome::Admitted {
                        slice: decision.slice,
                        rate: decision.rate,
                        rbs: decision.rbs,
                    },
                    handovers.clone(),
                ),
                Outcome::Rejected { reason } => {
                    state.block(arrival.user, reason.clone());
                    blocked_total += 1;
                    (StepOutcome::Blocked(reason.clone()), Vec::new())
                }
            };
            let occ = |kind| state.ledger(kind).map_or(0.0, crate::domain::occupancy_rate);
            let users = |kind| state.ledger(kind).map_or(0, |l| l.len() as u32);
            let record = StepRecord {
                arrival_index: state.arrival_index,
                user: arrival.user,
                intent_class,
                outcome: step_outcome,
                embb_occ: occ(SliceKind::Embb),
                urllc_occ: occ(SliceKind::Urllc),
                aggregate_occ: state.aggregate_occupancy(),
                handovers: moves.len() as u32,
                moves,
                embb_users: users(SliceKind::Embb),
                urllc_users: users(SliceKind::Urllc),
                blocked_total,
            };
            observe(&state, &record);
            steps.push(record);
            outcomes.push(outcome);
        }
        let summary = checkpoints(&steps);
        RunOutput {
            log: ResultLog {
                echo: RunEcho {
                    policy: config.policy,
                    seed: scenario.seed,
                    n_users: scenario.n_users,
                    area_m: scenario.area_m,
                    channel: config.channel.as_str(),
                    max_reflect: config.workflow.max_reflect,
                    planner: planner_name,
                },
                steps,
                summary,
            },
            outcomes,
            traces,
            workflow,
            memory: agent.map(|a| a.memory),
            final_state: state,
        }
    }
}

fn baseline_seed(seed: u64) -> u64 {
    seed ^ 0xB45E_11E5_0000_0001
}

/// Runs `scenario` under `config` with the rule-based planner.
pub fn run(scenario: &Scenario, config: &RunConfig) -> Result<ResultLog, ConfigError> {
    Ok(Simulation::new(config.clone())?.run(scenario).log)
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("logs come from different scenarios: {0}")]
pub struct ScenarioMismatch(pub String);

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub arrivals: usize,
    pub a: Checkpoint,
    pub b: Checkpoint,
}

impl ComparisonRow {
    pub fn served_delta(&self) -> i64 {
        i64::from(self.a.served()) - i64::from(self.b.served())
    }

    pub fn embb_delta(&self) -> i64 {
        i64::from(self.a.embb_users) - i64::from(self.b.embb_users)
    }

    pub fn urllc_delta(&self) -> i64 {
        i64::from(self.a.urllc_users) - i64::from(self.b.urllc_users)
    }

    pub fn occupancy_delta(&self) -> f64 {
        self.a.aggregate_occ - self.b.aggregate_occ
    }
}

/// Checkpoint-by-checkpoint comparison of two runs over the same arrivals.
pub fn compare(a: &[StepRecord], b: &[StepRecord]) -> Result<Vec<ComparisonRow>, ScenarioMismatch> {
    if a.len() != b.len() {
        return Err(ScenarioMismatch(alloc::format!("{} vs {} arrivals", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.user != y.user) {
        return Err(ScenarioMismatch(alloc::format!(
            "arrival {} is user {} in one log and user {} in the other",
            x.arrival_index,
            x.user,
            y.user
        )));
    }
    Ok(checkpoints(a)
        .into_iter()
        .zip(checkpoints(b))
        .map(|(a, b)| ComparisonRow {
            arrivals: a.arrivals,
            a,
            b,
        })
        .collect())
}
