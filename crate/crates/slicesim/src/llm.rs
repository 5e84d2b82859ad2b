//! LLM-backed planner over a chat-completion endpoint, with record/replay
//! fixtures.
//!
//! Every answer is parsed into a [`SubtaskDecision`] and then handed to the
//! core workflow, which validates it exactly like a rule-based decision.
//! Anything that fails along the way becomes a [`PlannerFault`], and the
//! workflow falls back to the rules for that sub-task.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::rc::Rc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use slicesim_core::domain::{SliceKind, UserId};
use slicesim_core::planning::{rule_decision, DecisionContext, Move, Planner, PlannerFault, Subtask, SubtaskDecision};

pub const ENV_BASE_URL: &str = "SLICESIM_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "SLICESIM_LLM_API_KEY";
pub const ENV_MODEL: &str = "SLICESIM_LLM_MODEL";

/// Response a planner gives to leave a sub-task to the rules.
pub const DEFER_RESPONSE: &str = r#"{"defer":true}"#;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt needs context field `{0}`")]
    MissingContextField(String),
    #[error("sub-task {0} takes no prompt")]
    NoPrompt(Subtask),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schema: {0}")]
pub struct SchemaError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("http: {0}")]
    Http(String),
    #[error("unexpected response body: {0}")]
    BadBody(String),
    #[error("no fixture entry for arrival {arrival_index} {subtask}")]
    MissingFixture { arrival_index: u64, subtask: Subtask },
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

/// Named context values a prompt can reference as `{name}`.
pub type PromptContext = BTreeMap<&'static str, String>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub subtask: Subtask,
    pub text: String,
}

const PREAMBLE: &str = "You are the slice manager of a 5G base station with two network slices. \
Work through the request one sub-task at a time: intent understanding, user registration, \
slice optimization, QoS evaluation and slice handover. This message asks for one sub-task only.\n\n";

const INTENT_BODY: &str = "Sub-task: intent understanding.\n\
User {user} at position {position} asks for: \"{service}\"\n\n\
Known service classes:\n{catalog}\n\
Slices:\n{slices}\n\
Current occupancy:\n{occupancy}\n\n\
Steps: name the service, recall its class, then state the minimum rate, the maximum rate and the latency bound.\n";

const REGISTRATION_BODY: &str = "Sub-task: user registration.\n\
User {user} needs: {intent}\n\n\
Slices:\n{slices}\n\
Current occupancy:\n{occupancy}\n\n\
Steps: list the slices whose decision range contains the minimum rate; if several do, pick the less occupied one, URLLC on a tie.\n";

const OPTIMIZATION_BODY: &str = "Sub-task: slice optimization.\n\
User {user} needs: {intent}\n\
Registered slice: {slice}\n\
Channel rate cap: {rate_cap}\n\n\
Slices:\n{slices}\n\
Current occupancy:\n{occupancy}\n\n\
Steps: choose the rate that keeps occupancy lowest while meeting the intent, within the slice range and the cap. \
If the slice cannot fit it, defer.\n";

const HANDOVER_BODY: &str = "Sub-task: slice handover.\n\
Slice {slice} needs {needed_rbs} RBs for user {user} ({intent}).\n\n\
Users that may move (rate inside both slice ranges):\n{candidates}\n\
Current occupancy:\n{occupancy}\n\n\
Steps: move as few users as possible out of {slice}, keep every moved user's rate, never overfill the destination.\n";

fn schema_text(subtask: Subtask) -> Option<&'static str> {
    Some(match subtask {
        Subtask::IntentUnderstanding => {
            "Reply with exactly one JSON object: {\"rate_min\": <int Mb/s>, \"rate_max\": <int Mb/s>, \"latency_ms\": <int>}"
        }
        Subtask::UserRegistration => "Reply with exactly one JSON object: {\"slice\": \"URLLC\" | \"eMBB\"}",
        Subtask::SliceOptimization => {
            "Reply with exactly one JSON object: {\"rate\": <int Mb/s>}, or {\"defer\": true} if it cannot fit"
        }
        Subtask::SliceHandover => {
            "Reply with exactly one JSON object: {\"moves\": [{\"user\": <int>, \"from\": \"URLLC\" | \"eMBB\", \"to\": \"URLLC\" | \"eMBB\", \"rate\": <int Mb/s>}]}, or {\"defer\": true}"
        }
        Subtask::QosEvaluation => return None,
    })
}

impl PromptTemplate {
    /// Built-in template for a sub-task. QoS evaluation is never delegated.
    pub fn builtin(subtask: Subtask) -> Option<Self> {
        let body = match subtask {
            Subtask::IntentUnderstanding => INTENT_BODY,
            Subtask::UserRegistration => REGISTRATION_BODY,
            Subtask::SliceOptimization => OPTIMIZATION_BODY,
            Subtask::SliceHandover => HANDOVER_BODY,
            Subtask::QosEvaluation => return None,
        };
        Some(Self {
            subtask,
            text: format!("{PREAMBLE}{body}\n{{schema}}\n"),
        })
    }

    /// Substitutes every `{name}`; an unknown name fails the whole render.
    /// `{schema}` comes from the sub-task, not the context.
    pub fn render(&self, ctx: &PromptContext) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| PromptError::MissingContextField(after.chars().take(16).collect()))?;
            let name = &after[..close];
            if name == "schema" {
                out.push_str(schema_text(self.subtask).ok_or(PromptError::NoPrompt(self.subtask))?);
            } else {
                let value = ctx
                    .get(name)
                    .ok_or_else(|| PromptError::MissingContextField(name.to_string()))?;
                out.push_str(value);
            }
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub fn render_prompt(subtask: Subtask, ctx: &PromptContext) -> Result<String, PromptError> {
    PromptTemplate::builtin(subtask)
        .ok_or(PromptError::NoPrompt(subtask))?
        .render(ctx)
}

/// Serialises what a planner may see for this sub-task.
pub fn context_fields(ctx: &DecisionContext<'_>) -> PromptContext {
    let mut f = PromptContext::new();
    f.insert("arrival", ctx.arrival_index.to_string());
    f.insert("user", ctx.request.user.to_string());
    f.insert(
        "position",
        format!("({}, {})", ctx.request.position.x, ctx.request.position.y),
    );
    f.insert("service", ctx.request.service_text.clone());
    let mut occ = String::new();
    for s in &ctx.observation.slices {
        let _ = writeln!(
            occ,
            "- {}: {}/{} RBs used ({:.1}%), {} free",
            s.kind,
            s.used_rbs,
            s.total_rbs,
            s.occupancy * 100.0,
            s.free_rbs
        );
    }
    f.insert("occupancy", occ);
    let mut cat = String::new();
    for t in &ctx.catalog.templates {
        let _ = writeln!(
            cat,
            "- {}: rate {} Mb/s, latency {} ms",
            t.label, t.rate_range, t.latency_ms
        );
    }
    f.insert("catalog", cat);
    let mut slices = String::new();
    for c in ctx.configs {
        let _ = writeln!(
            slices,
            "- {}: {} RBs of {} Mb/s, decision range {} Mb/s, latency bound {} ms",
            c.kind, c.total_rbs, c.rb_rate, c.decision_range, c.latency_bound_ms
        );
    }
    f.insert("slices", slices);
    if let Some(i) = ctx.intent {
        f.insert(
            "intent",
            format!("{} at {} Mb/s within {} ms", i.intent_class, i.rate_range, i.latency_ms),
        );
    }
    if let Some(slice) = ctx.slice {
        f.insert("slice", slice.to_string());
        let mut cands = String::new();
        if let Ok(ledger) = ctx.state.ledger(slice) {
            let range = ledger.config().decision_range;
            for other in ctx.configs.iter().filter(|c| c.kind != slice) {
                let Some(overlap) = range.overlap(&other.decision_range) else {
                    continue;
                };
                let room = ctx.state.ledger(other.kind).map_or(0, |l| l.free_rbs());
                let _ = writeln!(cands, "- destination {} has {room} free RBs", other.kind);
                for (user, a) in ledger.allocations() {
                    if overlap.contains(a.rate) {
                        let _ = writeln!(cands, "- user {user}: {} Mb/s, {} RBs", a.rate, a.rbs);
                    }
                }
            }
        }
        if cands.is_empty() {
            cands.push_str("- none\n");
        }
        f.insert("candidates", cands);
    }
    if let Some(cap) = ctx.rate_cap {
        f.insert("rate_cap", cap.to_string());
    }
    if let Some(n) = ctx.needed_rbs {
        f.insert("needed_rbs", n.to_string());
    }
    f
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LlmAnswer {
    Decision(SubtaskDecision),
    /// Leave this sub-task to the rules.
    Defer,
}

/// First syntactically complete JSON object in `text`.
fn first_object(text: &str) -> Option<Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut it = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match it.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn uint(map: &Map<String, Value>, key: &str) -> Result<u32, SchemaError> {
    let v = map.get(key).ok_or_else(|| SchemaError(format!("missing `{key}`")))?;
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| SchemaError(format!("`{key}` must be a positive integer, got {v}")))
}

fn slice_field(map: &Map<String, Value>, key: &str) -> Result<SliceKind, SchemaError> {
    let v = map.get(key).ok_or_else(|| SchemaError(format!("missing `{key}`")))?;
    v.as_str()
        .and_then(SliceKind::parse)
        .ok_or_else(|| SchemaError(format!("`{key}` must be \"URLLC\" or \"eMBB\", got {v}")))
}

/// Extracts and type-checks the answer for `subtask`. Range checks against the
/// live network happen later, in the workflow.
pub fn parse_decision(subtask: Subtask, response: &str) -> Result<LlmAnswer, SchemaError> {
    let map = first_object(response).ok_or_else(|| SchemaError("no JSON object in response".into()))?;
    if map.get("defer").and_then(Value::as_bool) == Some(true) {
        return Ok(LlmAnswer::Defer);
    }
    let d = match subtask {
        Subtask::IntentUnderstanding => {
            let rate_min = uint(&map, "rate_min")?;
            let rate_max = uint(&map, "rate_max")?;
            if rate_min > rate_max {
                return Err(SchemaError(format!("rate_min {rate_min} > rate_max {rate_max}")));
            }
            SubtaskDecision::Intent {
                rate_min,
                rate_max,
                latency_ms: uint(&map, "latency_ms")?,
            }
        }
        Subtask::UserRegistration => SubtaskDecision::Registration {
            slice: slice_field(&map, "slice")?,
        },
        Subtask::SliceOptimization => SubtaskDecision::Optimization {
            rate: uint(&map, "rate")?,
        },
        Subtask::SliceHandover => {
            let moves = map
                .get("moves")
                .and_then(Value::as_array)
                .ok_or_else(|| SchemaError("`moves` must be an array".into()))?;
            if moves.is_empty() {
                return Err(SchemaError("`moves` is empty".into()));
            }
            let moves = moves
                .iter()
                .map(|m| {
                    let m = m
                        .as_object()
                        .ok_or_else(|| SchemaError("move must be an object".into()))?;
                    let mv = Move {
                        user: UserId(uint(m, "user")?),
                        from: slice_field(m, "from")?,
                        to: slice_field(m, "to")?,
                        rate: slicesim_core::domain::Mbps(uint(m, "rate")?),
                    };
                    if mv.from == mv.to {
                        return Err(SchemaError(format!("move {mv} does not change slice")));
                    }
                    Ok(mv)
                })
                .collect::<Result<Vec<_>, _>>()?;
            SubtaskDecision::Handover { moves }
        }
        Subtask::QosEvaluation => return Err(SchemaError("QoS evaluation takes no decision".into())),
    };
    Ok(LlmAnswer::Decision(d))
}

/// The JSON a well-behaved model would return for `d`.
pub fn encode_decision(d: &SubtaskDecision) -> String {
    let v = match d {
        SubtaskDecision::Intent {
            rate_min,
            rate_max,
            latency_ms,
        } => json!({"rate_min": rate_min, "rate_max": rate_max, "latency_ms": latency_ms}),
        SubtaskDecision::Registration { slice } => json!({"slice": slice.as_str()}),
        SubtaskDecision::Optimization { rate } => json!({"rate": rate}),
        SubtaskDecision::Handover { moves } => json!({
            "moves": moves
                .iter()
                .map(|m| json!({"user": m.user.0, "from": m.from.as_str(), "to": m.to.as_str(), "rate": m.rate.0}))
                .collect::<Vec<_>>()
        }),
    };
    v.to_string()
}

/// One recorded exchange. Fixture files hold one of these per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub arrival_index: u64,
    pub subtask: String,
    pub prompt: String,
    pub response: String,
}

/// Recorded responses keyed by (arrival, sub-task), consumed in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fixture {
    entries: BTreeMap<(u64, Subtask), VecDeque<String>>,
}

impl Fixture {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Result<Self, LlmError> {
        let mut f = Fixture::default();
        for e in entries {
            let subtask = Subtask::parse(&e.subtask)
                .ok_or_else(|| LlmError::Fixture(format!("unknown sub-task {:?}", e.subtask)))?;
            f.entries
                .entry((e.arrival_index, subtask))
                .or_default()
                .push_back(e.response);
        }
        Ok(f)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, LlmError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str::<FixtureEntry>(l).map_err(|e| LlmError::Fixture(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
            text.push_str(&line);
            text.push('\n');
        }
        Self::parse_jsonl(&text)
    }

    pub fn next(&mut self, arrival_index: u64, subtask: Subtask) -> Result<String, TransportError> {
        self.entries
            .get_mut(&(arrival_index, subtask))
            .and_then(VecDeque::pop_front)
            .ok_or(TransportError::MissingFixture { arrival_index, subtask })
    }

    pub fn remaining(&self) -> usize {
        self.entries.values().map(VecDeque::len).sum()
    }
}

pub fn write_jsonl<W: Write>(entries: &[FixtureEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub temperature: f64,
}

impl LiveConfig {
    pub fn from_env() -> Result<Self, LlmError> {
        let var = |name: &'static str| std::env::var(name).map_err(|_| LlmError::MissingEnv(name));
        Ok(Self {
            base_url: var(ENV_BASE_URL)?,
            api_key: var(ENV_API_KEY)?,
            model: var(ENV_MODEL)?,
            timeout: Duration::from_secs(60),
            temperature: 0.0,
        })
    }
}

pub struct LiveClient {
    config: LiveConfig,
    http: reqwest::blocking::Client,
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        Ok(Self { config, http })
    }

    /// One chat-completion request; returns the first choice's message text.
    pub fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .http
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Http(e.to_string())
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        let v: Value = resp.json().map_err(|e| TransportError::BadBody(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::BadBody("no choices[0].message.content".into()))
    }
}

pub enum Transport {
    Live(LiveClient),
    Replay(Fixture),
}

impl Transport {
    pub fn respond(&mut self, arrival_index: u64, subtask: Subtask, prompt: &str) -> Result<String, TransportError> {
        match self {
            Transport::Live(c) => c.complete(prompt),
            Transport::Replay(f) => f.next(arrival_index, subtask),
        }
    }
}

/// Where recorded exchanges go.
#[derive(Clone)]
pub enum Recorder {
    File(Rc<RefCell<BufWriter<File>>>),
    Memory(Rc<RefCell<Vec<FixtureEntry>>>),
}

impl Recorder {
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        Ok(Recorder::File(Rc::new(RefCell::new(BufWriter::new(File::create(
            path,
        )?)))))
    }

    pub fn memory() -> (Self, Rc<RefCell<Vec<FixtureEntry>>>) {
        let sink = Rc::new(RefCell::new(Vec::new()));
        (Recorder::Memory(sink.clone()), sink)
    }

    pub fn push(&self, entry: FixtureEntry) -> std::io::Result<()> {
        match self {
            Recorder::File(w) => {
                let mut w = w.borrow_mut();
                serde_json::to_writer(&mut *w, &entry)?;
                w.write_all(b"\n")?;
                w.flush()
            }
            Recorder::Memory(v) => {
                v.borrow_mut().push(entry);
                Ok(())
            }
        }
    }
}

/// Renders the prompt, asks the transport and parses the answer.
pub fn run_with_transport(
    transport: &mut Transport,
    subtask: Subtask,
    arrival_index: u64,
    ctx: &PromptContext,
    recorder: Option<&Recorder>,
) -> Result<LlmAnswer, LlmError> {
    let prompt = render_prompt(subtask, ctx)?;
    let response = transport.respond(arrival_index, subtask, &prompt)?;
    if let Some(r) = recorder {
        r.push(FixtureEntry {
            arrival_index,
            subtask: subtask.as_str().into(),
            prompt,
            response: response.clone(),
        })
        .map_err(|e| LlmError::Fixture(e.to_string()))?;
    }
    Ok(parse_decision(subtask, &response)?)
}

pub struct LlmPlanner {
    transport: Transport,
    recorder: Option<Recorder>,
    name: String,
}

impl LlmPlanner {
    pub fn new(transport: Transport) -> Self {
        let name = match &transport {
            Transport::Live(c) => format!("llm live {}", c.config.model),
            Transport::Replay(_) => "llm replay".into(),
        };
        Self {
            transport,
            recorder: None,
            name,
        }
    }

    pub fn recording(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }
}

impl Planner for LlmPlanner {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, ctx: &DecisionContext<'_>) -> Result<Option<SubtaskDecision>, PlannerFault> {
        if ctx.subtask == Subtask::QosEvaluation {
            return Ok(None);
        }
        let fields = context_fields(ctx);
        match run_with_transport(
            &mut self.transport,
            ctx.subtask,
            ctx.arrival_index,
            &fields,
            self.recorder.as_ref(),
        ) {
            Ok(LlmAnswer::Decision(d)) => Ok(Some(d)),
            Ok(LlmAnswer::Defer) => Ok(None),
            Err(e) => Err(PlannerFault(e.to_string())),
        }
    }
}

/// Defers every sub-task to the rules while recording what the rules would
/// have answered, producing a fixture a replay run can reproduce exactly.
pub struct RuleRecorder {
    recorder: Recorder,
}

impl RuleRecorder {
    pub fn new(recorder: Recorder) -> Self {
        Self { recorder }
    }
}

impl Planner for RuleRecorder {
    fn name(&self) -> &str {
        "rule-based (recording)"
    }

    fn propose(&mut self, ctx: &DecisionContext<'_>) -> Result<Option<SubtaskDecision>, PlannerFault> {
        if ctx.subtask == Subtask::QosEvaluation {
            return Ok(None);
        }
        let prompt = render_prompt(ctx.subtask, &context_fields(ctx)).unwrap_or_default();
        let response = rule_decision(ctx).map_or_else(|_| DEFER_RESPONSE.to_string(), |d| encode_decision(&d));
        self.recorder
            .push(FixtureEntry {
                arrival_index: ctx.arrival_index,
                subtask: ctx.subtask.as_str().into(),
                prompt,
                response,
            })
            .map_err(|e| PlannerFault(e.to_string()))?;
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_fields() -> PromptContext {
        let mut f = PromptContext::new();
        for (k, v) in [
            ("user", "53"),
            ("position", "(60, 75)"),
            ("service", "4K video"),
            ("catalog", "- 4K video\n"),
            ("slices", "- eMBB\n"),
            ("occupancy", "- eMBB: 90/90\n"),
        ] {
            f.insert(k, v.to_string());
        }
        f
    }

    #[test]
    fn intent_prompt_has_service_and_schema() {
        let p = render_prompt(Subtask::IntentUnderstanding, &ctx_fields()).unwrap();
        assert!(p.contains("4K video"));
        assert!(p.contains("\"rate_min\""));
        assert_eq!(p, render_prompt(Subtask::IntentUnderstanding, &ctx_fields()).unwrap());
    }

    #[test]
    fn missing_occupancy_fails_loudly() {
        let mut f = ctx_fields();
        f.remove("occupancy");
        assert_eq!(
            render_prompt(Subtask::IntentUnderstanding, &f),
            Err(PromptError::MissingContextField("occupancy".into()))
        );
    }

    #[test]
    fn qos_evaluation_has_no_prompt() {
        assert!(render_prompt(Subtask::QosEvaluation, &ctx_fields()).is_err());
    }

    #[test]
    fn parses_embedded_intent() {
        let got = parse_decision(
            Subtask::IntentUnderstanding,
            "Thinking... the answer is {\"rate_min\":12,\"rate_max\":15,\"latency_ms\":90} done",
        );
        assert_eq!(
            got,
            Ok(LlmAnswer::Decision(SubtaskDecision::Intent {
                rate_min: 12,
                rate_max: 15,
                latency_ms: 90
            }))
        );
    }

    #[test]
    fn schema_errors() {
        assert!(parse_decision(Subtask::IntentUnderstanding, "sure! here is my answer").is_err());
        assert!(parse_decision(
            Subtask::IntentUnderstanding,
            r#"{"rate_min":15,"rate_max":12,"latency_ms":90}"#
        )
        .is_err());
        assert!(parse_decision(Subtask::UserRegistration, r#"{"slice":"mMTC"}"#).is_err());
        assert!(parse_decision(Subtask::SliceOptimization, r#"{"rate":-3}"#).is_err());
        assert!(parse_decision(Subtask::SliceOptimization, r#"{"rate":1.5}"#).is_err());
        assert!(parse_decision(Subtask::SliceHandover, r#"{"moves":[]}"#).is_err());
        assert!(parse_decision(
            Subtask::SliceHandover,
            r#"{"moves":[{"user":1,"from":"eMBB","to":"eMBB","rate":5}]}"#
        )
        .is_err());
    }

    #[test]
    fn skips_broken_braces_before_payload() {
        let got = parse_decision(Subtask::UserRegistration, "{oops {\"slice\": \"URLLC\"}");
        assert_eq!(
            got,
            Ok(LlmAnswer::Decision(SubtaskDecision::Registration {
                slice: SliceKind::Urllc
            }))
        );
    }

    #[test]
    fn encode_parse_round_trip() {
        let decisions = [
            SubtaskDecision::Intent {
                rate_min: 1,
                rate_max: 2,
                latency_ms: 10,
            },
            SubtaskDecision::Registration { slice: SliceKind::Embb },
            SubtaskDecision::Optimization { rate: 7 },
            SubtaskDecision::Handover {
                moves: vec![Move {
                    user: UserId(110),
                    from: SliceKind::Embb,
                    to: SliceKind::Urllc,
                    rate: slicesim_core::domain::Mbps(5),
                }],
            },
        ];
        for d in decisions {
            assert_eq!(
                parse_decision(d.subtask(), &encode_decision(&d)),
                Ok(LlmAnswer::Decision(d))
            );
        }
        assert_eq!(
            parse_decision(Subtask::SliceHandover, DEFER_RESPONSE),
            Ok(LlmAnswer::Defer)
        );
    }

    #[test]
    fn fixture_replays_in_order_per_key() {
        let entry = |i, s: Subtask, r: &str| FixtureEntry {
            arrival_index: i,
            subtask: s.as_str().into(),
            prompt: String::new(),
            response: r.into(),
        };
        let mut f = Fixture::from_entries([
            entry(1, Subtask::SliceOptimization, "a"),
            entry(1, Subtask::SliceHandover, "h"),
            entry(1, Subtask::SliceOptimization, "b"),
        ])
        .unwrap();
        assert_eq!(f.next(1, Subtask::SliceOptimization).unwrap(), "a");
        assert_eq!(f.next(1, Subtask::SliceOptimization).unwrap(), "b");
        assert_eq!(f.next(1, Subtask::SliceHandover).unwrap(), "h");
        assert!(matches!(
            f.next(1, Subtask::SliceHandover),
            Err(TransportError::MissingFixture { .. })
        ));
        assert_eq!(f.remaining(), 0);
    }

    #[test]
    fn jsonl_round_trip() {
        let entries = vec![FixtureEntry {
            arrival_index: 3,
            subtask: "user_registration".into(),
            prompt: "line one\nline \"two\"".into(),
            response: r#"{"slice":"eMBB"}"#.into(),
        }];
        let mut buf = Vec::new();
        write_jsonl(&entries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let mut f = Fixture::parse_jsonl(&text).unwrap();
        assert_eq!(f.next(3, Subtask::UserRegistration).unwrap(), r#"{"slice":"eMBB"}"#);
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let client = LiveClient::new(LiveConfig {
            base_url: "http://127.0.0.1:9".into(),
            api_key: "k".into(),
            model: "m".into(),
            timeout: Duration::from_millis(500),
            temperature: 0.0,
        })
        .unwrap();
        let mut t = Transport::Live(client);
        let got = run_with_transport(&mut t, Subtask::IntentUnderstanding, 1, &ctx_fields(), None);
        assert!(matches!(got, Err(LlmError::Transport(_))), "{got:?}");
    }
}
