use slicesim::llm::{Fixture, FixtureEntry, LlmPlanner, Recorder, RuleRecorder, Transport};
use slicesim_core::memory::RecordOutcome;
use slicesim_core::sim::{gen_scenario, ChannelMode, RunConfig, RunOutput, Scenario, Simulation};
use slicesim_core::tools::ChannelModel;
use slicesim_core::Planner;

const MALFORMED: [&str; 5] = [
    "I would put this user on eMBB.",
    r#"{"rate": "#,
    r#"{"slice": "mMTC"}"#,
    r#"{"rate_min": 9, "rate_max": 2, "latency_ms": 5}"#,
    r#"{"moves": [{"user": 1}]}"#,
];

fn scenario(seed: u64, n: usize) -> Scenario {
    gen_scenario(seed, n, 450.0, &RunConfig::default().catalog).unwrap()
}

fn run(config: &RunConfig, sc: &Scenario, planner: Option<Box<dyn Planner>>) -> (RunOutput, usize) {
    let mut sim = Simulation::new(config.clone()).unwrap();
    if let Some(p) = planner {
        sim = sim.with_planner(p);
    }
    let mut violations = 0;
    let out = sim.run_observed(sc, |state, _| {
        if state.check_invariants().is_err() {
            violations += 1;
        }
    });
    (out, violations)
}

fn record(config: &RunConfig, sc: &Scenario) -> (RunOutput, Vec<FixtureEntry>) {
    let (recorder, sink) = Recorder::memory();
    let (out, violations) = run(config, sc, Some(Box::new(RuleRecorder::new(recorder))));
    assert_eq!(violations, 0);
    let entries = sink.borrow().clone();
    (out, entries)
}

fn replay(config: &RunConfig, sc: &Scenario, entries: Vec<FixtureEntry>) -> (RunOutput, usize) {
    let fixture = Fixture::from_entries(entries).unwrap();
    run(config, sc, Some(Box::new(LlmPlanner::new(Transport::Replay(fixture)))))
}

fn fallback_records(out: &RunOutput) -> usize {
    out.memory
        .as_ref()
        .unwrap()
        .log()
        .filter(|r| r.decision_digest.starts_with("planner fault") && r.outcome.is_failure())
        .count()
}

#[test]
fn rule_fixture_replays_outcome_for_outcome() {
    let config = RunConfig::default();
    for seed in [3, 21] {
        let sc = scenario(seed, 120);
        let (rules, entries) = record(&config, &sc);
        assert!(entries.iter().any(|e| !e.response.contains("defer")));
        let (replayed, violations) = replay(&config, &sc, entries);
        assert_eq!(violations, 0);
        assert_eq!(replayed.outcomes, rules.outcomes, "seed {seed}");
        assert_eq!(replayed.log.steps, rules.log.steps);
        assert!(replayed.workflow.iter().all(|w| w.fallbacks == 0));
    }
}

#[test]
fn rule_fixture_replays_under_zfbf() {
    let config = RunConfig {
        channel: ChannelMode::Zfbf(ChannelModel::default()),
        ..RunConfig::default()
    };
    let sc = scenario(8, 60);
    let (rules, entries) = record(&config, &sc);
    let (replayed, _) = replay(&config, &sc, entries);
    assert_eq!(replayed.outcomes, rules.outcomes);
}

#[test]
fn malformed_entries_fall_back_and_are_logged() {
    let config = RunConfig::default();
    let sc = scenario(5, 120);
    let (rules, mut entries) = record(&config, &sc);
    let mut corrupted = 0;
    for (i, e) in entries.iter_mut().enumerate() {
        if i % 10 == 3 {
            e.response = MALFORMED[corrupted % MALFORMED.len()].to_string();
            corrupted += 1;
        }
    }
    assert!(corrupted * 10 >= entries.len() - 9);
    let (out, violations) = replay(&config, &sc, entries);
    assert_eq!(out.log.steps.len(), 120);
    assert_eq!(violations, 0);
    let fallbacks: u32 = out.workflow.iter().map(|w| w.fallbacks).sum();
    assert_eq!(fallbacks as usize, corrupted);
    assert_eq!(fallback_records(&out), corrupted);
    // each broken answer is replaced by the rule it stood in for
    assert_eq!(out.outcomes, rules.outcomes);
}

#[test]
fn exhausted_fixture_degrades_to_rules() {
    let config = RunConfig::default();
    let sc = scenario(9, 40);
    let (rules, entries) = record(&config, &sc);
    let half: Vec<FixtureEntry> = entries.iter().filter(|e| e.arrival_index <= 20).cloned().collect();
    let (out, violations) = replay(&config, &sc, half);
    assert_eq!(violations, 0);
    assert_eq!(out.outcomes, rules.outcomes);
    assert!(out.workflow[..20].iter().all(|w| w.fallbacks == 0));
    assert!(out.workflow[20..].iter().all(|w| w.fallbacks > 0));
}

#[test]
fn failure_records_carry_the_reason() {
    let config = RunConfig::default();
    let sc = scenario(2, 10);
    let (_, entries) = record(&config, &sc);
    let broken: Vec<FixtureEntry> = entries
        .into_iter()
        .map(|mut e| {
            e.response = "no".into();
            e
        })
        .collect();
    let (out, _) = replay(&config, &sc, broken);
    let reasons: Vec<String> = out
        .memory
        .unwrap()
        .log()
        .filter_map(|r| match &r.outcome {
            RecordOutcome::Failure(why) if r.decision_digest.starts_with("planner fault") => Some(why.clone()),
            _ => None,
        })
        .collect();
    assert!(!reasons.is_empty());
    assert!(
        reasons
            .iter()
            .all(|r| r.contains("schema") || r.contains("JSON") || r.contains("json")),
        "{reasons:?}"
    );
}
