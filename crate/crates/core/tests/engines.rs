use fabula_core::prefab::ScenarioDoc;
use fabula_core::runner::{run_to_string, LoadedScenario, RunOptions};
use fabula_core::trace::{validate_lines, TraceEvent, TraceKind};
use serde_json::{json, Value};

fn doc(engine: &str, actors: &[&str], max_steps: u64, gm: Value, script: Value) -> LoadedScenario {
    let actors: Vec<Value> = actors
        .iter()
        .map(|name| json!({ "prefab": "basic_actor", "overrides": { "name": name } }))
        .collect();
    let mut gm_overrides = json!({ "name": "World", "delta_source": "none" });
    gm_overrides
        .as_object_mut()
        .unwrap()
        .extend(gm.as_object().unwrap().clone());
    let doc: ScenarioDoc = serde_json::from_value(json!({
        "version": 1,
        "name": "example",
        "engine": engine,
        "premise": "An orchard at dawn.",
        "max_steps": max_steps,
        "seed": 1,
        "actors": actors,
        "gm": { "prefab": "simulationist_gm", "overrides": gm_overrides },
        "provider": { "kind": "scripted", "responses": script }
    }))
    .unwrap();
    LoadedScenario::new(doc, ".")
}

fn with_rotation(mut scenario: LoadedScenario, rotation: &[&str]) -> LoadedScenario {
    scenario.doc.rotation = Some(rotation.iter().map(|s| s.to_string()).collect());
    scenario
}

fn events(scenario: &LoadedScenario) -> Vec<TraceEvent> {
    let (trace, _) = run_to_string(scenario, &RunOptions::default()).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    validate_lines(&lines).unwrap()
}

fn actors_in_order(events: &[TraceEvent]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.kind == TraceKind::Action)
        .filter_map(|e| e.entity.clone())
        .collect()
}

fn warnings(events: &[TraceEvent], code: &str) -> usize {
    events
        .iter()
        .filter(|e| e.kind == TraceKind::Warning && e.payload["code"] == code)
        .count()
}

#[test]
fn gm_termination_ends_the_run() {
    let script = json!({ "lanes": { "World/terminate": ["no", "no", "yes"] }, "fallback": "no" });
    let scenario = doc("simultaneous", &["A", "B"], 10, json!({}), script);
    let (_, outcome) = run_to_string(&scenario, &RunOptions::default()).unwrap();
    assert_eq!(outcome.records.len(), 3);
    assert!(outcome.terminated);
    assert!(outcome.records.last().unwrap().terminated);
    assert!(outcome.records[..2].iter().all(|r| !r.terminated));
}

#[test]
fn max_steps_caps_the_run() {
    let scenario = doc("simultaneous", &["A", "B"], 2, json!({}), json!({ "fallback": "no" }));
    let (_, outcome) = run_to_string(&scenario, &RunOptions::default()).unwrap();
    assert_eq!(outcome.records.len(), 2);
    assert!(!outcome.terminated);
}

#[test]
fn simultaneous_acts_in_registration_order() {
    let scenario = doc(
        "simultaneous",
        &["D", "B", "C", "A"],
        1,
        json!({}),
        json!({ "fallback": "no" }),
    );
    let (_, outcome) = run_to_string(&scenario, &RunOptions::default()).unwrap();
    let acted: Vec<&str> = outcome.records[0].acted.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(acted, ["D", "B", "C", "A"]);
}

#[test]
fn second_resolution_sees_the_first_update() {
    let script = json!({
        "lanes": {
            "A": ["A takes the last apple."],
            "B": ["B takes the last apple."],
            "World/resolve": ["A takes the last apple.", "B finds the tree bare."],
            "World/state_delta": ["apples: 0", "none"]
        },
        "fallback": "no"
    });
    let gm = json!({ "delta_source": "provider", "initial_state": { "apples": "1" } });
    let scenario = doc("simultaneous", &["A", "B"], 1, gm, script);
    let events = events(&scenario);
    let resolves: Vec<&TraceEvent> = events
        .iter()
        .filter(|e| e.kind == TraceKind::LmCall && e.payload["tag"] == "resolve")
        .collect();
    assert_eq!(resolves.len(), 2);
    let first = resolves[0].payload["prompt"].as_str().unwrap();
    let second = resolves[1].payload["prompt"].as_str().unwrap();
    assert!(first.contains("apples: 1") && first.contains("A takes"), "{first}");
    assert!(second.contains("apples: 0") && second.contains("B takes"), "{second}");
    let texts: Vec<&str> = events
        .iter()
        .filter(|e| e.kind == TraceKind::Event)
        .filter_map(|e| e.payload["text"].as_str())
        .collect();
    assert_eq!(texts, ["A takes the last apple.", "B finds the tree bare."]);
}

#[test]
fn fixed_rotation_alternates() {
    let scenario = with_rotation(
        doc("sequential", &["A", "B"], 4, json!({}), json!({ "fallback": "no" })),
        &["A", "B"],
    );
    assert_eq!(actors_in_order(&events(&scenario)), ["A", "B", "A", "B"]);
}

#[test]
fn scripted_next_acting() {
    let script = json!({ "lanes": { "World/next_acting": ["B", "B", "A"] }, "fallback": "no" });
    let scenario = doc("sequential", &["A", "B"], 3, json!({}), script);
    assert_eq!(actors_in_order(&events(&scenario)), ["B", "B", "A"]);
}

#[test]
fn unknown_next_actor_falls_back_to_round_robin() {
    let script = json!({ "lanes": { "World/next_acting": ["Zeus", "Zeus", "Zeus", "B"] }, "fallback": "no" });
    let scenario = doc(
        "sequential",
        &["A", "B"],
        2,
        json!({ "next_acting_retries": 2 }),
        script,
    );
    let events = events(&scenario);
    assert_eq!(actors_in_order(&events), ["A", "B"]);
    assert_eq!(warnings(&events, "next_acting_fallback"), 1);
}

#[test]
fn non_increasing_wake_time_is_clamped() {
    let script = json!({ "lanes": { "World/next_wake": ["0", "0"] }, "fallback": "no" });
    let scenario = doc(
        "asynchronous",
        &["A"],
        2,
        json!({ "scheduler_mode": "provider" }),
        script,
    );
    let events = events(&scenario);
    let times: Vec<u64> = events
        .iter()
        .filter(|e| e.kind == TraceKind::Action)
        .map(|e| e.sim_time)
        .collect();
    assert_eq!(times, [0, 1]);
    assert_eq!(warnings(&events, "wake_clamped"), 2);
}

#[test]
fn async_wakes_follow_the_scheduler() {
    // A, B, C start at time 0 in registration order; each asks to wake
    // two ticks later.
    let script = json!({ "lanes": { "World/next_wake": ["2", "2", "2", "4", "4", "4"] }, "fallback": "no" });
    let scenario = doc(
        "asynchronous",
        &["A", "B", "C"],
        6,
        json!({ "scheduler_mode": "provider" }),
        script,
    );
    let events = events(&scenario);
    let acted: Vec<(String, u64)> = events
        .iter()
        .filter(|e| e.kind == TraceKind::Action)
        .map(|e| (e.entity.clone().unwrap(), e.sim_time))
        .collect();
    let expected: Vec<(String, u64)> = [("A", 0), ("B", 0), ("C", 0), ("A", 2), ("B", 2), ("C", 2)]
        .iter()
        .map(|(n, t)| (n.to_string(), *t))
        .collect();
    assert_eq!(acted, expected);
    assert_eq!(warnings(&events, "wake_clamped"), 0);
}

#[test]
fn runs_without_actors_are_rejected() {
    let scenario = doc("simultaneous", &[], 2, json!({}), json!({ "fallback": "no" }));
    assert!(run_to_string(&scenario, &RunOptions::default()).is_err());
}
