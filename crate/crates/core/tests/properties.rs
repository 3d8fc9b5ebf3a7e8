use fabula_core::prefab::ScenarioDoc;
use fabula_core::runner::{run_to_string, LoadedScenario, RunOptions};
use fabula_core::trace::{validate_lines, TraceKind};
use proptest::prelude::*;
use serde_json::{json, Value};

fn scenario(engine: &str, actors: usize, max_steps: u64, stop_at: Option<u64>) -> LoadedScenario {
    let actors: Vec<Value> = (0..actors)
        .map(|i| json!({ "prefab": "basic_actor", "overrides": { "name": format!("P{i}") } }))
        .collect();
    let mut terminate: Vec<&str> = vec!["no"; stop_at.unwrap_or(0) as usize];
    if stop_at.is_some() {
        terminate.push("yes");
    }
    let doc: ScenarioDoc = serde_json::from_value(json!({
        "version": 1,
        "engine": engine,
        "premise": "A village square.",
        "max_steps": max_steps,
        "seed": 5,
        "actors": actors,
        "gm": { "prefab": "simulationist_gm", "overrides": { "delta_source": "none" } },
        "provider": { "kind": "echo" }
    }))
    .unwrap();
    let mut loaded = LoadedScenario::new(doc, ".");
    if stop_at.is_some() {
        loaded.doc.provider = serde_json::from_value(json!({
            "kind": "scripted",
            "responses": { "lanes": { "World/terminate": terminate }, "fallback": "P0" }
        }))
        .unwrap();
    }
    loaded
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_and_termination(
        engine in prop::sample::select(vec!["simultaneous", "sequential", "asynchronous"]),
        actors in 1usize..5,
        max_steps in 1u64..6,
        stop_at in prop::option::of(0u64..6),
        threads in 1usize..5,
    ) {
        let scenario = scenario(engine, actors, max_steps, stop_at);
        let opts = RunOptions { threads, ..RunOptions::default() };
        let (trace, outcome) = run_to_string(&scenario, &opts).unwrap();
        let lines: Vec<&str> = trace.lines().collect();
        let events = validate_lines(&lines).unwrap();
        for (i, e) in events.iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64);
        }
        prop_assert_eq!(events.first().unwrap().kind, TraceKind::RunHeader);
        prop_assert_eq!(events.last().unwrap().kind, TraceKind::RunFooter);

        let steps = outcome.records.len() as u64;
        let expected_steps = match stop_at {
            Some(k) if k < max_steps => k + 1,
            _ => max_steps,
        };
        prop_assert_eq!(steps, expected_steps);
        prop_assert!(outcome.terminated || steps == max_steps);
        let per_step = if engine == "simultaneous" { actors as u64 } else { 1 };
        prop_assert_eq!(outcome.actions, steps * per_step);

        let (single, _) = run_to_string(&scenario, &RunOptions { threads: 1, ..RunOptions::default() }).unwrap();
        prop_assert_eq!(single, trace);
    }
}
