//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fabula_acceptance::{HookLog, Probe, Slow, StubServer};
use fabula_core::components::actor::{LmActing, MemoryStore, RetrievalWeights};
use fabula_core::components::Resources;
use fabula_core::engine::{RunOutcome, WakeQueue};
use fabula_core::kernel::{
    ActionPayload, ActionSpec, BuildError, Component, Entity, EntityId, Env, Observation, Sampling,
};
use fabula_core::lm::{Cassette, LanguageModel, RecordingProvider, RemoteConfig, RemoteProvider, ScriptedProvider};
use fabula_core::prefab::{ParamType, PrefabRegistry, ScenarioDoc};
use fabula_core::runner::{
    crossplay, replay, run_to_string, run_with_provider, CrossplaySpec, LoadedScenario, ReplayVerdict, RunOptions,
    CROSSPLAY_HEADER,
};
use fabula_core::trace::{validate_lines, MemorySink, TraceEvent, TraceKind};
use fabula_service::{router, AppState, ServiceConfig};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bundled(name: &str) -> LoadedScenario {
    LoadedScenario::load(&scenarios_dir().join(format!("{name}.scenario.json"))).expect("bundled scenario loads")
}

fn run(scenario: &LoadedScenario, seed: u64, threads: usize) -> Result<(String, RunOutcome), String> {
    let opts = RunOptions {
        seed: Some(seed),
        threads,
        ..RunOptions::default()
    };
    run_to_string(scenario, &opts).map_err(|e| e.to_string())
}

fn schema(trace: &str) -> Result<Vec<TraceEvent>, String> {
    let lines: Vec<&str> = trace.lines().collect();
    validate_lines(&lines).map_err(|e| format!("trace schema: {e}"))
}

fn env<'a>(lm: &'a dyn LanguageModel, roster: &'a [EntityId], sampling: Sampling) -> Env<'a> {
    Env {
        lm,
        root_seed: 7,
        step: 0,
        sim_time: 0,
        roster,
        sampling,
    }
}

fn observation(text: &str) -> Observation {
    Observation {
        text: text.into(),
        sim_time: 0,
        seq: 0,
        source: EntityId::new("GM").unwrap(),
    }
}

// Lifecycle conformance

struct Layout {
    acting: usize,
    independent: Vec<bool>,
    contributes: Vec<bool>,
}

impl Layout {
    fn random(rng: &mut StdRng) -> Self {
        let n = rng.gen_range(1..=7);
        Layout {
            acting: rng.gen_range(0..n),
            independent: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
            contributes: (0..n).map(|_| rng.gen_bool(0.7)).collect(),
        }
    }

    fn names(&self) -> Vec<String> {
        (0..self.independent.len()).map(|i| format!("c{i}")).collect()
    }

    fn build(&self, log: &HookLog) -> Entity {
        let components: Vec<(String, Box<dyn Component>)> = self
            .names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let probe = Probe {
                    name: name.clone(),
                    acting: i == self.acting,
                    independent: i != self.acting && self.independent[i],
                    contributes: self.contributes[i],
                    log: log.clone(),
                };
                (name, Box::new(probe) as Box<dyn Component>)
            })
            .collect();
        Entity::new(EntityId::new("Probe").unwrap(), components).expect("one acting probe")
    }

    /// The hook sequence the phased contract prescribes for one observe
    /// followed by one act.
    fn expected(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        let names = self.names();
        let context: Vec<&String> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.acting)
            .map(|(_, n)| n)
            .collect();
        let bundle: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.acting && self.contributes[*i])
            .map(|(_, n)| n.as_str())
            .collect();
        let mut observe: Vec<String> = names.iter().map(|n| format!("pre_observe:{n}")).collect();
        observe.extend(names.iter().map(|n| format!("post_observe:{n}")));
        let preact: Vec<String> = context.iter().map(|n| format!("pre_act:{n}")).collect();
        let mut rest = vec![format!("decide:{}:{}", names[self.acting], bundle.join(","))];
        rest.extend(names.iter().map(|n| format!("post_act:{n}")));
        (observe, preact, rest)
    }
}

fn lifecycle_conformance() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x11FE);
    let lm = ScriptedProvider::from_responses(Vec::<String>::new());
    let roster = [EntityId::new("Probe").unwrap()];
    let env = env(&lm, &roster, Sampling::default());
    let spec = ActionSpec::free("What does {name} do?");
    let mut violations = 0;
    for case in 0..100 {
        let layout = Layout::random(&mut rng);
        let (observe, preact, rest) = layout.expected();
        for concurrent in [false, true] {
            let log = HookLog::default();
            let mut entity = layout.build(&log);
            entity.set_concurrent_preact(concurrent);
            for round in 0..2 {
                log.lock().clear();
                let mut out = Vec::new();
                entity
                    .observe(&env, &observation(&format!("round {round}")), &mut out)
                    .map_err(|e| e.to_string())?;
                entity.act(&env, &spec, &mut out).map_err(|e| e.to_string())?;
                let got = log.lock().clone();
                let (got_observe, tail) = got.split_at(observe.len().min(got.len()));
                let (got_preact, got_rest) = tail.split_at(preact.len().min(tail.len()));
                let preact_ok = if concurrent {
                    // Independent pre_acts may interleave; the set and the
                    // bundle order (checked in `rest`) are fixed.
                    let mut a = got_preact.to_vec();
                    let mut b = preact.clone();
                    a.sort();
                    b.sort();
                    a == b
                } else {
                    got_preact == preact.as_slice()
                };
                if got_observe != observe.as_slice() || !preact_ok || got_rest != rest.as_slice() {
                    violations += 1;
                    if violations == 1 {
                        eprintln!("case {case} concurrent={concurrent}: {got:?}");
                    }
                }
            }
        }
    }
    ensure!(violations == 0, "{violations} hook-order violations");
    Ok("100 random entities, sequential and concurrent pre_act, 0 violations".into())
}

// Single-acting enforcement

fn single_acting_enforcement() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5A);
    let mut counts = BTreeMap::new();
    for case in 0..300 {
        let n = rng.gen_range(0..=6);
        let acting: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let log = HookLog::default();
        let components: Vec<(String, Box<dyn Component>)> = acting
            .iter()
            .enumerate()
            .map(|(i, &is_acting)| {
                let probe = Probe {
                    name: format!("c{i}"),
                    acting: is_acting,
                    independent: false,
                    contributes: false,
                    log: log.clone(),
                };
                (format!("c{i}"), Box::new(probe) as Box<dyn Component>)
            })
            .collect();
        let acting_names: Vec<String> = acting
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| format!("c{i}"))
            .collect();
        let result = Entity::new(EntityId::new("E").unwrap(), components);
        *counts.entry(acting_names.len().min(2)).or_insert(0) += 1;
        match (acting_names.len(), result) {
            (1, Ok(entity)) => ensure!(
                entity.acting_index() == acting.iter().position(|a| *a).unwrap(),
                "case {case}: wrong acting index"
            ),
            (0, Err(BuildError::NoActingComponent { entity })) => {
                ensure!(entity == "E", "case {case}: entity {entity}")
            }
            (_, Err(BuildError::MultipleActingComponents { components, .. })) => ensure!(
                acting_names.len() > 1 && components == acting_names,
                "case {case}: reported {components:?}, expected {acting_names:?}"
            ),
            (k, other) => return Err(format!("case {case}: {k} acting components gave {:?}", other.err())),
        }
    }
    let summary: Vec<String> = counts
        .iter()
        .map(|(k, v)| format!("{v}×{}", ["none", "one", "many"][*k]))
        .collect();
    Ok(format!("300 random builds ({})", summary.join(", ")))
}

// Engine cardinality

fn generated_doc(engine: &str, actors: usize, steps: u64, lanes: Value) -> ScenarioDoc {
    let actors: Vec<Value> = (0..actors)
        .map(|i| json!({ "prefab": "basic_actor", "overrides": { "name": format!("A{}", i + 1) } }))
        .collect();
    serde_json::from_value(json!({
        "version": 1,
        "name": format!("{engine}-cardinality"),
        "engine": engine,
        "premise": "Four neighbours share a courtyard.",
        "max_steps": steps,
        "seed": 3,
        "actors": actors,
        "gm": { "prefab": "simulationist_gm", "overrides": { "name": "World", "delta_source": "none" } },
        "provider": { "kind": "scripted", "responses": { "lanes": lanes, "fallback": "no" } }
    }))
    .expect("generated doc parses")
}

fn engine_cardinality() -> Outcome {
    let scenario = LoadedScenario::new(generated_doc("simultaneous", 4, 5, json!({})), ".");
    let (trace, outcome) = run(&scenario, 3, 4)?;
    let events = schema(&trace)?;
    let actions = events.iter().filter(|e| e.kind == TraceKind::Action).count();
    ensure!(
        outcome.actions == 20 && actions == 20,
        "simultaneous: {} actions",
        actions
    );
    ensure!(
        outcome.records.len() == 5,
        "simultaneous: {} records",
        outcome.records.len()
    );
    ensure!(
        outcome.records.iter().all(|r| r.acted.len() == 4),
        "simultaneous: a step did not act all four"
    );

    let mut rng = StdRng::seed_from_u64(0xCA7);
    let names = ["A1", "A2", "A3", "A4"];
    let script: Vec<&str> = (0..6).map(|_| *names.choose(&mut rng).unwrap()).collect();
    let doc = generated_doc("sequential", 4, 6, json!({ "World/next_acting": script }));
    let (trace, outcome) = run(&LoadedScenario::new(doc, "."), 3, 1)?;
    let events = schema(&trace)?;
    let acted: Vec<String> = events
        .iter()
        .filter(|e| e.kind == TraceKind::Action)
        .map(|e| e.entity.clone().unwrap_or_default())
        .collect();
    ensure!(outcome.actions == 6, "sequential: {} actions", outcome.actions);
    ensure!(acted == script, "sequential: acted {acted:?}, scripted {script:?}");

    let mut total_pops = 0;
    for instance in 0..1000 {
        let mut queue = WakeQueue::new();
        let mut model: Vec<(u64, u64, String)> = Vec::new();
        let mut next_name = 0;
        let budget = rng.gen_range(1..=100);
        let mut pushed = 0;
        while pushed < budget || !model.is_empty() {
            if pushed < budget && (model.is_empty() || rng.gen_bool(0.6)) {
                let name = format!("e{next_name}");
                next_name += 1;
                let time = rng.gen_range(0..30);
                let seq = queue
                    .push(time, EntityId::new(name.as_str()).unwrap())
                    .map_err(|e| e.to_string())?;
                model.push((time, seq, name));
                pushed += 1;
            } else {
                let oracle = model
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, (t, s, _))| (*t, *s))
                    .map(|(i, _)| i)
                    .unwrap();
                let expected = model.remove(oracle);
                let (time, seq, entity) = queue.pop().ok_or("queue empty too early")?;
                ensure!(
                    (time, seq, entity.to_string()) == expected,
                    "instance {instance}: popped ({time},{seq},{entity}), oracle {expected:?}"
                );
                total_pops += 1;
            }
        }
        ensure!(queue.pop().is_none(), "instance {instance}: queue not drained");
    }
    Ok(format!(
        "20 actions / 5 records; scripted order {script:?}; {total_pops} pops over 1000 queues match the oracle"
    ))
}

// Determinism

fn determinism() -> Outcome {
    let mut engines = BTreeSet::new();
    let mut lines = 0;
    for name in ["tavern", "market", "feed"] {
        let scenario = bundled(name);
        engines.insert(scenario.doc.engine.as_str());
        let (first, _) = run(&scenario, 7, 1)?;
        let (second, _) = run(&scenario, 7, 1)?;
        let (wide, _) = run(&scenario, 7, 8)?;
        schema(&first)?;
        ensure!(first == second, "{name}: two runs differ");
        ensure!(first == wide, "{name}: 1 vs 8 threads differ");
        lines += first.lines().count();
    }
    ensure!(engines.len() == 3, "engines covered: {engines:?}");
    Ok(format!(
        "{engines:?} seed 7, {lines} lines, repeat and 1 vs 8 threads identical"
    ))
}

// Record/replay closure

/// Seq of the trace line that consumes cassette entry `index`: cassette
/// answers are served per request in recorded order, so it is the k-th
/// call with that request digest.
fn consuming_seq(events: &[TraceEvent], cassette: &Cassette, index: usize) -> Option<u64> {
    let digest = &cassette.entries[index].request_digest;
    let k = cassette.entries[..index]
        .iter()
        .filter(|e| &e.request_digest == digest)
        .count();
    events
        .iter()
        .filter(|e| e.kind == TraceKind::LmCall && e.payload["prompt_digest"] == json!(digest))
        .nth(k)
        .map(|e| e.seq)
}

fn record_replay_closure() -> Outcome {
    let stub = StubServer::start(0).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cassette_path = dir.path().join("market.cassette.jsonl");
    let scenario = bundled("market");

    let mut config = RemoteConfig::new(stub.url.clone(), "stub-model", "stub-token");
    config.base_delay = Duration::from_millis(5);
    let remote = RemoteProvider::new(config).map_err(|e| e.to_string())?;
    let recorder = RecordingProvider::new(Box::new(remote), &cassette_path).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        seed: Some(7),
        threads: 8,
        ..RunOptions::default()
    };
    let sink = MemorySink::new();
    run_with_provider(
        &scenario,
        &opts,
        Arc::new(recorder),
        Box::new(sink.clone()),
        &Resources::default(),
    )
    .map_err(|e| e.to_string())?;
    let recorded = sink.to_jsonl();
    let events = schema(&recorded)?;
    let remote_calls = stub.hits();
    ensure!(remote_calls > 0, "the recording made no remote calls");

    let (verdict, replayed) = replay(&scenario, &recorded, &cassette_path, 8).map_err(|e| e.to_string())?;
    ensure!(verdict == ReplayVerdict::Identical, "replay verdict {verdict:?}");
    ensure!(replayed == recorded, "replayed trace differs");
    ensure!(
        stub.hits() == remote_calls,
        "replay made {} remote calls",
        stub.hits() - remote_calls
    );

    let cassette = Cassette::load(&cassette_path).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&cassette_path).map_err(|e| e.to_string())?;
    let original: Vec<&str> = text.lines().collect();
    let mut rng = StdRng::seed_from_u64(0x7A3);
    let mut checked = Vec::new();
    for _ in 0..8 {
        let index = rng.gen_range(0..original.len());
        let mut entry: Value = serde_json::from_str(original[index]).map_err(|e| e.to_string())?;
        entry["response"] = json!("A tampered answer.");
        let mut lines: Vec<String> = original.iter().map(|l| l.to_string()).collect();
        lines[index] = fabula_core::canonical::value_to_string(&entry);
        let tampered = dir.path().join(format!("tampered-{index}.jsonl"));
        std::fs::write(&tampered, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
        let expected = consuming_seq(&events, &cassette, index).ok_or("tampered entry is never consumed")?;
        let (verdict, _) = replay(&scenario, &recorded, &tampered, 8).map_err(|e| e.to_string())?;
        ensure!(
            verdict == ReplayVerdict::Diverged(expected),
            "entry {index}: verdict {verdict:?}, expected divergence at {expected}"
        );
        checked.push(expected);
    }
    ensure!(stub.hits() == remote_calls, "tampered replays reached the remote");
    Ok(format!(
        "{remote_calls} remote calls recorded, 0 on replay; tampered lines diverge at seqs {checked:?}"
    ))
}

// Retrieval oracle

const VOCAB: [&str; 10] = [
    "Bread", "dog", "park", "river", "coin", "market", "rain", "lantern", "Fox", "dog-park",
];

fn oracle_tokens(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.insert(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.insert(current);
    }
    out
}

fn oracle_retrieve(
    records: &[(String, u64)],
    weights: RetrievalWeights,
    query: &str,
    k: usize,
    now: u64,
) -> Vec<(String, u64)> {
    let q = oracle_tokens(query);
    let scores: Vec<f64> = records
        .iter()
        .map(|(text, t)| {
            let r = oracle_tokens(text);
            let union = q.union(&r).count();
            let jaccard = if union == 0 {
                0.0
            } else {
                q.intersection(&r).count() as f64 / union as f64
            };
            let recency = 2f64.powf(-(now.saturating_sub(*t) as f64) / weights.half_life);
            weights.w_relevance * jaccard + weights.w_recency * recency
        })
        .collect();
    // Exhaustive selection: repeatedly take the best remaining record.
    let mut remaining: Vec<usize> = (0..records.len()).collect();
    let mut picked = Vec::new();
    while picked.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for pos in 1..remaining.len() {
            let (i, b) = (remaining[pos], remaining[best]);
            let better = scores[i] > scores[b]
                || (scores[i] == scores[b] && records[i].1 > records[b].1)
                || (scores[i] == scores[b] && records[i].1 == records[b].1 && i < b);
            if better {
                best = pos;
            }
        }
        picked.push(records[remaining.remove(best)].clone());
    }
    picked
}

fn retrieval_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x3E7);
    let weight_choices = [0.0, 0.5, 1.0, 2.0];
    let mut ties = 0;
    for store_index in 0..200 {
        let (w_recency, w_relevance) = loop {
            let a = if rng.gen_bool(0.2) {
                rng.gen_range(0.0..3.0)
            } else {
                *weight_choices.choose(&mut rng).unwrap()
            };
            let b = if rng.gen_bool(0.2) {
                rng.gen_range(0.0..3.0)
            } else {
                *weight_choices.choose(&mut rng).unwrap()
            };
            if a > 0.0 || b > 0.0 {
                break (a, b);
            }
        };
        let weights = RetrievalWeights {
            w_recency,
            w_relevance,
            half_life: *[1.0, 5.0, 20.0, 37.5].choose(&mut rng).unwrap(),
        };
        let mut store = MemoryStore::new(weights);
        let n = rng.gen_range(0..=100);
        let mut records = Vec::new();
        for _ in 0..n {
            let words = rng.gen_range(1..=4);
            let text: Vec<&str> = (0..words).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
            let text = text.join(if rng.gen_bool(0.5) { " " } else { ", " });
            let t = rng.gen_range(0..8);
            store.add(text.clone(), t, &[]);
            records.push((text, t));
        }
        let query_words = rng.gen_range(0..=3);
        let query: Vec<&str> = (0..query_words).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
        let query = query.join(" ");
        let k = rng.gen_range(0..=n + 2);
        let now = rng.gen_range(8..20);
        let got: Vec<(String, u64)> = store
            .retrieve(&query, k, now)
            .into_iter()
            .map(|r| (r.text, r.sim_time))
            .collect();
        let expected = oracle_retrieve(&records, weights, &query, k, now);
        ensure!(
            got == expected,
            "store {store_index}: query {query:?} k={k}: {got:?} != {expected:?}"
        );
        let distinct: HashSet<(String, u64)> = records.iter().cloned().collect();
        ties += records.len() - distinct.len();
    }
    Ok(format!(
        "200 stores equal the exhaustive oracle exactly ({ties} exact-duplicate records exercised ties)"
    ))
}

// Choice/float validation

fn choice_float_validation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xF10A7);
    let words = ["north", "south", "stay", "leave", "trade", "hide", "wait"];
    let (mut choice_cases, mut float_cases) = (0, 0);
    for case in 0..50 {
        let retries = rng.gen_range(0..=3u32);
        let is_choice = case % 2 == 0;
        let mut options: Vec<&str> = words.to_vec();
        options.shuffle(&mut rng);
        options.truncate(rng.gen_range(2..=4));
        let spec = if is_choice {
            ActionSpec::choice("Which way does {name} go?", options.iter().copied())
        } else {
            ActionSpec::float("How much does {name} bid?")
        };
        let invalid: Vec<String> = (0..=retries)
            .map(|_| match (is_choice, rng.gen_range(0..4)) {
                (true, 0) => format!("{}", options.len() + rng.gen_range(1..5)),
                (true, 1) => "0".to_string(),
                (true, 2) => format!("perhaps {}", options[0]),
                (true, _) => "none of these".to_string(),
                (false, 0) => "a lot".to_string(),
                (false, 1) => "n/a".to_string(),
                (false, 2) => "".to_string(),
                (false, _) => "nothing at all".to_string(),
            })
            .collect();
        let lm = ScriptedProvider::from_responses(invalid.clone());
        let roster = [EntityId::new("Ada").unwrap()];
        let sampling = Sampling {
            retries,
            ..Sampling::default()
        };
        let env = env(&lm, &roster, sampling);
        let mut entity = Entity::new(
            roster[0].clone(),
            vec![("act".to_string(), Box::new(LmActing) as Box<dyn Component>)],
        )
        .map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        let action = entity
            .act(&env, &spec, &mut out)
            .map_err(|e| format!("case {case}: {e}"))?;
        let warnings: Vec<&str> = out
            .iter()
            .filter(|d| d.kind == TraceKind::Warning)
            .filter_map(|d| d.payload["code"].as_str())
            .collect();
        let calls = out.iter().filter(|d| d.kind == TraceKind::LmCall).count();
        ensure!(action.fallback, "case {case}: not flagged as fallback");
        ensure!(
            calls == retries as usize + 1,
            "case {case}: {calls} calls for {retries} retries"
        );
        ensure!(lm.remaining() == 0, "case {case}: retry budget not exhausted");
        if is_choice {
            ensure!(
                action.payload
                    == ActionPayload::Choice {
                        option: options[0].to_string(),
                        index: 0
                    },
                "case {case}: payload {:?}",
                action.payload
            );
            ensure!(warnings == ["choice_fallback"], "case {case}: warnings {warnings:?}");
            choice_cases += 1;
        } else {
            ensure!(
                action.payload == ActionPayload::Number { value: 0.0 },
                "case {case}: payload {:?}",
                action.payload
            );
            ensure!(warnings == ["float_fallback"], "case {case}: warnings {warnings:?}");
            float_cases += 1;
        }
    }
    Ok(format!(
        "{choice_cases} choice and {float_cases} float cases fell back with a warning"
    ))
}

// Secrecy invariant

fn secrecy_invariant() -> Outcome {
    let scenario = bundled("secret");
    let gm = &scenario.doc.gm.overrides;
    let secret_entry = &gm["secrets"][0];
    let holder = secret_entry["holder"].as_str().ok_or("no secret holder")?.to_string();
    let facts: Vec<&str> = secret_entry["facts"]
        .as_array()
        .ok_or("no secret facts")?
        .iter()
        .filter_map(Value::as_str)
        .collect();
    let mut leaks = 0;
    let mut holder_observations = 0;
    for seed in 0..20 {
        let (trace, _) = run(&scenario, seed, 4)?;
        let events = schema(&trace)?;
        for event in &events {
            let line = event.to_line();
            if !facts.iter().any(|f| line.contains(f)) {
                continue;
            }
            if event.entity.as_deref() != Some(holder.as_str()) {
                leaks += 1;
                eprintln!("seed {seed} leak: {line}");
            } else if event.kind == TraceKind::Observation {
                holder_observations += 1;
            }
        }
    }
    ensure!(
        holder_observations >= 20,
        "the holder saw the secret only {holder_observations} times"
    );
    ensure!(leaks == 0, "{leaks} lines outside {holder}'s view contain the secret");
    Ok(format!(
        "20 seeds, {holder_observations} observations by {holder}, 0 leaks"
    ))
}

// Prefab isolation and round-trip

fn random_value(rng: &mut StdRng, ty: ParamType) -> Value {
    match ty {
        ParamType::String => json!(format!("value-{}", rng.gen_range(0..1000))),
        ParamType::Integer => json!(rng.gen_range(0..100)),
        ParamType::Number => json!(rng.gen_range(0.0..10.0)),
        ParamType::Boolean => json!(rng.gen_bool(0.5)),
        ParamType::Object => json!({ "k": rng.gen_range(0..10) }),
        ParamType::Array => json!([rng.gen_range(0..10)]),
        ParamType::Any => json!("anything"),
    }
}

fn wrong_value(ty: ParamType) -> Option<Value> {
    match ty {
        ParamType::String => Some(json!(5)),
        ParamType::Integer | ParamType::Number => Some(json!("five")),
        ParamType::Boolean => Some(json!("yes")),
        ParamType::Object => Some(json!([1])),
        ParamType::Array => Some(json!({})),
        ParamType::Any => None,
    }
}

fn prefab_isolation() -> Outcome {
    let registry = PrefabRegistry::builtin();
    let snapshot = |r: &PrefabRegistry| r.catalog_json();
    let before = snapshot(&registry);
    let names: Vec<String> = registry.names().map(str::to_string).collect();
    let mut rng = StdRng::seed_from_u64(0x150);
    let (mut clones, mut rejected) = (0, 0);
    for sequence in 0..100 {
        let base = registry.get(names.choose(&mut rng).unwrap()).unwrap();
        let mut chain = vec![base.clone()];
        for depth in 0..rng.gen_range(1..=4) {
            let parent = chain.last().unwrap().clone();
            let parent_json = serde_json::to_string(&parent).unwrap();
            let keys: Vec<&String> = parent.params_schema.keys().collect();
            let mut overrides = Map::new();
            for _ in 0..rng.gen_range(1..=3) {
                let key = *keys.choose(&mut rng).unwrap();
                overrides.insert(key.clone(), random_value(&mut rng, parent.params_schema[key].ty));
            }
            let bad = rng.gen_bool(0.25);
            if bad {
                if rng.gen_bool(0.5) {
                    overrides.insert("no_such_param".into(), json!(1));
                } else {
                    let key = *keys.choose(&mut rng).unwrap();
                    match wrong_value(parent.params_schema[key].ty) {
                        Some(v) => {
                            overrides.insert(key.clone(), v);
                        }
                        None => {
                            overrides.insert("no_such_param".into(), json!(1));
                        }
                    }
                }
            }
            let result = parent.clone_with_overrides(&format!("clone-{sequence}-{depth}"), &overrides);
            ensure!(
                serde_json::to_string(&parent).unwrap() == parent_json,
                "sequence {sequence}: parent changed"
            );
            match (bad, result) {
                (true, Err(_)) => rejected += 1,
                (false, Ok(mut clone)) => {
                    for (key, value) in &overrides {
                        ensure!(
                            clone.params_schema[key].default.as_ref() == Some(value),
                            "sequence {sequence}: override {key} not applied"
                        );
                    }
                    if let Some(first) = clone.components.first_mut() {
                        first.params.insert("mutated".into(), json!(true));
                    }
                    clone.description.push_str(" (mutated)");
                    ensure!(
                        serde_json::to_string(&parent).unwrap() == parent_json,
                        "sequence {sequence}: clone aliased parent"
                    );
                    chain.push(clone);
                    clones += 1;
                }
                (bad, result) => return Err(format!("sequence {sequence}: bad={bad} gave {:?}", result.err())),
            }
        }
        ensure!(snapshot(&registry) == before, "sequence {sequence}: registry mutated");
    }

    let mut docs = 0;
    for entry in std::fs::read_dir(scenarios_dir()).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if !path.to_string_lossy().ends_with(".scenario.json") {
            continue;
        }
        let doc = ScenarioDoc::load(&path).map_err(|e| e.to_string())?;
        let canonical = doc.to_canonical();
        let reparsed = ScenarioDoc::parse(&canonical).map_err(|e| e.to_string())?;
        ensure!(reparsed == doc, "{}: reparsed doc differs", path.display());
        ensure!(
            reparsed.to_canonical() == canonical,
            "{}: canonical text differs",
            path.display()
        );
        let mut varied = doc.clone();
        for _ in 0..5 {
            varied.seed = rng.gen();
            varied.max_steps = rng.gen_range(1..50);
            varied.premise = format!("Premise {} with \"quotes\" and ünïcode", rng.gen_range(0..100));
            let text = varied.to_canonical();
            ensure!(
                ScenarioDoc::parse(&text).map_err(|e| e.to_string())?.to_canonical() == text,
                "varied doc differs"
            );
        }
        docs += 1;
    }
    ensure!(docs >= 5, "only {docs} bundled scenarios found");
    Ok(format!(
        "100 sequences ({clones} clones, {rejected} rejected overrides), registry unchanged; {docs} docs round-trip"
    ))
}

// Crossplay harness

/// Max-utility rubric: a resolution scores 1 iff the focal actor's last
/// choice has the highest utility. A rational actor always picks that
/// option, so every score is 1 and the mean is 1.0.
fn rational_oracle_mean(spec: &CrossplaySpec, base: &Path) -> Result<f64, String> {
    let mut scores = Vec::new();
    for name in &spec.scenarios {
        let doc = ScenarioDoc::load(&base.join(name)).map_err(|e| e.to_string())?;
        let utilities = doc.gm.overrides["utilities"].as_object().ok_or("no utilities")?;
        let options = doc.gm.overrides["action_spec"]["options"]
            .as_array()
            .ok_or("no options")?;
        let utility = |o: &Value| {
            utilities
                .get(o.as_str().unwrap_or_default())
                .and_then(Value::as_f64)
                .unwrap_or(0.0)
        };
        let best = options.iter().map(utility).fold(f64::MIN, f64::max);
        let focal = &doc.actors[spec.focal_slot].overrides;
        let focal_utilities = focal.get("utilities").and_then(Value::as_object).unwrap_or(utilities);
        let pick = options
            .iter()
            .max_by(|a, b| {
                let ua = focal_utilities
                    .get(a.as_str().unwrap())
                    .and_then(Value::as_f64)
                    .unwrap_or(0.0);
                let ub = focal_utilities
                    .get(b.as_str().unwrap())
                    .and_then(Value::as_f64)
                    .unwrap_or(0.0);
                ua.total_cmp(&ub).then(std::cmp::Ordering::Greater)
            })
            .ok_or("no options")?;
        let score = if utility(pick) == best { 1.0 } else { 0.0 };
        for _ in &spec.seeds {
            scores.push(score);
        }
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn crossplay_harness() -> Outcome {
    let path = scenarios_dir().join("crossplay.json");
    let spec = CrossplaySpec::load(&path).map_err(|e| e.to_string())?;
    let base = scenarios_dir();
    let (csv, rows) = crossplay(&spec, &base).map_err(|e| e.to_string())?;
    let (again, _) = crossplay(&spec, &base).map_err(|e| e.to_string())?;
    ensure!(csv == again, "rerun differs");
    let header = csv.lines().next().unwrap_or_default();
    ensure!(header == CROSSPLAY_HEADER.join(","), "header {header}");
    let data: Vec<_> = rows.iter().filter(|r| r.status != "mean").collect();
    let summary: Vec<_> = rows.iter().filter(|r| r.status == "mean").collect();
    ensure!(
        data.len() == 8 && summary.len() == 2,
        "{} data rows, {} summary rows",
        data.len(),
        summary.len()
    );
    ensure!(csv.lines().count() == 11, "{} csv lines", csv.lines().count());
    ensure!(data.iter().all(|r| r.status == "ok"), "a cell failed");
    let rational = summary
        .iter()
        .find(|r| r.focal == "rational_actor")
        .and_then(|r| r.total_score)
        .ok_or("no rational_actor summary")?;
    let oracle = rational_oracle_mean(&spec, &base)?;
    ensure!(oracle == 1.0, "oracle mean {oracle}");
    ensure!(rational == oracle, "rational_actor mean {rational}, oracle {oracle}");
    let basic = summary
        .iter()
        .find(|r| r.focal == "basic_actor")
        .and_then(|r| r.total_score);
    Ok(format!(
        "8 data + 2 summary rows; rational_actor mean {rational:.4} (oracle {oracle:.4}), basic_actor {:.4}; rerun identical",
        basic.unwrap_or(f64::NAN)
    ))
}

// Service contract

async fn http(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let request = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(axum::body::Body::empty, |b| axum::body::Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status().as_u16();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn service_flow() -> Outcome {
    let doc: Value = serde_json::from_str(
        &std::fs::read_to_string(scenarios_dir().join("human.scenario.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let app = router(AppState::new(ServiceConfig {
        base_dir: scenarios_dir(),
        ..ServiceConfig::default()
    }));
    let (status, created) = http(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "scenario": doc, "mode": "AUTO" })),
    )
    .await;
    ensure!(status == 201, "create: {status} {created}");
    let id = created["id"].as_str().unwrap_or_default().to_string();
    let (_, view) = http(&app, "POST", &format!("/sessions/{id}/resume"), None).await;
    ensure!(view["status"] == "WAITING_HUMAN", "after resume: {view}");
    let (_, pending) = http(&app, "GET", &format!("/sessions/{id}/pending"), None).await;
    let request_id = pending["request_id"].clone();
    let (_, events_before) = http(&app, "GET", &format!("/sessions/{id}/events?since=-1"), None).await;

    let (status, body) = http(
        &app,
        "POST",
        &format!("/sessions/{id}/actions"),
        Some(json!({ "request_id": request_id, "text": "west" })),
    )
    .await;
    ensure!(status == 422, "invalid choice: {status} {body}");
    let (_, view) = http(&app, "GET", &format!("/sessions/{id}"), None).await;
    let (_, pending_after) = http(&app, "GET", &format!("/sessions/{id}/pending"), None).await;
    let (_, events_after) = http(&app, "GET", &format!("/sessions/{id}/events?since=-1"), None).await;
    ensure!(view["status"] == "WAITING_HUMAN", "after 422: {view}");
    ensure!(
        pending_after == pending && events_after == events_before,
        "state changed after 422"
    );

    let (status, view) = http(
        &app,
        "POST",
        &format!("/sessions/{id}/actions"),
        Some(json!({ "request_id": request_id, "text": "north" })),
    )
    .await;
    ensure!(
        status == 200 && view["status"] == "DONE",
        "valid submission: {status} {view}"
    );
    let (_, events) = http(&app, "GET", &format!("/sessions/{id}/events?since=-1"), None).await;
    let lines: Vec<String> = events
        .as_array()
        .ok_or("events")?
        .iter()
        .map(Value::to_string)
        .collect();
    validate_lines(&lines).map_err(|e| e.to_string())?;

    let slow = router(AppState::new(ServiceConfig {
        base_dir: scenarios_dir(),
        provider_wrapper: Some(Arc::new(|inner| {
            Arc::new(Slow {
                inner,
                delay: Duration::from_millis(40),
            }) as Arc<dyn LanguageModel>
        })),
        ..ServiceConfig::default()
    }));
    let tavern: Value = serde_json::from_str(
        &std::fs::read_to_string(scenarios_dir().join("tavern.scenario.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let (_, created) = http(
        &slow,
        "POST",
        "/sessions",
        Some(json!({ "scenario": tavern, "mode": "STEP" })),
    )
    .await;
    let id = created["id"].as_str().unwrap_or_default().to_string();
    let uri = format!("/sessions/{id}/step");
    let (a, b) = tokio::join!(http(&slow, "POST", &uri, None), http(&slow, "POST", &uri, None));
    let conflicts = [a.0, b.0].iter().filter(|s| **s == 409).count();
    let oks = [a.0, b.0].iter().filter(|s| **s == 200).count();
    ensure!(conflicts == 1 && oks == 1, "double step gave {} and {}", a.0, b.0);
    let (_, events) = http(&slow, "GET", &format!("/sessions/{id}/events?since=-1"), None).await;
    let steps = events
        .as_array()
        .ok_or("events")?
        .iter()
        .filter(|e| e["kind"] == "step_begin")
        .count();
    ensure!(steps == 1, "{steps} steps executed");
    Ok("AUTO→WAITING_HUMAN, invalid CHOICE 422 with state unchanged, valid→DONE, double step one 409".into())
}

fn service_contract() -> Outcome {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?
        .block_on(service_flow())
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("lifecycle conformance", lifecycle_conformance),
        ("single-acting enforcement", single_acting_enforcement),
        ("engine cardinality", engine_cardinality),
        ("determinism", determinism),
        ("record/replay closure", record_replay_closure),
        ("retrieval oracle", retrieval_oracle),
        ("choice/float validation", choice_float_validation),
        ("secrecy invariant", secrecy_invariant),
        ("prefab isolation & round-trip", prefab_isolation),
        ("crossplay harness", crossplay_harness),
        ("service contract", service_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {message}"))
        });
        let elapsed = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({elapsed:.2}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name} ({elapsed:.2}s): {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
