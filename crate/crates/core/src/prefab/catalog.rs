use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{ParamDecl, ParamType, Prefab, PrefabRole, PARAM_REF};
use crate::components::ComponentSpec;

fn param(key: &str) -> Value {
    json!({ PARAM_REF: key })
}

fn component(name: &str, type_id: &str, params: Value) -> ComponentSpec {
    ComponentSpec {
        name: name.into(),
        type_id: type_id.into(),
        params: params.as_object().cloned().unwrap_or_default(),
    }
}

fn schema(entries: Vec<(&str, ParamDecl)>) -> BTreeMap<String, ParamDecl> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn actor_base() -> Vec<(&'static str, ParamDecl)> {
    vec![
        ("name", ParamDecl::required(ParamType::String).describe("Entity name")),
        (
            "persona",
            ParamDecl::with_default(ParamType::String, "An ordinary person.").describe("Identity text"),
        ),
        (
            "observation_capacity",
            ParamDecl::with_default(ParamType::Integer, 50).describe("Recent observations kept"),
        ),
    ]
}

fn actor_context() -> Vec<ComponentSpec> {
    vec![
        component("identity", "persona", json!({ "text": param("persona") })),
        component(
            "observations",
            "observation_buffer",
            json!({ "capacity": param("observation_capacity") }),
        ),
    ]
}

fn basic_actor() -> Prefab {
    let mut components = actor_context();
    components.push(component("act", "lm_acting", json!({})));
    Prefab {
        name: "basic_actor".into(),
        role: PrefabRole::Actor,
        description: "Persona, recent observations and a language-model decision.".into(),
        components,
        params_schema: schema(actor_base()),
    }
}

fn reflective_actor() -> Prefab {
    let mut components = actor_context();
    components.extend([
        component(
            "memory",
            "associative_memory",
            json!({
                "k": param("memory_k"),
                "w_recency": param("w_recency"),
                "w_relevance": param("w_relevance"),
                "half_life": param("half_life"),
            }),
        ),
        component(
            "reflection",
            "self_reflection",
            json!({ "recall": param("reflection_recall") }),
        ),
        component(
            "plan",
            "plan",
            json!({ "interval": param("plan_interval"), "trigger": param("plan_trigger"), "goal": param("goal") }),
        ),
        component("act", "lm_acting", json!({})),
    ]);
    let mut params = actor_base();
    params.extend([
        ("memory_k", ParamDecl::with_default(ParamType::Integer, 5)),
        ("w_recency", ParamDecl::with_default(ParamType::Number, 1.0)),
        ("w_relevance", ParamDecl::with_default(ParamType::Number, 1.0)),
        ("half_life", ParamDecl::with_default(ParamType::Number, 20.0)),
        ("reflection_recall", ParamDecl::with_default(ParamType::Integer, 3)),
        ("plan_interval", ParamDecl::with_default(ParamType::Integer, 5)),
        ("plan_trigger", ParamDecl::with_default(ParamType::String, Value::Null)),
        ("goal", ParamDecl::with_default(ParamType::String, Value::Null)),
    ]);
    Prefab {
        name: "reflective_actor".into(),
        role: PrefabRole::Actor,
        description: "Adds associative memory, self-reflection and planning to the basic actor.".into(),
        components,
        params_schema: schema(params),
    }
}

fn rational_actor() -> Prefab {
    let mut components = actor_context();
    components.push(component(
        "act",
        "rational_acting",
        json!({ "utilities": param("utilities") }),
    ));
    let mut params = actor_base();
    params.push((
        "utilities",
        ParamDecl::with_default(ParamType::Object, json!({})).describe("Option to utility"),
    ));
    Prefab {
        name: "rational_actor".into(),
        role: PrefabRole::Actor,
        description: "Picks the highest-utility option without calling the model.".into(),
        components,
        params_schema: schema(params),
    }
}

fn human_actor() -> Prefab {
    let mut components = actor_context();
    components.push(component(
        "act",
        "human_acting",
        json!({ "timeout_secs": param("timeout_secs") }),
    ));
    let mut params = actor_base();
    params.push((
        "timeout_secs",
        ParamDecl::with_default(ParamType::Integer, 0).describe("0 waits forever"),
    ));
    Prefab {
        name: "human_actor".into(),
        role: PrefabRole::Actor,
        description: "Acts on input from a human player.".into(),
        components,
        params_schema: schema(params),
    }
}

fn gm_base(default_name: &str) -> Vec<(&'static str, ParamDecl)> {
    vec![
        ("name", ParamDecl::with_default(ParamType::String, default_name)),
        (
            "action_spec",
            ParamDecl::with_default(ParamType::Object, Value::Null).describe("Request issued to actors each step"),
        ),
        ("next_acting_retries", ParamDecl::with_default(ParamType::Integer, 2)),
        ("scheduler_mode", ParamDecl::with_default(ParamType::String, "rule")),
        ("jitter", ParamDecl::with_default(ParamType::Integer, 5)),
        ("initial_state", ParamDecl::with_default(ParamType::Object, json!({}))),
        ("recent_events", ParamDecl::with_default(ParamType::Integer, 5)),
    ]
}

fn gm_components(middle: Vec<ComponentSpec>, dispatch: Value, terminator: &str) -> Vec<ComponentSpec> {
    let mut components = vec![component("observations", "observation_buffer", json!({}))];
    components.extend(middle);
    components.extend([
        component(
            "next_acting",
            "next_acting",
            json!({ "retries": param("next_acting_retries") }),
        ),
        component("dispatcher", "observation_dispatcher", dispatch),
        component("terminator", "terminator", json!({ "mode": terminator })),
        component(
            "scheduler",
            "scheduler",
            json!({ "mode": param("scheduler_mode"), "jitter": param("jitter") }),
        ),
        component(
            "resolver",
            "event_resolver",
            json!({ "action_spec": param("action_spec"), "recent_events": param("recent_events") }),
        ),
    ]);
    components
}

fn dramatist_gm() -> Prefab {
    let middle = vec![
        component("world", "world_state", json!({ "initial": param("initial_state") })),
        component(
            "director",
            "narrative_director",
            json!({ "beats": param("beats"), "guidance": param("guidance") }),
        ),
    ];
    let mut params = gm_base("Narrator");
    params.extend([
        (
            "beats",
            ParamDecl::with_default(ParamType::Array, json!([])).describe("Ordered plot beats"),
        ),
        ("guidance", ParamDecl::with_default(ParamType::String, "")),
        (
            "dispatch_mode",
            ParamDecl::with_default(ParamType::String, "asymmetric"),
        ),
        (
            "secrets",
            ParamDecl::with_default(ParamType::Array, json!([])).describe("Holder-only facts"),
        ),
    ]);
    Prefab {
        name: "dramatist_gm".into(),
        role: PrefabRole::Gm,
        description: "Narrative director with per-entity perception and secret knowledge.".into(),
        components: gm_components(
            middle,
            json!({ "mode": param("dispatch_mode"), "secrets": param("secrets") }),
            "ask",
        ),
        params_schema: schema(params),
    }
}

fn evaluationist_gm() -> Prefab {
    let middle = vec![
        component("world", "world_state", json!({ "initial": param("initial_state") })),
        component(
            "scorer",
            "rubric_scorer",
            json!({
                "enabled": param("scoring_enabled"),
                "rubric": param("rubric"),
                "mode": param("scoring_mode"),
                "utilities": param("utilities"),
            }),
        ),
    ];
    let mut params = gm_base("Evaluator");
    params.extend([
        ("rubric", ParamDecl::with_default(ParamType::String, "Act well.")),
        ("scoring_enabled", ParamDecl::with_default(ParamType::Boolean, true)),
        ("scoring_mode", ParamDecl::with_default(ParamType::String, "provider")),
        ("utilities", ParamDecl::with_default(ParamType::Object, json!({}))),
    ]);
    Prefab {
        name: "evaluationist_gm".into(),
        role: PrefabRole::Gm,
        description: "Rubric scoring, broadcast dispatch, and no early termination.".into(),
        components: gm_components(middle, json!({ "mode": "broadcast" }), "never"),
        params_schema: schema(params),
    }
}

fn simulationist_gm() -> Prefab {
    let middle = vec![component(
        "world",
        "world_state",
        json!({
            "initial": param("initial_state"),
            "delta_source": param("delta_source"),
            "scripted_deltas": param("scripted_deltas"),
        }),
    )];
    let mut params = gm_base("World");
    params.extend([
        ("delta_source", ParamDecl::with_default(ParamType::String, "provider")),
        ("scripted_deltas", ParamDecl::with_default(ParamType::Object, json!({}))),
    ]);
    Prefab {
        name: "simulationist_gm".into(),
        role: PrefabRole::Gm,
        description: "World-state bookkeeping with broadcast dispatch.".into(),
        components: gm_components(middle, json!({ "mode": "broadcast" }), "ask"),
        params_schema: schema(params),
    }
}

/// The shipped catalog.
pub fn builtin_prefabs() -> Vec<Prefab> {
    vec![
        basic_actor(),
        reflective_actor(),
        rational_actor(),
        human_actor(),
        dramatist_gm(),
        evaluationist_gm(),
        simulationist_gm(),
    ]
}
