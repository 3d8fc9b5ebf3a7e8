use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::components::{BuildContext, ComponentSpec, Params};
use crate::kernel::{
    Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle, Observation,
};

pub const MEMORY_TYPE: &str = "associative_memory";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub text: String,
    pub sim_time: u64,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Weights of the retrieval score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub w_recency: f64,
    pub w_relevance: f64,
    /// Ticks after which the recency term halves.
    pub half_life: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights {
            w_recency: 1.0,
            w_relevance: 1.0,
            half_life: 20.0,
        }
    }
}

impl RetrievalWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_recency >= 0.0 && self.w_relevance >= 0.0) {
            return Err("weights must be nonnegative".into());
        }
        if self.w_recency == 0.0 && self.w_relevance == 0.0 {
            return Err("w_recency and w_relevance cannot both be zero".into());
        }
        if !(self.half_life > 0.0 && self.half_life.is_finite()) {
            return Err("half_life must be positive".into());
        }
        Ok(())
    }
}

/// Lowercased alphanumeric runs, as a set.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Append-only record store with lexical retrieval.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
    weights: RetrievalWeights,
}

pub type SharedMemory = Arc<Mutex<MemoryStore>>;

impl MemoryStore {
    pub fn new(weights: RetrievalWeights) -> Self {
        MemoryStore {
            records: Vec::new(),
            weights,
        }
    }

    pub fn weights(&self) -> RetrievalWeights {
        self.weights
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Empty texts are ignored.
    pub fn add(&mut self, text: impl Into<String>, sim_time: u64, tags: &[&str]) {
        let text = text.into();
        if text.trim().is_empty() {
            return;
        }
        self.records.push(MemoryRecord {
            text,
            sim_time,
            tags: tags.iter().map(|t| t.to_string()).collect(),
        });
    }

    /// `w_relevance · jaccard(query, text) + w_recency · 2^(−(now − t)/half_life)`.
    pub fn score(&self, query_tokens: &BTreeSet<String>, record: &MemoryRecord, now: u64) -> f64 {
        let relevance = jaccard(query_tokens, &tokens(&record.text));
        let age = now.saturating_sub(record.sim_time) as f64;
        let recency = 2f64.powf(-age / self.weights.half_life);
        self.weights.w_relevance * relevance + self.weights.w_recency * recency
    }

    /// Top `k` records by score; ties go to the newer record, then to the
    /// earlier insertion.
    pub fn retrieve(&self, query: &str, k: usize, now: u64) -> Vec<MemoryRecord> {
        let query_tokens = tokens(query);
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (self.score(&query_tokens, r, now), i))
            .collect();
        scored.sort_by(|(sa, ia), (sb, ib)| {
            sb.total_cmp(sa)
                .then_with(|| self.records[*ib].sim_time.cmp(&self.records[*ia].sim_time))
                .then_with(|| ia.cmp(ib))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(_, i)| self.records[i].clone())
            .collect()
    }
}

/// Context component exposing the entity's memory store.
///
/// Observations and the entity's own actions are stored; `pre_act`
/// retrieves the records most relevant to the current call to action.
#[derive(Debug)]
pub struct AssociativeMemory {
    store: SharedMemory,
    k: usize,
    now: u64,
}

impl AssociativeMemory {
    pub fn new(store: SharedMemory, k: usize) -> Self {
        AssociativeMemory { store, k, now: 0 }
    }

    pub(crate) fn shared_from_spec(spec: &ComponentSpec) -> Result<SharedMemory, BuildError> {
        let params = Params::of(spec);
        let defaults = RetrievalWeights::default();
        let weights = RetrievalWeights {
            w_recency: params.f64_or("w_recency", defaults.w_recency)?,
            w_relevance: params.f64_or("w_relevance", defaults.w_relevance)?,
            half_life: params.f64_or("half_life", defaults.half_life)?,
        };
        weights.validate().map_err(|detail| BuildError::InvalidParameter {
            component: spec.name.clone(),
            param: "weights".into(),
            detail,
        })?;
        Ok(Arc::new(Mutex::new(MemoryStore::new(weights))))
    }

    pub fn from_spec(spec: &ComponentSpec, ctx: &mut BuildContext<'_>) -> Result<Self, BuildError> {
        let k = Params::of(spec).positive_u64_or("k", 5)? as usize;
        let store = match &ctx.memory {
            Some(store) => store.clone(),
            None => Self::shared_from_spec(spec)?,
        };
        Ok(AssociativeMemory::new(store, k))
    }

    pub fn store(&self) -> SharedMemory {
        self.store.clone()
    }
}

impl Component for AssociativeMemory {
    fn type_name(&self) -> &'static str {
        MEMORY_TYPE
    }

    fn declared_independent(&self) -> bool {
        true
    }

    fn pre_observe(&mut self, _ctx: &mut CallContext<'_>, obs: &Observation) -> Result<(), ComponentError> {
        self.now = self.now.max(obs.sim_time);
        self.store.lock().add(obs.text.clone(), obs.sim_time, &["observation"]);
        Ok(())
    }

    fn pre_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        self.now = self.now.max(ctx.sim_time());
        let found = self.store.lock().retrieve(&spec.call_to_action, self.k, self.now);
        let text = if found.is_empty() {
            "(none)".to_string()
        } else {
            found.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join("\n")
        };
        Ok(Some(("Relevant memories".into(), text)))
    }

    fn post_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        action: &Action,
    ) -> Result<(), ComponentError> {
        let text = format!("{} chose: {}", ctx.entity(), action.text());
        self.store.lock().add(text, ctx.sim_time(), &["action"]);
        Ok(())
    }

    fn snapshot(&self) -> Value {
        let store = self.store.lock();
        json!({
            "k": self.k,
            "now": self.now,
            "records": store.records,
            "weights": store.weights,
        })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        let bad = |what: &str| ComponentError::State(format!("associative_memory.{what}"));
        let k = state.get("k").and_then(Value::as_u64).ok_or_else(|| bad("k"))?;
        let now = state.get("now").and_then(Value::as_u64).ok_or_else(|| bad("now"))?;
        let records: Vec<MemoryRecord> =
            serde_json::from_value(state.get("records").cloned().ok_or_else(|| bad("records"))?)
                .map_err(|_| bad("records"))?;
        let weights: RetrievalWeights =
            serde_json::from_value(state.get("weights").cloned().ok_or_else(|| bad("weights"))?)
                .map_err(|_| bad("weights"))?;
        self.k = k as usize;
        self.now = now;
        let mut store = self.store.lock();
        store.records = records;
        store.weights = weights;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relevance_only_picks_the_overlapping_record() {
        let mut store = MemoryStore::new(RetrievalWeights {
            w_recency: 0.0,
            ..RetrievalWeights::default()
        });
        store.add("bought fresh bread", 1, &[]);
        store.add("saw a dog", 2, &[]);
        let top = store.retrieve("dog park", 1, 2);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].text, "saw a dog");
    }

    #[test]
    fn recency_only_orders_newest_first() {
        let mut store = MemoryStore::new(RetrievalWeights {
            w_relevance: 0.0,
            ..RetrievalWeights::default()
        });
        for (i, text) in ["one", "two", "three"].iter().enumerate() {
            store.add(*text, i as u64, &[]);
        }
        let texts: Vec<_> = store.retrieve("anything", 10, 5).into_iter().map(|r| r.text).collect();
        assert_eq!(texts, ["three", "two", "one"]);
    }

    #[test]
    fn empty_store_and_short_store() {
        let store = MemoryStore::new(RetrievalWeights::default());
        assert!(store.retrieve("x", 3, 0).is_empty());
        let mut store = store;
        store.add("a", 0, &[]);
        assert_eq!(store.retrieve("x", 3, 0).len(), 1);
    }

    #[test]
    fn ties_prefer_newer_then_earlier_insertion() {
        let mut store = MemoryStore::new(RetrievalWeights {
            w_recency: 0.0,
            ..RetrievalWeights::default()
        });
        store.add("alpha", 1, &["first"]);
        store.add("beta", 3, &[]);
        store.add("gamma", 1, &["second"]);
        let got: Vec<_> = store.retrieve("unrelated", 3, 3).into_iter().map(|r| r.text).collect();
        assert_eq!(got, ["beta", "alpha", "gamma"]);
    }

    #[test]
    fn tokenizer_lowercases_alphanumeric_runs() {
        let t: Vec<_> = tokens("Saw a DOG, at 3pm!").into_iter().collect();
        assert_eq!(t, ["3pm", "a", "at", "dog", "saw"]);
    }

    #[test]
    fn weights_validation() {
        assert!(RetrievalWeights::default().validate().is_ok());
        let zero = RetrievalWeights {
            w_recency: 0.0,
            w_relevance: 0.0,
            half_life: 20.0,
        };
        assert!(zero.validate().is_err());
        let bad_half = RetrievalWeights {
            half_life: 0.0,
            ..RetrievalWeights::default()
        };
        assert!(bad_half.validate().is_err());
    }
}
