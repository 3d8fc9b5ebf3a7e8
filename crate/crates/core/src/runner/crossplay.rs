use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_to_string, LoadedScenario, RunOptions, RunnerError};
use crate::prefab::{PrefabRegistry, ScenarioDoc, ScenarioError};

pub const CROSSPLAY_HEADER: [&str; 7] = [
    "focal",
    "scenario",
    "seed",
    "total_score",
    "steps",
    "warnings",
    "status",
];

/// Which actor prefabs to try in which seat of which scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossplaySpec {
    pub actor_prefabs: Vec<String>,
    /// Scenario files, relative to the spec file.
    pub scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    /// Index of the actor slot that receives the focal prefab.
    #[serde(default)]
    pub focal_slot: usize,
}

impl CrossplaySpec {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let spec: CrossplaySpec = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if spec.actor_prefabs.is_empty() || spec.scenarios.is_empty() || spec.seeds.is_empty() {
            return Err(ScenarioError::Parse(
                "actor_prefabs, scenarios and seeds must be non-empty".into(),
            ));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossplayRow {
    pub focal: String,
    pub scenario: String,
    pub seed: Option<u64>,
    /// Mean of the focal actor's rubric scores.
    pub total_score: Option<f64>,
    pub steps: Option<u64>,
    pub warnings: Option<u64>,
    pub status: String,
}

impl CrossplayRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.focal.clone(),
            self.scenario.clone(),
            opt(self.seed),
            self.total_score.map(|s| format!("{s:.4}")).unwrap_or_default(),
            opt(self.steps),
            opt(self.warnings),
            self.status.clone(),
        ]
    }
}

fn scenario_label(path: &str, doc: &ScenarioDoc) -> String {
    if !doc.name.is_empty() {
        return doc.name.clone();
    }
    Path::new(path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// The scenario with `focal` seated in slot `slot`. Overrides the focal
/// prefab does not declare are dropped.
fn substitute(
    doc: &ScenarioDoc,
    focal: &str,
    slot: usize,
    prefabs: &PrefabRegistry,
) -> Result<(ScenarioDoc, String), String> {
    let mut doc = doc.clone();
    let prefab = prefabs.get(focal).ok_or_else(|| format!("unknown prefab `{focal}`"))?;
    let seat = doc
        .actors
        .get_mut(slot)
        .ok_or_else(|| format!("the scenario has no actor slot {slot}"))?;
    seat.prefab = focal.to_string();
    seat.overrides.retain(|key, _| prefab.params_schema.contains_key(key));
    let name = seat
        .overrides
        .get("name")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format!("actor slot {slot} has no name"))?;
    Ok((doc, name))
}

fn run_cell(
    focal: &str,
    scenario: &LoadedScenario,
    label: &str,
    seed: u64,
    slot: usize,
    prefabs: &PrefabRegistry,
) -> CrossplayRow {
    let mut row = CrossplayRow {
        focal: focal.to_string(),
        scenario: label.to_string(),
        seed: Some(seed),
        total_score: None,
        steps: None,
        warnings: None,
        status: "failed".into(),
    };
    let (doc, name) = match substitute(&scenario.doc, focal, slot, prefabs) {
        Ok(found) => found,
        Err(_) => return row,
    };
    let cell = LoadedScenario::new(doc, scenario.base_dir.clone());
    let opts = RunOptions {
        seed: Some(seed),
        threads: 1,
        ..RunOptions::default()
    };
    if let Ok((_, outcome)) = run_to_string(&cell, &opts) {
        row.total_score = Some(outcome.scores.get(&name).map_or(0.0, |s| s.mean));
        row.steps = Some(outcome.steps);
        row.warnings = Some(outcome.warnings);
        row.status = "ok".into();
    }
    row
}

/// Runs every (focal prefab × scenario × seed) cell and returns the CSV
/// text: one row per cell, then one mean row per focal prefab. Failed
/// cells are reported as rows and do not stop the harness.
pub fn crossplay(spec: &CrossplaySpec, base_dir: &Path) -> Result<(String, Vec<CrossplayRow>), RunnerError> {
    let prefabs = PrefabRegistry::builtin();
    let mut scenarios = Vec::new();
    for path in &spec.scenarios {
        let full: PathBuf = if Path::new(path).is_absolute() {
            PathBuf::from(path)
        } else {
            base_dir.join(path)
        };
        let loaded = LoadedScenario::load(&full)?;
        let label = scenario_label(path, &loaded.doc);
        scenarios.push((loaded, label));
    }
    let mut cells = Vec::new();
    for focal in &spec.actor_prefabs {
        for (scenario, label) in &scenarios {
            for seed in &spec.seeds {
                cells.push((focal.as_str(), scenario, label.as_str(), *seed));
            }
        }
    }
    let mut rows: Vec<CrossplayRow> = cells
        .par_iter()
        .map(|(focal, scenario, label, seed)| run_cell(focal, scenario, label, *seed, spec.focal_slot, &prefabs))
        .collect();
    for focal in &spec.actor_prefabs {
        let scores: Vec<f64> = rows
            .iter()
            .filter(|r| &r.focal == focal && r.status == "ok")
            .filter_map(|r| r.total_score)
            .collect();
        let mean = if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        };
        rows.push(CrossplayRow {
            focal: focal.clone(),
            scenario: "*".into(),
            seed: None,
            total_score: mean,
            steps: None,
            warnings: None,
            status: "mean".into(),
        });
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_error = |e: csv::Error| RunnerError::Io(e.to_string());
    writer.write_record(CROSSPLAY_HEADER).map_err(csv_error)?;
    for row in &rows {
        writer.write_record(row.record()).map_err(csv_error)?;
    }
    let bytes = writer.into_inner().map_err(|e| RunnerError::Io(e.to_string()))?;
    Ok((String::from_utf8(bytes).expect("csv output is utf-8"), rows))
}
