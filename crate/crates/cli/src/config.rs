use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use was::baselines::Strategy;
use was::graph::SbmSpec;
use was::tasks::TaskKind;
use was::RunConfig;

/// One experiment described as a single JSON file. Every field is optional;
/// command-line flags override whatever is set here.
///
/// ```json
/// {
///   "data": "data/sbm",
///   "tasks": ["dgi", "clu", {"kind": "par", "parts": 6}],
///   "run": {"alpha": 1.0, "epochs": 300},
///   "strategy": "was",
///   "repeats": 5
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset directory.
    pub data: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading `data`.
    pub sbm: Option<SbmSpec>,
    pub tasks: Option<Vec<TaskSpec>>,
    pub run: RunConfig,
    pub strategy: Option<Strategy>,
    pub out: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    /// Number of consecutive seeds, starting at the run seed.
    pub repeats: Option<usize>,
    /// Worker threads for teacher pre-training.
    pub jobs: Option<usize>,
}

/// A task given either by name with default hyperparameters or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Name(String),
    Full(TaskKind),
}

impl TaskSpec {
    pub fn resolve(&self) -> Result<TaskKind, was::Error> {
        match self {
            TaskSpec::Name(name) => name.parse(),
            TaskSpec::Full(task) => Ok(*task),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| format!("experiment config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.data.is_some() && self.sbm.is_some() {
            return Err("set either data or sbm, not both".into());
        }
        if let Some(spec) = &self.sbm {
            spec.validate().map_err(|e| e.to_string())?;
        }
        self.tasks()?;
        self.run.validate().map_err(|e| e.to_string())?;
        if self.repeats == Some(0) {
            return Err("repeats must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return Err("jobs must be at least 1".into());
        }
        Ok(())
    }

    /// The configured task list, if any.
    pub fn tasks(&self) -> Result<Option<Vec<TaskKind>>, String> {
        let Some(specs) = &self.tasks else { return Ok(None) };
        if specs.is_empty() {
            return Err("task list is empty".into());
        }
        specs.iter().map(|t| t.resolve().map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>().map(Some)
    }
}
