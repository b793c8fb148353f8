//! Self-supervised teacher pre-training, linear probing, and the frozen
//! teacher bank.

mod bank;
mod pretrain;
mod probe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bank::{build_teacher_bank, parse_dists, render_dists, TeacherBank, TeacherEntry, TeacherRecord};
pub use pretrain::{pretrain_teacher, task_grad_check, PretrainOutcome};
pub use probe::{linear_probe, ProbeOutcome};

/// Default cluster count for CLU and part count for PAR.
pub const DEFAULT_CLUSTERS: usize = 10;
/// Default number of PAIRDIS distance classes.
pub const DEFAULT_MAX_HOP: usize = 4;
/// Default pairs sampled per node per epoch for the pairwise tasks.
pub const DEFAULT_PAIRS_PER_NODE: usize = 4;

/// A node-level pre-training task with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskKind {
    /// Mutual information between node embeddings and a graph summary.
    Dgi,
    /// Predict k-means cluster ids of the raw features.
    Clu { k: usize },
    /// Predict graph-partition ids.
    Par { parts: usize },
    /// Regress pairwise feature cosine similarity.
    PairSim { pairs_per_node: usize },
    /// Classify pairwise shortest-path distance.
    PairDis { max_hop: usize, pairs_per_node: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Dgi => "dgi",
            TaskKind::Clu { .. } => "clu",
            TaskKind::Par { .. } => "par",
            TaskKind::PairSim { .. } => "pairsim",
            TaskKind::PairDis { .. } => "pairdis",
        }
    }

    /// The five tasks with default hyperparameters.
    pub fn all() -> Vec<TaskKind> {
        ["dgi", "clu", "par", "pairsim", "pairdis"].iter().map(|s| s.parse().expect("known task")).collect()
    }

    /// Parses a comma-separated task list such as `dgi,clu,par`.
    pub fn parse_list(list: &str) -> Result<Vec<TaskKind>> {
        let tasks =
            list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
        if tasks.is_empty() {
            return Err(Error::invalid("task list is empty"));
        }
        Ok(tasks)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dgi" => Ok(TaskKind::Dgi),
            "clu" => Ok(TaskKind::Clu { k: DEFAULT_CLUSTERS }),
            "par" => Ok(TaskKind::Par { parts: DEFAULT_CLUSTERS }),
            "pairsim" => Ok(TaskKind::PairSim { pairs_per_node: DEFAULT_PAIRS_PER_NODE }),
            "pairdis" => Ok(TaskKind::PairDis { max_hop: DEFAULT_MAX_HOP, pairs_per_node: DEFAULT_PAIRS_PER_NODE }),
            other => {
                Err(Error::invalid(format!("unknown task {other:?} (expected dgi, clu, par, pairsim or pairdis)")))
            }
        }
    }
}
