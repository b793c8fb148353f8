//! Multi-teacher distillation for graph neural networks with per-node
//! teacher weighing and selection.
//!
//! Pipeline: pre-train one GCN teacher per self-supervised task
//! ([`tasks`]), freeze each teacher's class distributions into a
//! [`tasks::TeacherBank`], then train a student against a per-node
//! mixture of those distributions ([`was`]).

pub mod baselines;
pub mod config;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod numerics;
pub mod rng;
pub mod tasks;
pub mod was;

pub use config::RunConfig;
pub use error::{Error, Result};
