//! Per-node teacher weighing and selection, and the distillation loop.
//!
//! Each epoch the weighing module scores every teacher for every node
//! (`ω`, from logits `ζ`). A siamese copy of it, moved only by an
//! exponential moving average, feeds an MLP whose max-normalized output is
//! Gumbel-sampled into binary selections `κ`. The selected teachers are
//! re-weighted by a softmax over their `ζ` (`λ`) and mixed into one target
//! distribution per node, which the student matches under a KL penalty.

mod modules;
mod trace;
mod train;

pub use modules::{
    closed_form_overhead_estimate, gumbel_keep, gumbel_noise, gumbel_relaxed_on_tape, gumbel_select_on_tape, harden,
    integrate, kappa_norm_on_tape, momentum_update, overhead_parameter_count, random_kappa, reweigh, select,
    topk_kappa, weigh, zeta_on_tape, Mlp, MlpVars, SelectParams, Selection, WeighParams,
};
pub use trace::{selection_stats, EpochRecord, SelectionCounter, SelectionStats, SelectionTrace};
pub use train::{
    run_distillation, run_fixed_target, run_supervised, run_was, DistillOutcome, Distiller, EpochLoss, RunMetrics,
    StepReport, Student, TrainOutcome, WasRun,
};
