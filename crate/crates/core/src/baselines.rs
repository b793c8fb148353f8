//! Teacher-combination strategies: the full weigh-and-select rule and the
//! variants it is compared against. All strategies share one training loop
//! and differ only in how `(κ, λ)` are produced from `(ω, ζ)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::was::{gumbel_select_on_tape, random_kappa, topk_kappa};

/// Top-k used by the ablation suite, capped at the teacher count.
pub const ABLATION_TOPK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Gumbel-sampled selection through the siamese MLP, re-softmax weights.
    Was,
    /// Every teacher, weight 1/K.
    AverageWeight,
    /// Bernoulli(0.5) selection, re-softmax weights.
    RandomSelect,
    /// Every teacher, softmax weights.
    SelectAll,
    /// The k highest-ω teachers, re-softmax weights.
    ImportanceTopk(usize),
    /// Selection from the max-normalized siamese softmax, no MLP.
    WasNoMlp,
    /// Selection as in `Was`, but `λ = κ ⊙ ω` without renormalization.
    WasNoReweigh,
}

impl Strategy {
    /// The seven strategies compared by the ablation suite for `k` teachers.
    pub fn ablation_suite(k: usize) -> Vec<Strategy> {
        vec![
            Strategy::Was,
            Strategy::AverageWeight,
            Strategy::RandomSelect,
            Strategy::SelectAll,
            Strategy::ImportanceTopk(ABLATION_TOPK.min(k)),
            Strategy::WasNoMlp,
            Strategy::WasNoReweigh,
        ]
    }

    /// Whether selections come from Gumbel sampling of `κ_norm`.
    pub fn samples_gumbel(self) -> bool {
        matches!(self, Strategy::Was | Strategy::WasNoMlp | Strategy::WasNoReweigh)
    }

    pub fn uses_mlp(self) -> bool {
        matches!(self, Strategy::Was | Strategy::WasNoReweigh)
    }

    pub fn validate(self, teachers: usize) -> Result<()> {
        match self {
            Strategy::ImportanceTopk(k) if k == 0 || k > teachers => {
                Err(Error::invalid(format!("top-k strategy needs 1 <= k <= {teachers} teachers, got k = {k}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Was => f.write_str("was"),
            Strategy::AverageWeight => f.write_str("average"),
            Strategy::RandomSelect => f.write_str("random"),
            Strategy::SelectAll => f.write_str("all"),
            Strategy::ImportanceTopk(k) => write!(f, "topk{k}"),
            Strategy::WasNoMlp => f.write_str("was-no-mlp"),
            Strategy::WasNoReweigh => f.write_str("was-no-reweigh"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `was`, `average`, `random`, `all`, `topk` (k = 3), `topk<k>`,
    /// `was-no-mlp` and `was-no-reweigh`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "was" => Strategy::Was,
            "average" => Strategy::AverageWeight,
            "random" => Strategy::RandomSelect,
            "all" => Strategy::SelectAll,
            "topk" => Strategy::ImportanceTopk(ABLATION_TOPK),
            "was-no-mlp" => Strategy::WasNoMlp,
            "was-no-reweigh" => Strategy::WasNoReweigh,
            other => match other.strip_prefix("topk").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Strategy::ImportanceTopk(k),
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown strategy {other:?} (expected was, average, random, all, topk, topk<k>, was-no-mlp or was-no-reweigh)"
                    )))
                }
            },
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// `(κ, λ)` recorded on a tape, plus the `κ_norm` reported in traces.
pub(crate) struct Combined {
    pub kappa: Var,
    pub lambda: Var,
    pub kappa_norm: Tensor,
}

/// Produces `(κ, λ)` for `strategy` on `tape`.
///
/// `kappa_norm` must be given exactly when the strategy samples Gumbel
/// selections. `omega` must be `softmax(zeta)`.
pub(crate) fn combine_on_tape(
    tape: &mut Tape,
    strategy: Strategy,
    zeta: Var,
    omega: Var,
    kappa_norm: Option<Var>,
    tau_gumbel: f64,
    rng: &mut Rng,
) -> Result<Combined> {
    let shape = tape.value(zeta).shape().to_vec();
    let (n, k) = (shape[0], shape[1]);
    strategy.validate(k)?;
    if strategy.samples_gumbel() {
        let kn = kappa_norm.ok_or_else(|| Error::invalid(format!("{strategy} needs selection probabilities")))?;
        let kappa = gumbel_select_on_tape(tape, kn, tau_gumbel, rng);
        let lambda = if strategy == Strategy::WasNoReweigh {
            tape.mul(kappa, omega)
        } else {
            tape.weighted_softmax(zeta, kappa)
        };
        let kappa_norm = tape.value(kn).clone();
        return Ok(Combined { kappa, lambda, kappa_norm });
    }
    let fixed = |tape: &mut Tape, kappa: Tensor, kappa_norm: Tensor| {
        let kappa = tape.constant(kappa);
        let lambda = tape.weighted_softmax(zeta, kappa);
        Combined { kappa, lambda, kappa_norm }
    };
    Ok(match strategy {
        Strategy::AverageWeight => Combined {
            kappa: tape.constant(Tensor::full(&[n, k], 1.0)),
            lambda: tape.constant(Tensor::full(&[n, k], 1.0 / k as f64)),
            kappa_norm: Tensor::full(&[n, k], 1.0),
        },
        Strategy::SelectAll => fixed(tape, Tensor::full(&[n, k], 1.0), Tensor::full(&[n, k], 1.0)),
        Strategy::RandomSelect => fixed(tape, random_kappa(n, k, rng), Tensor::full(&[n, k], 0.5)),
        Strategy::ImportanceTopk(top) => {
            let kappa = topk_kappa(tape.value(omega), top)?;
            fixed(tape, kappa.clone(), kappa)
        }
        Strategy::Was | Strategy::WasNoMlp | Strategy::WasNoReweigh => unreachable!("handled above"),
    })
}

/// Stand-alone `(κ, λ)` for `strategy` from importance weights `omega` and
/// logits `zeta` (`n x K`). `kappa_norm_fn` supplies selection
/// probabilities and is only called by the Gumbel-sampling strategies.
pub fn strategy_combine(
    strategy: Strategy,
    omega: &Tensor,
    zeta: &Tensor,
    kappa_norm_fn: impl FnOnce() -> Tensor,
    tau_gumbel: f64,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    if omega.shape() != zeta.shape() || omega.shape().len() != 2 {
        return Err(Error::Shape {
            op: "strategy_combine",
            left: omega.shape().to_vec(),
            right: zeta.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let z = tape.constant(zeta.clone());
    let w = tape.constant(omega.clone());
    let kn = if strategy.samples_gumbel() {
        let kn = kappa_norm_fn();
        if kn.shape() != omega.shape() {
            return Err(Error::Shape {
                op: "strategy_combine",
                left: omega.shape().to_vec(),
                right: kn.shape().to_vec(),
            });
        }
        Some(tape.constant(kn))
    } else {
        None
    };
    let c = combine_on_tape(&mut tape, strategy, z, w, kn, tau_gumbel, rng)?;
    Ok((tape.value(c.kappa).clone(), tape.value(c.lambda).clone()))
}
